"""CSV/JSON readers and writers for spectra, observations and fit reports.

Floats are written with ``repr`` so every value survives a round trip
exactly. Reports are wrapped in a self-describing envelope (tool version,
input digest, units).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .constants import MU_B_MHZ_PER_G
from .fitting import FrequencyObservation, HamiltonianFitReport, PeakFitReport
from .lineshape import LorentzianPeak, Spectrum
from .spin import CrossingPoint, FieldPoint, SpinSystemParams, Transition

SPECTRUM_HEADER = ["frequency_mhz", "intensity"]
OBS_HEADER = ["b_gauss", "theta_deg", "phi_deg", "ms_from", "ms_to", "mi", "frequency_mhz", "sigma_mhz"]
CENTERS_HEADER = ["b_gauss", "theta_deg", "phi_deg", "frequency_mhz"]

UNITS = {
    "energy": "MHz",
    "frequency": "MHz",
    "field": "G",
    "angle": "deg",
    "lifetime": "ns",
    "mu_b": f"{MU_B_MHZ_PER_G!r} MHz/G",
}


class DataError(ValueError):
    """Malformed input data."""


def fmt(x) -> str:
    return repr(float(x))


def _read_rows(path):
    text = Path(path).read_text()
    rows = [(n, row) for n, row in enumerate(csv.reader(io.StringIO(text)), start=1) if row]
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows


def _floats(path, lineno, row, width):
    if len(row) != width:
        raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
    try:
        values = [float(v) for v in row]
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
    if not all(math.isfinite(v) for v in values):
        raise DataError(f"{path}:{lineno}: non-finite value")
    return values


# spectra ------------------------------------------------------------------


def load_spectrum(path) -> Spectrum:
    """Read ``frequency_mhz,intensity[,sigma]`` CSV into a :class:`Spectrum`."""
    rows = _read_rows(path)
    (_, header), body = rows[0], rows[1:]
    header = [h.strip() for h in header]
    if header not in (SPECTRUM_HEADER, SPECTRUM_HEADER + ["sigma"]):
        raise DataError(f"{path}:1: header must be frequency_mhz,intensity[,sigma]")
    if not body:
        raise DataError(f"{path}: no data rows")
    data = []
    for lineno, row in body:
        values = _floats(path, lineno, row, len(header))
        if data and values[0] <= data[-1][0]:
            raise DataError(
                f"{path}:{lineno}: frequency {values[0]!r} not strictly increasing"
            )
        if len(values) == 3 and values[2] <= 0:
            raise DataError(f"{path}:{lineno}: sigma must be positive")
        data.append(values)
    arr = np.array(data)
    sigma = arr[:, 2] if arr.shape[1] == 3 else None
    return Spectrum(arr[:, 0], arr[:, 1], sigma)


def dump_spectrum(spectrum: Spectrum) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    has_sigma = spectrum.sigma is not None
    w.writerow(SPECTRUM_HEADER + (["sigma"] if has_sigma else []))
    for k in range(len(spectrum)):
        row = [fmt(spectrum.frequencies[k]), fmt(spectrum.intensities[k])]
        if has_sigma:
            row.append(fmt(spectrum.sigma[k]))
        w.writerow(row)
    return out.getvalue()


def save_spectrum(spectrum: Spectrum, path) -> None:
    Path(path).write_text(dump_spectrum(spectrum))


# observations ---------------------------------------------------------------


def _field(b, theta, phi, path, lineno) -> FieldPoint:
    try:
        return FieldPoint(b, theta, phi)
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: {exc}") from None


def load_observations(path) -> list[FrequencyObservation]:
    rows = _read_rows(path)
    if [h.strip() for h in rows[0][1]] != OBS_HEADER:
        raise DataError(f"{path}:1: header must be {','.join(OBS_HEADER)}")
    out = []
    for lineno, row in rows[1:]:
        b, th, ph, msf, mst, mi, freq, sig = _floats(path, lineno, row, len(OBS_HEADER))
        try:
            out.append(
                FrequencyObservation(_field(b, th, ph, path, lineno), (int(msf), int(mst), mi), freq, sig)
            )
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    if not out:
        raise DataError(f"{path}: no data rows")
    return out


def dump_observations(observations) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(OBS_HEADER)
    for o in observations:
        msf, mst, mi = o.transition_label
        w.writerow([
            fmt(o.field.magnitude), fmt(o.field.theta), fmt(o.field.phi),
            str(msf), str(mst), fmt(mi), fmt(o.frequency), fmt(o.sigma),
        ])
    return out.getvalue()


def save_observations(observations, path) -> None:
    Path(path).write_text(dump_observations(observations))


def load_centers(path, default_sigma: float = 5.0):
    """Read ``b_gauss,theta_deg,phi_deg,frequency_mhz[,sigma_mhz]`` peak centres."""
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0][1]]
    if header not in (CENTERS_HEADER, CENTERS_HEADER + ["sigma_mhz"]):
        raise DataError(f"{path}:1: header must be {','.join(CENTERS_HEADER)}[,sigma_mhz]")
    out = []
    for lineno, row in rows[1:]:
        values = _floats(path, lineno, row, len(header))
        sig = values[4] if len(values) == 5 else default_sigma
        out.append((_field(*values[:3], path, lineno), values[3], sig))
    if not out:
        raise DataError(f"{path}: no data rows")
    return out


# structured objects -------------------------------------------------------


def _label(lab):
    return [int(lab[0]), float(lab[1])]


def params_to_dict(p: SpinSystemParams) -> dict:
    return {"D": p.D, "E": p.E, "A": p.A, "g": p.g, "manifold": p.manifold.value}


def params_from_dict(d) -> SpinSystemParams:
    return SpinSystemParams(D=d["D"], E=d["E"], A=d["A"], g=d["g"], manifold=d["manifold"])


def field_to_dict(f: FieldPoint) -> dict:
    return {"b_gauss": f.magnitude, "theta_deg": f.theta, "phi_deg": f.phi}


def field_from_dict(d) -> FieldPoint:
    return FieldPoint(d["b_gauss"], d["theta_deg"], d["phi_deg"])


def transition_to_dict(t: Transition) -> dict:
    return {
        "from": _label(t.from_label),
        "to": _label(t.to_label),
        "frequency_mhz": t.frequency,
        "strength": t.strength,
        "manifold": t.manifold.value,
    }


def crossing_to_dict(c: CrossingPoint) -> dict:
    return {
        "b_gauss": c.field,
        "level_pair": [_label(c.level_pair[0]), _label(c.level_pair[1])],
        "min_gap_mhz": c.min_gap,
    }


def crossing_from_dict(d) -> CrossingPoint:
    a, b = d["level_pair"]
    return CrossingPoint(d["b_gauss"], ((int(a[0]), float(a[1])), (int(b[0]), float(b[1]))), d["min_gap_mhz"])


def observation_to_dict(o: FrequencyObservation) -> dict:
    return {
        "field": field_to_dict(o.field),
        "label": [o.transition_label[0], o.transition_label[1], o.transition_label[2]],
        "frequency_mhz": o.frequency,
        "sigma_mhz": o.sigma,
    }


def observation_from_dict(d) -> FrequencyObservation:
    return FrequencyObservation(field_from_dict(d["field"]), tuple(d["label"]), d["frequency_mhz"], d["sigma_mhz"])


def peak_report_to_dict(r: PeakFitReport) -> dict:
    return {
        "baseline": r.baseline,
        "baseline_sigma": r.baseline_sigma,
        "peaks": [
            {"center_mhz": p.center, "fwhm_mhz": p.fwhm, "amplitude": p.amplitude,
             "sigma": {"center_mhz": s["center"], "fwhm_mhz": s["fwhm"], "amplitude": s["amplitude"]}}
            for p, s in zip(r.peaks, r.peak_sigmas)
        ],
        "residual_rms": r.residual_rms,
        "chi2": r.chi2,
        "dof": r.dof,
        "iterations": r.iterations,
        "converged": r.converged,
        "last_step": r.last_step,
        "message": r.message,
    }


def peak_report_from_dict(d) -> PeakFitReport:
    return PeakFitReport(
        baseline=d["baseline"],
        peaks=[LorentzianPeak(p["center_mhz"], p["fwhm_mhz"], p["amplitude"]) for p in d["peaks"]],
        baseline_sigma=d["baseline_sigma"],
        peak_sigmas=[
            {"center": p["sigma"]["center_mhz"], "fwhm": p["sigma"]["fwhm_mhz"], "amplitude": p["sigma"]["amplitude"]}
            for p in d["peaks"]
        ],
        residual_rms=d["residual_rms"],
        chi2=d["chi2"],
        dof=d["dof"],
        iterations=d["iterations"],
        converged=d["converged"],
        last_step=d["last_step"],
        message=d["message"],
    )


def ham_report_to_dict(r: HamiltonianFitReport) -> dict:
    return {
        "params": params_to_dict(r.params),
        "free": list(r.free),
        "sigma": dict(r.sigma),
        "covariance": np.asarray(r.covariance).tolist(),
        "chi2": r.chi2,
        "dof": r.dof,
        "reduced_chi2": r.reduced_chi2,
        "converged": r.converged,
        "iterations": r.iterations,
        "n_obs": r.n_obs,
        "excluded": r.excluded,
        "message": r.message,
    }


def ham_report_from_dict(d) -> HamiltonianFitReport:
    return HamiltonianFitReport(
        params=params_from_dict(d["params"]),
        free=tuple(d["free"]),
        sigma=dict(d["sigma"]),
        covariance=np.array(d["covariance"], dtype=float),
        chi2=d["chi2"],
        dof=d["dof"],
        converged=d["converged"],
        iterations=d["iterations"],
        n_obs=d["n_obs"],
        excluded=d["excluded"],
        message=d["message"],
    )


# report envelope ------------------------------------------------------------

_CODECS = {
    "peak_fit": (PeakFitReport, peak_report_to_dict, peak_report_from_dict),
    "hamiltonian_fit": (HamiltonianFitReport, ham_report_to_dict, ham_report_from_dict),
}


def digest(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def report_envelope(kind: str, payload: dict, *, input_digest: str | None = None, timestamp: bool = False) -> dict:
    """Wrap a report payload; ``created`` stays ``None`` unless requested so output is reproducible."""
    return {
        "tool": "nvesr",
        "version": __version__,
        "kind": kind,
        "input_sha256": input_digest,
        "created": datetime.now(timezone.utc).isoformat() if timestamp else None,
        "units": UNITS,
        "report": payload,
    }


def serialize_report(report, *, input_digest=None, timestamp=False) -> str:
    for kind, (cls, enc, _) in _CODECS.items():
        if isinstance(report, cls):
            env = report_envelope(kind, enc(report), input_digest=input_digest, timestamp=timestamp)
            return dumps(env)
    raise TypeError(f"cannot serialise {type(report).__name__}")


def parse_report(text: str):
    """Inverse of :func:`serialize_report`; returns ``(envelope, report)``."""
    env = json.loads(text)
    try:
        _, _, dec = _CODECS[env["kind"]]
    except KeyError:
        raise DataError(f"unknown report kind {env.get('kind')!r}") from None
    return env, dec(env["report"])


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
