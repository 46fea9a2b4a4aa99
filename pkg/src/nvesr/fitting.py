"""Inverse problems: Lorentzian multiplets and Hamiltonian parameters.

``fit_lorentzian_multiplet`` extracts dip centres, widths and depths from a
spectrum; ``fit_hamiltonian_params`` fits ``D, g, A, E`` to labelled line
frequencies measured across a field sweep.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks, peak_widths

from . import kernels
from .constants import BASIS_LABELS, MU_B_MHZ_PER_G
from .lineshape import LorentzianPeak, Spectrum
from .lsq import FitError, RankDeficientError, damped_least_squares, parameter_uncertainties
from .spin import (
    FieldPoint,
    SpinSystemParams,
    _align_degenerate,
    _field_sign,
    build_hamiltonians,
    label_levels,
)

logger = logging.getLogger(__name__)

FWHM_BOUNDS = (1.0, 500.0)
PARAM_NAMES = ("D", "g", "A", "E")


# ---------------------------------------------------------------------------
# Lorentzian multiplets
# ---------------------------------------------------------------------------


@dataclass
class PeakFitReport:
    baseline: float
    peaks: list[LorentzianPeak]
    baseline_sigma: float
    peak_sigmas: list[dict]
    residual_rms: float
    chi2: float
    dof: int
    iterations: int
    converged: bool
    last_step: float = 0.0
    message: str = ""


def _noise_floor(y: np.ndarray) -> float:
    d = np.diff(y)
    if d.size == 0:
        return 0.0
    return 1.4826 * float(np.median(np.abs(d - np.median(d)))) / math.sqrt(2.0)


def initial_peak_guess(spectrum: Spectrum, n_peaks: int) -> list[LorentzianPeak]:
    """Starting dips from prominent minima of a lightly smoothed spectrum.

    When fewer minima than ``n_peaks`` are found, the widest dips are split
    into evenly spaced components across their half-width.
    """
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    f, y = spectrum.frequencies, spectrum.intensities
    if f.size < 4 * n_peaks:
        raise ValueError(f"spectrum has {f.size} points; need at least {4 * n_peaks}")
    window = max(3, (f.size // 50) | 1)
    smooth = uniform_filter1d(y, window, mode="nearest")
    baseline = float(np.percentile(smooth, 90))
    depth = baseline - smooth
    noise = max(_noise_floor(y), 1e-12 * max(abs(baseline), 1.0))
    if depth.max() <= 3.0 * noise:
        raise ValueError("spectrum is flat: no dip above the noise floor")

    idx, props = find_peaks(depth, prominence=3.0 * noise)
    if idx.size == 0:
        idx = np.array([int(np.argmax(depth))])
        props = {"prominences": np.array([depth[idx[0]]])}
    order = np.argsort(-props["prominences"], kind="stable")[:n_peaks]
    idx = idx[order]
    widths = peak_widths(depth, idx, rel_height=0.5)[0]
    step = np.gradient(f)[idx]
    fwhm = np.clip(widths * step, *FWHM_BOUNDS)

    found = [
        LorentzianPeak(float(f[i]), float(w), float(max(depth[i], noise)))
        for i, w in zip(idx, fwhm)
    ]
    # unresolved blends: give extra components to the widest dips
    counts = [1] * len(found)
    for _ in range(n_peaks - len(found)):
        j = max(range(len(found)), key=lambda k: found[k].fwhm / counts[k])
        counts[j] += 1
    guesses = []
    for dip, k in zip(found, counts):
        for j in range(k):
            guesses.append(
                LorentzianPeak(
                    dip.center + (j - (k - 1) / 2) * dip.fwhm / k,
                    float(np.clip(dip.fwhm / k, *FWHM_BOUNDS)),
                    dip.amplitude * (0.7 if k > 1 else 1.0),
                )
            )
    return sorted(guesses, key=lambda p: p.center)


def _pack(baseline, peaks):
    x = [baseline]
    for p in peaks:
        x += [p.center, p.fwhm, p.amplitude]
    return np.array(x, dtype=float)


def fit_lorentzian_multiplet(
    spectrum: Spectrum,
    n_peaks: int,
    init: Sequence[LorentzianPeak] | None = None,
    *,
    baseline: float | None = None,
    max_iter: int = 200,
) -> PeakFitReport:
    """Least-squares fit of ``baseline - sum of n_peaks Lorentzian dips``.

    Parameter errors are the residual-scaled square roots of the diagonal
    of the inverse normal matrix.

    Raises:
        FitError: the normal matrix is singular, typically two dips collapsed
            onto each other.
    """
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    if init is None:
        init = initial_peak_guess(spectrum, n_peaks)
    elif len(init) != n_peaks:
        raise ValueError(f"init has {len(init)} peaks, expected {n_peaks}")
    f, y = spectrum.frequencies, spectrum.intensities
    w = 1.0 / spectrum.sigma if spectrum.sigma is not None else np.ones_like(y)
    if baseline is None:
        baseline = float(np.percentile(y, 90))
    x0 = _pack(baseline, init)

    amp_floor = 1e-12 * max(abs(baseline), 1.0)
    lower = [-np.inf] + [-np.inf, FWHM_BOUNDS[0], amp_floor] * n_peaks
    upper = [np.inf] + [np.inf, FWHM_BOUNDS[1], np.inf] * n_peaks
    xscale = np.full(x0.size, 1e-12)
    xscale[0] = max(abs(baseline), 1e-12)

    def unpack(x):
        return x[0], x[1::3], x[2::3], x[3::3]

    def residuals(x):
        b, c, fw, a = unpack(x)
        return (kernels.lorentzian_model(f, b, c, fw, a) - y) * w

    def jacobian(x, r):
        _, c, fw, a = unpack(x)
        return kernels.lorentzian_jacobian(f, c, fw, a) * w[:, None]

    # step-only convergence so a converged report always ends on a tiny step
    res = damped_least_squares(
        residuals, x0, jacobian, lower=lower, upper=upper, xscale=xscale,
        max_iter=max_iter, ftol=0.0,
    )
    b, c, fw, a = unpack(res.x)
    try:
        sig, _ = parameter_uncertainties(res.jacobian, res.residuals)
    except RankDeficientError as exc:
        i, j = _collapsed_pair(c, fw)
        raise FitError(
            f"singular normal matrix: peaks {i} and {j} collapsed "
            f"(centers {c[i]:.6g} and {c[j]:.6g} MHz)"
        ) from exc
    if not res.converged:
        logger.warning("peak fit did not converge: %s", res.message)

    order = np.argsort(c, kind="stable")
    peaks = [LorentzianPeak(float(c[k]), float(fw[k]), float(a[k])) for k in order]
    peak_sigmas = [
        {"center": float(sig[1 + 3 * k]), "fwhm": float(sig[2 + 3 * k]), "amplitude": float(sig[3 + 3 * k])}
        for k in order
    ]
    raw = res.residuals / w
    return PeakFitReport(
        baseline=float(b),
        peaks=peaks,
        baseline_sigma=float(sig[0]),
        peak_sigmas=peak_sigmas,
        residual_rms=float(np.sqrt(np.mean(raw**2))),
        chi2=res.chi2,
        dof=int(y.size - res.x.size),
        iterations=res.iterations,
        converged=res.converged,
        last_step=res.last_step,
        message=res.message,
    )


def _collapsed_pair(centers, fwhms):
    best, pair = np.inf, (0, 0)
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            sep = abs(centers[i] - centers[j]) / (0.5 * (fwhms[i] + fwhms[j]))
            if sep < best:
                best, pair = sep, (i, j)
    return pair


# ---------------------------------------------------------------------------
# Hamiltonian parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyObservation:
    """A measured line: ``(m_s_from, m_s_to, m_I)`` label, frequency and error (MHz)."""

    field: FieldPoint
    transition_label: tuple[int, int, float]
    frequency: float
    sigma: float

    def __post_init__(self):
        ms_from, ms_to, mi = self.transition_label
        object.__setattr__(self, "transition_label", (int(ms_from), int(ms_to), float(mi)))
        if not self.sigma > 0:
            raise ValueError("observation sigma must be positive")
        if (int(ms_from), float(mi)) not in BASIS_LABELS or (int(ms_to), float(mi)) not in BASIS_LABELS:
            raise ValueError(f"invalid transition label {self.transition_label}")


@dataclass
class HamiltonianFitReport:
    """Fitted parameters with 1-sigma errors.

    ``covariance`` is ``(J^T W J)^-1`` over the free parameters, i.e. it
    trusts the observation sigmas; multiply by ``reduced_chi2`` for the
    residual-scaled version.
    """

    params: SpinSystemParams
    free: tuple[str, ...]
    sigma: dict
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool
    iterations: int
    n_obs: int
    excluded: int = 0
    message: str = ""

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof


def _group_by_field(observations):
    fields, index = [], {}
    groups = []
    for k, obs in enumerate(observations):
        if obs.field not in index:
            index[obs.field] = len(fields)
            fields.append(obs.field)
        groups.append(index[obs.field])
    return fields, np.array(groups)


def labelled_energies(params: SpinSystemParams, fields: Sequence[FieldPoint]) -> np.ndarray:
    """Energies ``(len(fields), 6)`` in product-basis label order.

    Labels come from :func:`nvesr.spin.label_levels` at each field, so the
    result does not depend on a sweep history.
    """
    H = build_hamiltonians(params, fields)
    w_all, v_all = kernels.eigh_batch(H)
    out = np.empty((len(fields), len(BASIS_LABELS)))
    eye = np.eye(len(BASIS_LABELS))
    for k, (w, v) in enumerate(zip(w_all, v_all)):
        v = _align_degenerate(w, v, eye)
        labels, _ = label_levels(w, v, _field_sign(fields[k]))
        for j, lab in enumerate(labels):
            out[k, BASIS_LABELS.index(lab)] = w[j]
    return out


def _label_columns(observations):
    cols_from, cols_to = [], []
    for obs in observations:
        ms_from, ms_to, mi = obs.transition_label
        cols_from.append(BASIS_LABELS.index((ms_from, mi)))
        cols_to.append(BASIS_LABELS.index((ms_to, mi)))
    return np.array(cols_from), np.array(cols_to)


def model_frequencies(params: SpinSystemParams, observations: Sequence[FrequencyObservation]) -> np.ndarray:
    """Model line frequency (MHz) for each observation's label and field."""
    fields, groups = _group_by_field(observations)
    energies = labelled_energies(params, fields)
    cf, ct = _label_columns(observations)
    return np.abs(energies[groups, ct] - energies[groups, cf])


def synthetic_observations(
    params: SpinSystemParams,
    fields: Sequence[FieldPoint],
    *,
    sigma: float = 5.0,
    seed: int | None = 0,
    labels: Sequence[tuple[int, int, float]] | None = None,
) -> list[FrequencyObservation]:
    """Model lines at ``fields`` with Gaussian noise of width ``sigma``.

    ``seed=None`` returns noiseless frequencies (still tagged with ``sigma``).
    """
    labels = ESR_LABELS if labels is None else labels
    clean = [FrequencyObservation(fp, lab, 0.0, sigma) for fp in fields for lab in labels]
    freqs = model_frequencies(params, clean)
    if seed is not None:
        freqs = freqs + np.random.default_rng(seed).normal(0.0, sigma, freqs.shape)
    return [
        FrequencyObservation(o.field, o.transition_label, float(f), sigma)
        for o, f in zip(clean, freqs)
    ]


def _with_values(base: SpinSystemParams, names, values) -> SpinSystemParams:
    return base.replace(**{n: float(v) for n, v in zip(names, values)})


_ENERGY_PARAMS = ("D", "A", "E")


def _fd_steps(params: SpinSystemParams, names, values, rel_step):
    # D, A and E share one energy scale: stepping a small E relative to itself
    # drowns the difference quotient in eigenvalue roundoff
    energy = max(abs(params.D), abs(params.A), abs(params.E), 1.0)
    scale = [energy if n in _ENERGY_PARAMS else max(abs(v), 1e-3) for n, v in zip(names, values)]
    return rel_step * np.asarray(scale)


def frequency_jacobian(
    params: SpinSystemParams,
    observations: Sequence[FrequencyObservation],
    names: Sequence[str] = PARAM_NAMES,
    rel_step: float = 1e-6,
) -> np.ndarray:
    """Central-difference derivatives of model frequencies w.r.t. ``names``."""
    fields, groups = _group_by_field(observations)
    cf, ct = _label_columns(observations)
    x = np.array([getattr(params, n) for n in names], dtype=float)
    h = _fd_steps(params, names, x, rel_step)
    jac = np.empty((len(observations), len(names)))
    for k in range(len(names)):
        cols = []
        for sgn in (1.0, -1.0):
            xs = x.copy()
            xs[k] += sgn * h[k]
            # E only enters squared at axial fields; evaluate |E| to stay valid at E=0
            p = _with_values(params, names, np.where(np.array(names) == "E", np.abs(xs), xs))
            e = labelled_energies(p, fields)
            cols.append(np.abs(e[groups, ct] - e[groups, cf]))
        jac[:, k] = (cols[0] - cols[1]) / (2.0 * h[k])
    return jac


def _free_names(free_mask) -> tuple[str, ...]:
    if free_mask is None:
        return PARAM_NAMES
    if isinstance(free_mask, Mapping):
        names = tuple(n for n in PARAM_NAMES if free_mask.get(n, False))
    else:
        names = tuple(n for n in PARAM_NAMES if n in set(free_mask))
        unknown = set(free_mask) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown parameter(s) {sorted(unknown)}")
    if not names:
        raise ValueError("no free parameters")
    return names


def crossing_field(params: SpinSystemParams) -> float:
    """Field (G) where m_s=0 and m_s=-1 meet for an axial field, ignoring E and A."""
    return params.D / (params.g * MU_B_MHZ_PER_G)


def fit_hamiltonian_params(
    observations: Sequence[FrequencyObservation],
    init: SpinSystemParams,
    free_mask=None,
    *,
    exclude_crossing: float | None = None,
    max_iter: int = 500,
) -> HamiltonianFitReport:
    """Fit the free subset of ``D, g, A, E`` to labelled line frequencies.

    Args:
        observations: measured lines; each keeps its own field orientation.
        init: starting parameters; fixed parameters keep these values.
        free_mask: names (or ``{name: bool}``) of parameters to vary; all four
            by default.
        exclude_crossing: if given, drop observations within this many gauss
            of the m_s=0/-1 level crossing of ``init``.
        max_iter: iteration cap of the damped least-squares loop.

    Raises:
        FitError: fewer observations than free parameters, or a singular
            Jacobian.
    """
    names = _free_names(free_mask)
    obs = list(observations)
    excluded = 0
    if exclude_crossing is not None:
        bc = crossing_field(init)
        kept = [o for o in obs if abs(o.field.magnitude - bc) > exclude_crossing]
        excluded = len(obs) - len(kept)
        obs = kept
    if len(obs) <= len(names):
        raise FitError(
            f"underdetermined: {len(obs)} observations for {len(names)} free parameters"
        )
    f_obs = np.array([o.frequency for o in obs])
    sig = np.array([o.sigma for o in obs])

    lower = np.array([{"D": 1e-9, "g": 1e-9, "A": -np.inf, "E": 0.0}[n] for n in names])
    x0 = np.array([getattr(init, n) for n in names], dtype=float)
    xscale = np.array([{"D": 1.0, "g": 1e-3, "A": 1.0, "E": 1.0}[n] for n in names])

    def residuals(x):
        return (model_frequencies(_with_values(init, names, x), obs) - f_obs) / sig

    def jacobian(x, r):
        return frequency_jacobian(_with_values(init, names, x), obs, names) / sig[:, None]

    res = damped_least_squares(
        residuals, x0, jacobian, lower=lower, xscale=xscale, max_iter=max_iter
    )
    try:
        sigmas, cov = parameter_uncertainties(
            res.jacobian, res.residuals, absolute_sigma=True, names=names
        )
    except RankDeficientError as exc:
        raise FitError(str(exc)) from exc
    if not res.converged:
        logger.warning("Hamiltonian fit did not converge: %s", res.message)
    return HamiltonianFitReport(
        params=_with_values(init, names, res.x),
        free=names,
        sigma={n: float(s) for n, s in zip(names, sigmas)},
        covariance=cov,
        chi2=res.chi2,
        dof=len(obs) - len(names),
        converged=res.converged,
        iterations=res.iterations,
        n_obs=len(obs),
        excluded=excluded,
        message=res.message,
    )


def initial_hamiltonian_guess(observations: Sequence[FrequencyObservation], manifold="excited") -> SpinSystemParams:
    """Rough ``D, g, A, E`` read directly off the data.

    ``D`` is the mean of the two lowest-field doublet centres, ``E`` half
    their separation, ``A`` the median intra-doublet splitting and ``g = 2``.
    """
    obs = list(observations)
    if not obs:
        raise ValueError("no observations")
    lowest = min(o.field.magnitude for o in obs)
    low = [o for o in obs if o.field.magnitude == lowest]
    centers = {}
    for ms_to in (1, -1):
        lines = [o.frequency for o in low if o.transition_label[:2] == (0, ms_to)]
        if lines:
            centers[ms_to] = float(np.mean(lines))
    if not centers:
        raise ValueError("no 0<->+-1 lines at the lowest field")
    D = float(np.mean(list(centers.values())))
    E = abs(centers[1] - centers[-1]) / 2 if len(centers) == 2 else 0.0

    splits = []
    by_key = {}
    for o in obs:
        by_key.setdefault((o.field, o.transition_label[:2]), {})[o.transition_label[2]] = o.frequency
    for pair in by_key.values():
        if len(pair) == 2:
            splits.append(abs(pair[0.5] - pair[-0.5]))
    A = float(np.median(splits)) if splits else 0.0
    return SpinSystemParams(D=D, E=E, A=A, g=2.0, manifold=manifold)


# ---------------------------------------------------------------------------
# Label assignment
# ---------------------------------------------------------------------------

ESR_LABELS = ((0, 1, 0.5), (0, 1, -0.5), (0, -1, 0.5), (0, -1, -0.5))


@dataclass
class AssignmentResult:
    observations: list[FrequencyObservation]
    unassigned: list[tuple[FieldPoint, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def auto_assign_labels(
    peak_centers,
    params_guess: SpinSystemParams,
    *,
    sigma: float = 5.0,
    labels: Sequence[tuple[int, int, float]] = ESR_LABELS,
) -> AssignmentResult:
    """Match measured line centres to the nearest model line at each field.

    ``peak_centers`` holds ``(FieldPoint, frequency)`` or
    ``(FieldPoint, frequency, sigma)`` tuples. A centre is assigned only if
    it lies strictly within half the smallest model line spacing of its
    nearest line; each model line takes at most one centre per field (the
    closest). Everything else is returned unassigned with a warning.
    """
    entries = []
    for item in peak_centers:
        fp, freq = item[0], float(item[1])
        sg = float(item[2]) if len(item) > 2 else sigma
        entries.append((fp, freq, sg))
    result = AssignmentResult([])
    if not entries:
        return result

    fields, groups = _group_by_field(
        [FrequencyObservation(fp, labels[0], freq, sg) for fp, freq, sg in entries]
    )
    energies = labelled_energies(params_guess, fields)
    cf = np.array([BASIS_LABELS.index((l[0], l[2])) for l in labels])
    ct = np.array([BASIS_LABELS.index((l[1], l[2])) for l in labels])
    model = np.abs(energies[:, ct] - energies[:, cf])

    assigned = {}
    for g, fp in enumerate(fields):
        lines = model[g]
        spacing = np.diff(np.sort(lines))
        half = 0.5 * spacing.min() if spacing.size else np.inf
        members = [k for k in range(len(entries)) if groups[k] == g]
        candidates = []
        for k in members:
            dist = np.abs(lines - entries[k][1])
            j = int(np.argmin(dist))
            if dist[j] < half and np.sum(dist < half) == 1:
                candidates.append((dist[j], k, j))
            else:
                result.unassigned.append((fp, entries[k][1]))
                result.warnings.append(
                    f"ambiguous line {entries[k][1]:.6g} MHz at B={fp.magnitude:.6g} G"
                )
        taken = set()
        for dist, k, j in sorted(candidates):
            if j in taken:
                result.unassigned.append((fp, entries[k][1]))
                result.warnings.append(
                    f"line {entries[k][1]:.6g} MHz at B={fp.magnitude:.6g} G competes for {labels[j]}"
                )
                continue
            taken.add(j)
            assigned[k] = FrequencyObservation(fp, labels[j], entries[k][1], entries[k][2])
    result.observations = [assigned[k] for k in sorted(assigned)]
    for msg in result.warnings:
        logger.info(msg)
    return result
