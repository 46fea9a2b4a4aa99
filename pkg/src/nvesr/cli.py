"""``nvesr`` command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fit did not converge
(the report is still written, with ``converged: false``).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import io as nio
from .constants import GS_FWHM_MHZ, MU_B_MHZ_PER_G, T0_NS, T1_NS
from .fitting import (
    PARAM_NAMES,
    auto_assign_labels,
    fit_hamiltonian_params,
    fit_lorentzian_multiplet,
    initial_hamiltonian_guess,
)
from .lineshape import LifetimeModel, LorentzianPeak, NoiseSpec, apply_noise, synthesize_spectrum
from .lsq import FitError
from .spin import (
    BASIS_LABELS,
    GS_PARAMS,
    FieldPoint,
    Manifold,
    default_params,
    field_sweep,
    find_crossings,
    sweep_levels,
    transitions_at,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOCONV = 0, 1, 2, 3

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _label_name(label) -> str:
    ms, mi = label
    return f"ms{ms:+d}_mi{'+' if mi > 0 else '-'}1/2"


def _parse_label(text: str):
    try:
        ms, mi = text.split(",")
        mi = mi.strip()
        mi_val = {"+1/2": 0.5, "1/2": 0.5, "-1/2": -0.5}.get(mi)
        if mi_val is None:
            mi_val = float(mi)
        label = (int(ms), mi_val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level label {text!r}; use e.g. '0,+1/2'") from None
    if label not in BASIS_LABELS:
        raise argparse.ArgumentTypeError(f"unknown level {text!r}")
    return label


def _parse_pair(text: str):
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"bad level pair {text!r}; use e.g. '0,+1/2:-1,+1/2'")
    return _parse_label(parts[0]), _parse_label(parts[1])


def _parse_peak(text: str) -> LorentzianPeak:
    try:
        c, w, a = (float(v) for v in text.split(":"))
        return LorentzianPeak(c, w, a)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad peak {text!r} ({exc}); use center:fwhm:amplitude") from None


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _params(args, manifold=None):
    p = default_params(manifold or args.manifold)
    changes = {k.upper() if k != "g" else k: getattr(args, k) for k in ("d", "g", "a", "e") if getattr(args, k) is not None}
    return p.replace(**changes) if changes else p


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


# subcommands ----------------------------------------------------------------


def cmd_levels(args) -> int:
    params = _params(args)
    fields = field_sweep(args.b_start, args.b_stop, args.b_step, args.theta, args.phi)
    sweep = sweep_levels(params, fields)
    header = ["b_gauss", "theta_deg", "phi_deg"]
    header += [f"energy_{_label_name(l)}_mhz" for l in BASIS_LABELS]
    header += [f"purity_{_label_name(l)}" for l in BASIS_LABELS]
    rows = [header]
    for k, fp in enumerate(fields):
        rows.append(
            [nio.fmt(fp.magnitude), nio.fmt(fp.theta), nio.fmt(fp.phi)]
            + [nio.fmt(x) for x in sweep.energies[k]]
            + [nio.fmt(x) for x in sweep.purity[k]]
        )
    _emit(_csv(rows), args.out)
    return EXIT_OK


def cmd_transitions(args) -> int:
    params = _params(args)
    fp = FieldPoint(args.b, args.theta, args.phi)
    drive = FieldPoint(1.0, args.drive_theta, args.drive_phi).vector
    lines = transitions_at(params, fp, drive, args.populated, strength_threshold=args.threshold)
    if args.format == "json":
        payload = {
            "field": nio.field_to_dict(fp),
            "params": nio.params_to_dict(params),
            "transitions": [nio.transition_to_dict(t) for t in lines],
            "units": nio.UNITS,
        }
        _emit(nio.dumps(payload), args.out)
    else:
        rows = [["b_gauss", "ms_from", "mi_from", "ms_to", "mi_to", "frequency_mhz", "strength", "manifold"]]
        for t in lines:
            rows.append([
                nio.fmt(fp.magnitude), t.from_label[0], nio.fmt(t.from_label[1]),
                t.to_label[0], nio.fmt(t.to_label[1]), nio.fmt(t.frequency),
                nio.fmt(t.strength), t.manifold.value,
            ])
        _emit(_csv(rows), args.out)
    return EXIT_OK


def cmd_crossings(args) -> int:
    params = _params(args)
    pairs = args.pair or [((0, 0.5), (-1, 0.5))]
    found = []
    for a, b in pairs:
        found += find_crossings(
            params, (args.b_start, args.b_stop), (args.theta, args.phi), (a, b),
            step=args.b_step, resolution=args.resolution,
        )
    payload = {
        "params": nio.params_to_dict(params),
        "orientation": {"theta_deg": args.theta, "phi_deg": args.phi},
        "field_range_gauss": [args.b_start, args.b_stop],
        "crossings": [nio.crossing_to_dict(c) for c in sorted(found, key=lambda c: c.field)],
        "units": nio.UNITS,
    }
    _emit(nio.dumps(payload), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    fp = FieldPoint(args.b, args.theta, args.phi)
    drive = FieldPoint(1.0, args.drive_theta, args.drive_phi).vector
    manifolds = ["excited", "ground"] if args.manifold == "both" else [args.manifold]
    lines, depth = [], {}
    for m in manifolds:
        params = _params(args, m) if args.manifold != "both" or m == "excited" else GS_PARAMS
        amp = args.amplitude if Manifold.parse(m) is Manifold.EXCITED else args.gs_amplitude
        for t in transitions_at(params, fp, drive, strength_threshold=args.threshold):
            lines.append(t)
            depth[(m, t.key)] = amp * (t.strength if args.weight_by_strength else 1.0)
    if args.fwhm is not None:
        linewidth = args.fwhm
    else:
        linewidth = LifetimeModel(args.t0, args.t1, args.tstar if args.tstar is not None else np.inf)
    grid = np.arange(args.f_start, args.f_stop + 0.5 * args.f_step, args.f_step)
    # one pass per manifold: GS and ES lines share level labels, hence keys
    clean = np.full(grid.shape, args.baseline)
    for m in manifolds:
        sub = [t for t in lines if t.manifold is Manifold.parse(m)]
        clean += synthesize_spectrum(
            sub, {t.key: depth[(m, t.key)] for t in sub}, grid,
            linewidth=linewidth, baseline=0.0, gs_fwhm=args.gs_fwhm,
        ).intensities
    noise = None
    if args.noise_sigma > 0 or args.noise_model == "poisson":
        noise = NoiseSpec(args.noise_model, args.noise_sigma, args.seed)
    spec = apply_noise(grid, clean, noise)
    _emit(nio.dump_spectrum(spec), args.out)
    return EXIT_OK


def cmd_fitpeaks(args) -> int:
    spectrum = nio.load_spectrum(args.spectrum)
    init = None
    if args.init:
        if len(args.init) != args.n_peaks:
            raise UsageError(f"--init given {len(args.init)} times for --n-peaks {args.n_peaks}")
        init = args.init
    report = fit_lorentzian_multiplet(spectrum, args.n_peaks, init, baseline=args.baseline, max_iter=args.max_iter)
    text = nio.serialize_report(report, input_digest=nio.digest([args.spectrum]), timestamp=args.timestamp)
    _emit(text, args.out)
    return EXIT_OK if report.converged else EXIT_NOCONV


def cmd_fitham(args) -> int:
    obs = nio.load_observations(args.obs)
    manifold = Manifold.parse(args.manifold)
    given = {n: getattr(args, f"init_{n.lower()}") for n in PARAM_NAMES}
    if any(v is None for v in given.values()):
        guess = initial_hamiltonian_guess(obs, manifold)
    else:
        guess = default_params(manifold)
    init = guess.replace(**{n: v for n, v in given.items() if v is not None})
    free = args.free.split(",") if args.free else None
    if free is not None:
        free = [f.strip() for f in free if f.strip()]
    report = fit_hamiltonian_params(
        obs, init, free, exclude_crossing=args.exclude_crossing, max_iter=args.max_iter
    )
    text = nio.serialize_report(report, input_digest=nio.digest([args.obs]), timestamp=args.timestamp)
    _emit(text, args.out)
    return EXIT_OK if report.converged else EXIT_NOCONV


def cmd_assign(args) -> int:
    centers = nio.load_centers(args.centers, default_sigma=args.sigma)
    params = _params(args)
    result = auto_assign_labels(centers, params, sigma=args.sigma)
    payload = {
        "params": nio.params_to_dict(params),
        "observations": [nio.observation_to_dict(o) for o in result.observations],
        "unassigned": [
            {"field": nio.field_to_dict(fp), "frequency_mhz": f} for fp, f in result.unassigned
        ],
        "warnings": list(result.warnings),
        "input_sha256": nio.digest([args.centers]),
        "units": nio.UNITS,
    }
    if args.obs_out:
        nio.save_observations(result.observations, args.obs_out)
    _emit(nio.dumps(payload), args.out)
    return EXIT_OK


# parser -----------------------------------------------------------------------


def _add_params(p, manifolds=("es", "gs")):
    p.add_argument("--manifold", choices=manifolds, default="es")
    p.add_argument("--d", type=float, help="zero-field splitting D (MHz)")
    p.add_argument("--g", type=float, help="electron g-factor")
    p.add_argument("--a", type=float, help="hyperfine constant A (MHz)")
    p.add_argument("--e", type=float, help="transverse anisotropy E (MHz)")


def _add_orientation(p):
    p.add_argument("--theta", type=float, default=0.0, help="field polar angle (deg)")
    p.add_argument("--phi", type=float, default=0.0, help="field azimuth (deg)")


def _add_drive(p):
    p.add_argument("--drive-theta", type=float, default=90.0, help="microwave polar angle (deg)")
    p.add_argument("--drive-phi", type=float, default=0.0)
    p.add_argument("--threshold", type=float, default=0.01, help="relative strength cutoff")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nvesr", description="NV centre spin levels, ODMR spectra and fits.")
    parser.add_argument("--version", action="store_true", help="print version (add --verbose for constants)")
    parser.add_argument("--verbose", "-v", action="store_true")
    parser.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--out", "-o", help="output file (default stdout)")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")

    p = sub.add_parser("levels", help="labelled energies versus field (CSV)")
    _add_params(p)
    _add_orientation(p)
    p.add_argument("--b-start", type=float, default=0.0)
    p.add_argument("--b-stop", type=float, default=900.0)
    p.add_argument("--b-step", type=_positive, default=1.0)
    common(p)
    p.set_defaults(func=cmd_levels)

    p = sub.add_parser("transitions", help="ESR line table at one field")
    _add_params(p)
    _add_orientation(p)
    _add_drive(p)
    p.add_argument("--b", type=float, required=True, help="field magnitude (G)")
    p.add_argument("--populated", type=int, default=0, choices=(-1, 0, 1))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    common(p)
    p.set_defaults(func=cmd_transitions)

    p = sub.add_parser("crossings", help="level (anti)crossings (JSON)")
    _add_params(p)
    _add_orientation(p)
    p.add_argument("--b-start", type=float, default=0.0)
    p.add_argument("--b-stop", type=float, default=900.0)
    p.add_argument("--b-step", type=_positive, default=None, help="coarse scan step (G)")
    p.add_argument("--resolution", type=_positive, default=0.01, help="anticrossing resolution (G)")
    p.add_argument("--pair", type=_parse_pair, action="append", metavar="A:B",
                   help="level pair, e.g. --pair 0,+1/2:-1,+1/2 (repeatable; use --pair=... "
                   "when A starts with '-')")
    common(p)
    p.set_defaults(func=cmd_crossings)

    p = sub.add_parser("synth", help="synthetic ODMR spectrum (CSV)")
    _add_params(p, ("es", "gs", "both"))
    _add_orientation(p)
    _add_drive(p)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--f-start", type=float, required=True)
    p.add_argument("--f-stop", type=float, required=True)
    p.add_argument("--f-step", type=_positive, default=1.0)
    p.add_argument("--baseline", type=float, default=1.0)
    p.add_argument("--amplitude", type=float, default=0.02, help="dip depth of excited-state lines")
    p.add_argument("--gs-amplitude", type=float, default=0.02)
    p.add_argument("--weight-by-strength", action="store_true", help="scale depths by line strength")
    p.add_argument("--fwhm", type=_positive, help="fixed FWHM for all lines (MHz)")
    p.add_argument("--gs-fwhm", type=_positive, default=GS_FWHM_MHZ)
    p.add_argument("--t0", type=_positive, default=T0_NS, help="lifetime T0 (ns)")
    p.add_argument("--t1", type=_positive, default=T1_NS, help="lifetime T1 (ns)")
    p.add_argument("--tstar", type=_positive, help="extra decoherence time T* (ns)")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--noise-model", choices=("gaussian", "poisson"), default="gaussian")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fitpeaks", help="fit a Lorentzian multiplet (JSON)")
    p.add_argument("--spectrum", required=True)
    p.add_argument("--n-peaks", type=int, required=True)
    p.add_argument("--init", type=_parse_peak, action="append", metavar="C:W:A")
    p.add_argument("--baseline", type=float)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--timestamp", action="store_true", help="record creation time in the report")
    common(p)
    p.set_defaults(func=cmd_fitpeaks)

    p = sub.add_parser("fitham", help="fit D, g, A, E to labelled lines (JSON)")
    p.add_argument("--obs", required=True)
    p.add_argument("--manifold", choices=("es", "gs"), default="es")
    for n in PARAM_NAMES:
        p.add_argument(f"--init-{n.lower()}", type=float, dest=f"init_{n.lower()}")
    p.add_argument("--free", help="comma-separated free parameters (default D,g,A,E)")
    p.add_argument("--exclude-crossing", type=float, nargs="?", const=30.0, metavar="GAUSS",
                   help="drop points within GAUSS of the level crossing (default 30)")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--timestamp", action="store_true")
    common(p)
    p.set_defaults(func=cmd_fitham)

    p = sub.add_parser("assign", help="label measured line centres (JSON)")
    _add_params(p)
    p.add_argument("--centers", required=True, help="CSV b_gauss,theta_deg,phi_deg,frequency_mhz[,sigma_mhz]")
    p.add_argument("--sigma", type=_positive, default=5.0)
    p.add_argument("--obs-out", help="also write assigned observations as CSV")
    common(p)
    p.set_defaults(func=cmd_assign)
    return parser


def _version_text(verbose: bool) -> str:
    lines = [f"nvesr {__version__}"]
    if verbose:
        lines += [
            f"mu_B/h = {MU_B_MHZ_PER_G!r} MHz/G",
            f"T0 = {T0_NS!r} ns",
            f"T1 = {T1_NS!r} ns",
            f"ground-state FWHM = {GS_FWHM_MHZ!r} MHz",
            f"kernel backend = {kernels.BACKEND}",
        ]
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            sys.stdout.write(_version_text(args.verbose))
            return EXIT_OK
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"nvesr: usage error: {_one_line(exc)}\n")
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, FitError) as exc:
        sys.stderr.write(f"nvesr: error: {_one_line(exc)}\n")
        return EXIT_DATA


def _one_line(exc) -> str:
    text = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
    return " ".join(text.split())


if __name__ == "__main__":
    sys.exit(main())
