"""Compare the compiled kernels against the numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 1 100 1000]

Prints the best-of-``repeat`` wall time per call for each backend and the
speed-up. Exits with status 1 when the extension is not built.
"""

import argparse
import sys
import timeit

import numpy as np

from nvesr import kernels
from nvesr.spin import ES_PARAMS, build_hamiltonians, field_sweep


def _best(fn, repeat):
    number, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _cases(batches):
    # axial fields leave H sparse, which favours Jacobi; a tilt fills it in
    for tilt in (0.0, 3.0):
        for n in batches:
            fields = field_sweep(0.0, 900.0, 900.0 / max(n - 1, 1), tilt, 10.0)[:n]
            H = build_hamiltonians(ES_PARAMS, fields)
            yield f"eigh_batch  tilt={tilt:g} n={n}", lambda impl, H=H: impl.eigh_batch(H)
    f = np.linspace(1000.0, 2000.0, 2001)
    c = np.array([1223.2, 1280.0, 1573.7, 1630.8])
    w = np.full(4, 80.0)
    a = np.full(4, 0.02)
    yield "lorentzian_model    4x2001", lambda impl: impl.lorentzian_model(f, 1.0, c, w, a)
    yield "lorentzian_jacobian 4x2001", lambda impl: impl.lorentzian_jacobian(f, c, w, a)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, nargs="+", default=[1, 100, 1000])
    args = parser.parse_args(argv)
    if kernels.compiled is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'kernel':<28}{'cython (us)':>13}{'numpy (us)':>13}{'speed-up':>10}")
    for name, call in _cases(args.batch):
        tc = _best(lambda: call(kernels.compiled), args.repeat)
        tp = _best(lambda: call(kernels.python), args.repeat)
        print(f"{name:<28}{tc * 1e6:>13.1f}{tp * 1e6:>13.1f}{tp / tc:>9.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
