"""Pure-Python (numpy) implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled versions are benchmarked and tested against.
"""
import numpy as np


def eigh_batch(hams):
    arr = np.asarray(hams, dtype=np.complex128)
    if arr.ndim not in (2, 3) or arr.shape[-1] != arr.shape[-2]:
        raise ValueError("expected a stack of square matrices")
    return np.linalg.eigh(arr)


def lorentzian_model(freqs, baseline, centers, fwhms, amps):
    f = np.asarray(freqs, dtype=float)[:, None]
    u = 2.0 * (f - np.asarray(centers, dtype=float)) / np.asarray(fwhms, dtype=float)
    return baseline - (np.asarray(amps, dtype=float) / (1.0 + u * u)).sum(axis=1)


def lorentzian_jacobian(freqs, centers, fwhms, amps):
    f = np.asarray(freqs, dtype=float)[:, None]
    w = np.asarray(fwhms, dtype=float)
    a = np.asarray(amps, dtype=float)
    u = 2.0 * (f - np.asarray(centers, dtype=float)) / w
    lor = 1.0 / (1.0 + u * u)
    lor2 = lor * lor
    k = w.size
    jac = np.empty((f.shape[0], 1 + 3 * k))
    jac[:, 0] = 1.0
    jac[:, 1::3] = -4.0 * a * u * lor2 / w
    jac[:, 2::3] = -2.0 * a * u * u * lor2 / w
    jac[:, 3::3] = -lor
    return jac
