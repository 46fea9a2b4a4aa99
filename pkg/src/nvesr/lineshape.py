"""CW ODMR spectra as Lorentzian dips on a photoluminescence baseline.

Also converts between excited-state lifetimes and the lifetime-limited
linewidth, ``pi * FWHM = 1/T0 + 1/T1 + 1/T*``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .constants import GS_FWHM_MHZ, T0_NS, T1_NS
from .spin import Manifold, Transition


@dataclass(frozen=True)
class LorentzianPeak:
    center: float
    fwhm: float
    amplitude: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError(f"fwhm must be positive, got {self.fwhm}")
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")


@dataclass
class Spectrum:
    """Photoluminescence samples on a strictly increasing frequency grid (MHz)."""

    frequencies: np.ndarray
    intensities: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)
        if self.frequencies.ndim != 1 or self.frequencies.shape != self.intensities.shape:
            raise ValueError("frequencies and intensities must be 1-D of equal length")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.frequencies.shape:
                raise ValueError("sigma must match the frequency grid")
            if np.any(self.sigma <= 0):
                raise ValueError("sigma must be positive")

    def __len__(self):
        return self.frequencies.size

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        same_sigma = (self.sigma is None and other.sigma is None) or (
            self.sigma is not None and other.sigma is not None
            and np.array_equal(self.sigma, other.sigma)
        )
        return (
            np.array_equal(self.frequencies, other.frequencies)
            and np.array_equal(self.intensities, other.intensities)
            and same_sigma
        )


@dataclass(frozen=True)
class LifetimeModel:
    """Excited-state lifetimes in ns; ``Tstar`` may be ``inf``."""

    T0: float = T0_NS
    T1: float = T1_NS
    Tstar: float = math.inf

    def __post_init__(self):
        for name in ("T0", "T1", "Tstar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def lorentzian_dip(f, baseline: float, peak: LorentzianPeak):
    """``baseline - amplitude / (1 + ((f - center) / (fwhm / 2))**2)``."""
    u = (np.asarray(f, dtype=float) - peak.center) / (0.5 * peak.fwhm)
    return baseline - peak.amplitude / (1.0 + u * u)


def dip_sum(f, baseline: float, peaks: Sequence[LorentzianPeak]) -> np.ndarray:
    """Baseline minus every dip in ``peaks``, evaluated on ``f``."""
    f = np.atleast_1d(np.asarray(f, dtype=float))
    if not peaks:
        return np.full(f.shape, float(baseline))
    return kernels.lorentzian_model(
        f,
        float(baseline),
        np.array([p.center for p in peaks]),
        np.array([p.fwhm for p in peaks]),
        np.array([p.amplitude for p in peaks]),
    )


def lifetime_fwhm(model: LifetimeModel) -> float:
    """Lifetime-limited FWHM in MHz (rates in 1/ns are GHz)."""
    rate = 1.0 / model.T0 + 1.0 / model.T1 + 1.0 / model.Tstar
    return rate / math.pi * 1e3


def infer_tstar(fwhm: float, T0: float = T0_NS, T1: float = T1_NS) -> float:
    """Extra decoherence time T* (ns) that explains a measured ``fwhm`` (MHz)."""
    if not fwhm > 0:
        raise ValueError("fwhm must be positive")
    excess = math.pi * fwhm * 1e-3 - 1.0 / T0 - 1.0 / T1
    if excess <= 0:
        floor = lifetime_fwhm(LifetimeModel(T0, T1))
        raise ValueError(
            f"fwhm {fwhm:.6g} MHz is below lifetime-limited linewidth {floor:.6g} MHz"
        )
    return 1.0 / excess


@dataclass(frozen=True)
class NoiseSpec:
    """Additive noise: ``gaussian`` with per-point ``sigma`` or ``poisson`` counts."""

    model: str = "gaussian"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("gaussian", "poisson"):
            raise ValueError(f"unknown noise model {self.model!r}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be non-negative")


def _line_width(t: Transition, linewidth, gs_fwhm: float) -> float:
    if isinstance(linewidth, Mapping):
        if t.key in linewidth:
            return float(linewidth[t.key])
        linewidth = None
    elif linewidth is not None and not isinstance(linewidth, LifetimeModel):
        return float(linewidth)
    if t.manifold is Manifold.GROUND:
        return gs_fwhm
    return lifetime_fwhm(linewidth if isinstance(linewidth, LifetimeModel) else LifetimeModel())


def synthesize_spectrum(
    transitions: Sequence[Transition],
    amplitudes,
    grid,
    *,
    linewidth=None,
    baseline: float = 1.0,
    gs_fwhm: float = GS_FWHM_MHZ,
    noise: NoiseSpec | None = None,
) -> Spectrum:
    """Additive Lorentzian dips for each transition on a frequency grid.

    Args:
        transitions: lines to draw; their ``manifold`` selects the default width.
        amplitudes: a scalar depth for every line, or a mapping from
            ``Transition.key`` to depth. Lines missing from the mapping get no dip.
        grid: strictly increasing frequencies (MHz).
        linewidth: ``None`` or a :class:`LifetimeModel` (excited-state lines get
            the lifetime-limited width), a scalar FWHM for all lines, or a mapping
            ``Transition.key -> fwhm`` overriding individual lines.
        baseline: off-resonance intensity.
        gs_fwhm: width of ground-state lines unless overridden.
        noise: optional noise; the generator is seeded from ``noise.seed``.
    """
    grid = np.asarray(grid, dtype=float)
    keys = {t.key for t in transitions}
    if isinstance(amplitudes, Mapping):
        unknown = [k for k in amplitudes if k not in keys]
        if unknown:
            raise KeyError(f"amplitude given for unknown transition {unknown[0]}")
        depth = {k: float(v) for k, v in amplitudes.items()}
    else:
        depth = {k: float(amplitudes) for k in keys}
    if any(v < 0 for v in depth.values()):
        raise ValueError("amplitudes must be non-negative")

    peaks = [
        LorentzianPeak(t.frequency, _line_width(t, linewidth, gs_fwhm), depth[t.key])
        for t in transitions
        if depth.get(t.key, 0.0) > 0
    ]
    clean = dip_sum(grid, baseline, peaks) if grid.size else grid.copy()
    return apply_noise(grid, clean, noise)


def apply_noise(grid, clean, noise: NoiseSpec | None) -> Spectrum:
    """Wrap a noiseless trace as a :class:`Spectrum`, adding seeded noise.

    Gaussian noise sets a constant per-point sigma; Poisson noise draws counts
    with mean ``clean`` and sets ``sigma = sqrt(max(counts, 1))``.
    """
    if noise is None or noise.sigma == 0 and noise.model == "gaussian":
        return Spectrum(grid, clean)
    rng = np.random.default_rng(noise.seed)
    if noise.model == "gaussian":
        noisy = clean + rng.normal(0.0, noise.sigma, clean.shape)
        return Spectrum(grid, noisy, np.full(clean.shape, noise.sigma))
    counts = rng.poisson(np.clip(clean, 0, None)).astype(float)
    return Spectrum(grid, counts, np.sqrt(np.maximum(counts, 1.0)))
