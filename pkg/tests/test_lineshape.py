import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nvesr.lineshape import (
    LifetimeModel,
    LorentzianPeak,
    NoiseSpec,
    Spectrum,
    dip_sum,
    infer_tstar,
    lifetime_fwhm,
    lorentzian_dip,
    synthesize_spectrum,
)
from nvesr.spin import ES_PARAMS, GS_PARAMS, FieldPoint, transitions_at


def test_dip_shape():
    pk = LorentzianPeak(1500.0, 80.0, 0.02)
    assert lorentzian_dip(1500.0, 1.0, pk) == pytest.approx(0.98)
    assert lorentzian_dip(1540.0, 1.0, pk) == pytest.approx(0.99)
    assert lorentzian_dip(1e7, 1.0, pk) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("fwhm", [1.0, 67.3, 400.0])
def test_area(fwhm):
    pk = LorentzianPeak(0.0, fwhm, 0.3)
    exact = 0.3 * math.pi / 2 * fwhm
    full, _ = quad(lambda f: 1.0 - lorentzian_dip(f, 1.0, pk), -np.inf, np.inf)
    assert full == pytest.approx(exact, rel=1e-3)
    # a +-50 fwhm window misses 2/pi * arctan(1/100) ~ 0.64% in the tails
    grid = np.linspace(-50 * fwhm, 50 * fwhm, 200001)
    window = np.trapezoid(1.0 - lorentzian_dip(grid, 1.0, pk), grid)
    assert window == pytest.approx(exact * 2 / math.pi * math.atan(100.0), rel=1e-3)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(1000, 2000), st.floats(1, 300), st.floats(0.001, 1)),
        min_size=1,
        max_size=5,
    )
)
def test_superposition(specs):
    peaks = [LorentzianPeak(*s) for s in specs]
    f = np.linspace(900, 2100, 301)
    total = dip_sum(f, 2.0, peaks)
    expected = 2.0 + sum(lorentzian_dip(f, 0.0, p) for p in peaks)
    np.testing.assert_allclose(total, expected, rtol=1e-12, atol=1e-12)


def test_empty_peak_list():
    np.testing.assert_array_equal(dip_sum([1.0, 2.0], 3.0, []), [3.0, 3.0])


def test_lifetime_limit():
    assert lifetime_fwhm(LifetimeModel()) == pytest.approx(67.3, abs=0.1)


@settings(max_examples=60, deadline=None)
@given(st.floats(1, 100), st.floats(1, 100), st.floats(0.5, 1e4))
def test_infer_tstar_inverts_lifetime(t0, t1, tstar):
    w = lifetime_fwhm(LifetimeModel(t0, t1, tstar))
    assert infer_tstar(w, t0, t1) == pytest.approx(tstar, rel=1e-8)


def test_infer_tstar_below_limit():
    with pytest.raises(ValueError, match="below lifetime-limited"):
        infer_tstar(50.0)


@pytest.mark.parametrize("bad", [{"fwhm": 0.0}, {"amplitude": -1.0}])
def test_peak_validation(bad):
    kw = {"center": 1.0, "fwhm": 1.0, "amplitude": 1.0, **bad}
    with pytest.raises(ValueError):
        LorentzianPeak(**kw)


def test_spectrum_validation():
    with pytest.raises(ValueError, match="increasing"):
        Spectrum([1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        Spectrum([1.0, 2.0], [0.0])
    with pytest.raises(ValueError, match="positive"):
        Spectrum([1.0, 2.0], [0.0, 0.0], [1.0, 0.0])


def _lines():
    return transitions_at(ES_PARAMS, FieldPoint(57.0))


def test_synthesis_widths():
    grid = np.arange(1100.0, 1750.0, 0.5)
    lines = _lines()
    spec = synthesize_spectrum(lines, 0.02, grid)
    # each isolated line reaches roughly its full depth at its centre
    for t in lines:
        k = np.argmin(np.abs(grid - t.frequency))
        assert 1 - spec.intensities[k] > 0.02
    fixed = synthesize_spectrum(lines, 0.02, grid, linewidth=5.0)
    k = np.argmin(np.abs(grid - lines[0].frequency))
    assert fixed.intensities[k] == pytest.approx(0.98, abs=1e-3)


def test_synthesis_gs_width():
    grid = np.arange(2700.0, 2720.0, 0.05)
    lines = transitions_at(GS_PARAMS, FieldPoint(57.0))
    spec = synthesize_spectrum(lines, 0.01, grid)
    near = [t for t in lines if 2700 < t.frequency < 2720]
    assert len(near) == 2
    # 1 MHz lines split by 3 MHz: resolved, midpoint shallower than peaks
    mid = np.argmin(np.abs(grid - np.mean([t.frequency for t in near])))
    peak = np.argmin(np.abs(grid - near[0].frequency))
    assert spec.intensities[mid] > spec.intensities[peak]


def test_synthesis_amplitude_mapping():
    grid = np.arange(1100.0, 1750.0, 1.0)
    lines = _lines()
    one = {lines[0].key: 0.05}
    spec = synthesize_spectrum(lines, one, grid)
    assert np.argmin(spec.intensities) == np.argmin(np.abs(grid - lines[0].frequency))
    with pytest.raises(KeyError):
        synthesize_spectrum(lines, {((5, 0.5), (0, 0.5)): 1.0}, grid)


def test_noise_determinism():
    grid = np.arange(1100.0, 1750.0, 1.0)
    a = synthesize_spectrum(_lines(), 0.02, grid, noise=NoiseSpec("gaussian", 0.01, seed=3))
    b = synthesize_spectrum(_lines(), 0.02, grid, noise=NoiseSpec("gaussian", 0.01, seed=3))
    c = synthesize_spectrum(_lines(), 0.02, grid, noise=NoiseSpec("gaussian", 0.01, seed=4))
    assert a == b
    assert a != c
    np.testing.assert_array_equal(a.sigma, 0.01)


def test_poisson_noise():
    grid = np.arange(1100.0, 1750.0, 1.0)
    spec = synthesize_spectrum(
        _lines(), 500.0, grid, baseline=1e4, noise=NoiseSpec("poisson", seed=1)
    )
    assert np.all(spec.intensities == np.round(spec.intensities))
    np.testing.assert_allclose(spec.sigma, np.sqrt(spec.intensities))


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseSpec("uniform")
    with pytest.raises(ValueError):
        NoiseSpec(sigma=-1.0)
