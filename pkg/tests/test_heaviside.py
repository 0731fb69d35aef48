import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdmseg.errors import DomainError
from sdmseg.heaviside import HeavisideConfig, seg_from_sdm, seg_from_sdm_grad, smooth_step, smooth_step_grad
from sdmseg.volume import ScalarVolume


def test_values():
    assert smooth_step(0.0) == 0.5
    assert smooth_step(0.01) == pytest.approx(1.0, abs=1e-6)
    assert smooth_step(-0.01) == pytest.approx(0.0, abs=1e-6)
    assert smooth_step(1.0) == 1.0
    assert smooth_step(-1.0) == 0.0


def test_closed_form_examples():
    assert smooth_step(0.001) == pytest.approx(1 / (1 + np.exp(-1.5)), rel=1e-15)
    assert smooth_step(0.001) == pytest.approx(0.817574, abs=1e-6)
    assert seg_from_sdm(ScalarVolume(np.full((1, 1, 1), -0.01))).data[0, 0, 0] == pytest.approx(0.99999969, abs=1e-8)
    assert smooth_step_grad(0.0) == 375.0
    g = smooth_step_grad(np.array([-1e3, -50.0, 50.0, 1e3]))
    assert np.all(np.isfinite(g)) and np.all(g == 0)


def test_steepness_multiplies():
    cfg = HeavisideConfig(k=2.0)
    assert smooth_step(0.5, cfg) == pytest.approx(1 / (1 + np.exp(-1.0)), rel=1e-15)


def test_invalid_k():
    for k in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(DomainError):
            HeavisideConfig(k=k)


@given(st.floats(-10, 10, allow_subnormal=False))
def test_complement_symmetry(z):
    assert smooth_step(z) + smooth_step(-z) == pytest.approx(1.0, abs=1e-15)


def test_monotone_and_bounded():
    z = np.linspace(-0.05, 0.05, 20001)
    s = smooth_step(z)
    assert np.all(np.diff(s) >= 0)
    assert s.min() >= 0 and s.max() <= 1


def test_no_overflow_far_out():
    with np.errstate(all="raise"):
        assert smooth_step(np.array([-1e6, 1e6])).tolist() == [0.0, 1.0]
        assert smooth_step_grad(np.array([-1e6, 1e6])).tolist() == [0.0, 0.0]


def test_seg_from_sdm_sign_rule():
    phi = np.array([-0.3, -1e-3, 1e-3, 0.3]).reshape(4, 1, 1)
    seg = seg_from_sdm(ScalarVolume(phi))
    assert isinstance(seg, ScalarVolume)
    assert ((seg.data > 0.5) == (phi < 0)).all()


@pytest.mark.parametrize("seed", range(5))
def test_grad_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    cfg = HeavisideConfig()
    z = rng.uniform(-0.01, 0.01, 50)
    # the gradient is even, so difference on the lower tail where values carry full relative precision
    t = -np.abs(z)
    h = 1e-7
    fd = (smooth_step(t + h, cfg) - smooth_step(t - h, cfg)) / (2 * h)
    an = smooth_step_grad(z, cfg)
    assert np.max(np.abs(fd - an) / an) < 1e-6


def test_grad_against_high_precision():
    mpmath.mp.dps = 50
    k = 1500
    for z in (-0.02, -3e-3, -1e-4, 0.0, 2e-4, 5e-3, 0.02):
        s = 1 / (1 + mpmath.exp(-k * mpmath.mpf(z)))
        ref = float(k * s * (1 - s))
        assert smooth_step_grad(z) == pytest.approx(ref, rel=1e-12)


def test_seg_from_sdm_grad_sign():
    phi = np.array([-1e-3, 0.0, 1e-3])
    g = seg_from_sdm_grad(phi)
    assert np.all(g < 0)
    h = 1e-8
    fd = (seg_from_sdm(phi + h) - seg_from_sdm(phi - h)) / (2 * h)
    assert np.allclose(g, fd, rtol=1e-5)
