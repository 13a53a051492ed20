import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from bagknot.errors import ConfigError, InputError
from bagknot.policy import add_noise, make_schedule, predict_x0


def mp_alpha_bar(K, b0, b1):
    """Cumulative product of (1 - beta_k) for linear betas, in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    out, acc = [], mpmath.mpf(1)
    for k in range(K):
        beta = mpmath.mpf(b0) + (mpmath.mpf(b1) - mpmath.mpf(b0)) * k / (K - 1) if K > 1 else mpmath.mpf(b0)
        acc *= 1 - beta
        out.append(acc)
    return out


def test_alpha_sigma_identity():
    s = make_schedule(100, 1e-4, 0.02)
    assert np.max(np.abs(s.alpha**2 + s.sigma**2 - 1)) <= 1e-7


def test_alpha_bar_matches_high_precision_oracle():
    s = make_schedule(100, 1e-4, 0.02)
    ref = mp_alpha_bar(100, "1e-4", "0.02")
    assert np.allclose(s.alpha_bar, [float(v) for v in ref], rtol=1e-12, atol=0)


def test_last_sigma_frozen_value():
    # sigma_99 = sqrt(1 - prod(1 - beta_k)); the linear 1e-4..0.02 schedule leaves ~36% signal power
    s = make_schedule(100, 1e-4, 0.02)
    oracle = float(mpmath.sqrt(1 - mp_alpha_bar(100, "1e-4", "0.02")[-1]))
    assert s.sigma[99] == pytest.approx(oracle, abs=1e-12)
    assert s.sigma[99] == pytest.approx(0.797770, abs=1e-6)


def test_monotone_and_small_first_step():
    s = make_schedule()
    assert np.all(np.diff(s.alpha) < 0) and np.all(np.diff(s.sigma) > 0)
    assert s.sigma[0] <= 0.02 and s.sigma[0] == pytest.approx(0.01)


def test_single_step_schedule():
    s = make_schedule(1, 0.3, 0.3)
    assert s.alpha_bar[0] == pytest.approx(0.7)


def test_bad_schedules_rejected():
    with pytest.raises(ConfigError):
        make_schedule(0)
    with pytest.raises(ConfigError):
        make_schedule(10, 0.02, 1e-4)
    with pytest.raises(ConfigError):
        make_schedule(10, 0.01, 0.01)


def test_posterior_variance_first_is_zero_and_bounded():
    s = make_schedule()
    pv = s.posterior_variance
    assert pv[0] == 0.0 and np.all(pv[1:] > 0) and np.all(pv <= s.betas + 1e-15)


def test_zero_noise():
    s = make_schedule()
    A = np.random.default_rng(0).normal(size=(16, 26))
    assert np.array_equal(add_noise(A, 40, np.zeros_like(A), s), s.alpha[40] * A)


@given(st.integers(0, 2**31))
def test_first_step_bound(seed):
    s = make_schedule()
    r = np.random.default_rng(seed)
    A, eps = r.normal(size=(16, 26)) * 2, r.normal(size=(16, 26))
    noised = add_noise(A, 0, eps, s)
    assert np.abs(noised - A).max() <= 0.02 * (np.abs(A).max() + np.abs(eps).max())


@given(st.integers(0, 99), st.integers(0, 2**31))
def test_noising_inverts_exactly(k, seed):
    s = make_schedule()
    r = np.random.default_rng(seed)
    A, eps = r.uniform(-np.pi, np.pi, size=(16, 26)), r.normal(size=(16, 26))
    assert np.abs(predict_x0(add_noise(A, k, eps, s), k, eps, s) - A).max() <= 1e-6


def test_torch_inputs_supported():
    s = make_schedule()
    A = torch.zeros(2, 3, dtype=torch.float64)
    out = add_noise(A, 5, torch.ones_like(A), s)
    assert torch.allclose(out, torch.full_like(A, s.sigma[5]))


def test_add_noise_checks():
    s = make_schedule()
    with pytest.raises(InputError):
        add_noise(np.zeros((2, 2)), 100, np.zeros((2, 2)), s)
    with pytest.raises(InputError):
        add_noise(np.zeros((2, 2)), 3, np.zeros((2, 3)), s)
