import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sliderkit.errors import ContractViolation
from sliderkit.schedule import (
    NoiseSchedule,
    cosine_schedule,
    denoise_step,
    denoise_to,
    extrapolate_final,
    forward_noise,
)


@pytest.fixture(scope="module")
def schedule():
    return cosine_schedule(50)


def test_cosine_schedule_invariants(schedule):
    assert schedule.num_steps == 50
    assert np.all(schedule.alpha_bars > 0)
    assert np.all(np.diff(schedule.alpha_bars) <= 1e-12)
    np.testing.assert_allclose(np.cumprod(schedule.alphas), schedule.alpha_bars, atol=1e-12)
    # terminal marginal stays usable: no total signal collapse
    assert schedule.alpha_bars[-1] > 1e-3


def test_schedule_validation():
    with pytest.raises(ContractViolation):
        NoiseSchedule(alphas=np.array([0.9, 1.2]), alpha_bars=np.array([0.9, 1.08]))
    with pytest.raises(ContractViolation):
        NoiseSchedule(alphas=np.array([0.9]), alpha_bars=np.array([0.5]))  # not cumprod
    with pytest.raises(ContractViolation):
        NoiseSchedule(alphas=np.array([]), alpha_bars=np.array([]))
    with pytest.raises(ContractViolation):  # alpha_bars may not increase
        NoiseSchedule(alphas=np.array([0.9, 0.9]), alpha_bars=np.array([0.9, 0.95]))


def test_prev_alpha_bar_clean_below_zero(schedule):
    assert schedule.prev_alpha_bar(0) == 1.0
    assert schedule.prev_alpha_bar(5) == schedule.alpha_bar(4)
    with pytest.raises(ContractViolation):
        schedule.alpha_bar(50)
    with pytest.raises(ContractViolation):
        schedule.alpha_bar(-1)


def test_round_trip_dict(schedule):
    clone = NoiseSchedule.from_dict(schedule.to_dict())
    np.testing.assert_array_equal(clone.alphas, schedule.alphas)
    np.testing.assert_array_equal(clone.alpha_bars, schedule.alpha_bars)
    assert clone.name == schedule.name


def test_forward_then_extrapolate_recovers_x0(schedule):
    gen = torch.Generator().manual_seed(0)
    x0 = torch.randn(4, 3, 8, 8, generator=gen)
    eps = torch.randn(4, 3, 8, 8, generator=gen)
    for t in (0, 17, 49):
        x_t = forward_noise(x0, eps, schedule, t)
        rec = extrapolate_final(x_t, eps, schedule, t)
        assert torch.allclose(rec, x0, atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(t=st.integers(min_value=0, max_value=49), seed=st.integers(min_value=0, max_value=2**31))
def test_frozen_eps_single_step_matches_closed_form(t, seed):
    schedule = cosine_schedule(50)
    gen = torch.Generator().manual_seed(seed)
    x0 = torch.randn(2, 5, generator=gen)
    eps = torch.randn(2, 5, generator=gen)
    x_t = forward_noise(x0, eps, schedule, t)
    # one frozen-eps step to the predecessor must equal noising x0 there
    stepped = denoise_step(x_t, eps, schedule, t)
    target = x0 if t == 0 else forward_noise(x0, eps, schedule, t - 1)
    assert torch.allclose(stepped, target, atol=1e-6)


def test_denoise_to_direction_guard(schedule):
    x = torch.zeros(1, 4)
    with pytest.raises(ContractViolation):
        denoise_to(x, x, schedule, 3, 3)
    with pytest.raises(ContractViolation):
        denoise_to(x, x, schedule, 3, 7)


def test_identity_when_alpha_is_one():
    # alpha_t = 1 means no noise added at t, so the update is the identity
    alphas = np.array([1.0, 0.9])
    schedule = NoiseSchedule(alphas=alphas, alpha_bars=np.cumprod(alphas))
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(3, 3, generator=gen)
    eps = torch.randn(3, 3, generator=gen)
    assert torch.allclose(denoise_step(x, eps, schedule, 0), x, atol=1e-7)
