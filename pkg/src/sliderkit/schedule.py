"""Noise schedules and the denoising update rules built on them.

Index convention: step t runs 0..num_steps-1 with t=0 the least-noisy
step, so samplers iterate t = num_steps-1 down to 0. alpha_bars must be
strictly positive and non-increasing in t, and alpha_bars[-1] is the
noisiest marginal. The virtual predecessor of t=0 has alpha_bar = 1
(clean data), which makes a full denoise pass land exactly on the
final-image extrapolation when the noise prediction is held fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

_CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step alphas and their cumulative products."""

    alphas: np.ndarray
    alpha_bars: np.ndarray
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        alpha_bars = np.asarray(self.alpha_bars, dtype=np.float64)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        if alphas.ndim != 1 or alpha_bars.ndim != 1:
            raise ContractViolation("schedule arrays must be 1-d")
        if len(alphas) != len(alpha_bars) or len(alphas) == 0:
            raise ContractViolation("alphas and alpha_bars must be equal-length and non-empty")
        if not np.all((alphas > 0) & (alphas <= 1)):
            raise ContractViolation("alphas must lie in (0, 1]")
        if not np.all((alpha_bars > 0) & (alpha_bars <= 1)):
            raise ContractViolation("alpha_bars must lie in (0, 1]")
        if np.any(np.diff(alpha_bars) > _CONSISTENCY_TOL):
            raise ContractViolation("alpha_bars must be non-increasing in t")
        if not np.allclose(np.cumprod(alphas), alpha_bars, rtol=0, atol=1e-8):
            raise ContractViolation("alpha_bars must equal the cumulative product of alphas")

    @property
    def num_steps(self) -> int:
        return len(self.alphas)

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t])

    def alpha_bar(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha_bars[t])

    def prev_alpha_bar(self, t: int) -> float:
        """alpha_bar of the predecessor step; 1.0 (clean data) below t=0."""
        self._check_t(t)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def _check_t(self, t: int):
        if not 0 <= t < self.num_steps:
            raise ContractViolation(f"step index {t} outside [0, {self.num_steps})")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": dict(self.params),
            "alphas": self.alphas.tolist(),
            "alpha_bars": self.alpha_bars.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "NoiseSchedule":
        return cls(
            alphas=np.asarray(payload["alphas"], dtype=np.float64),
            alpha_bars=np.asarray(payload["alpha_bars"], dtype=np.float64),
            name=payload.get("name", "custom"),
            params=payload.get("params", {}),
        )


def cosine_schedule(
    num_steps: int = 50, s: float = 0.008, max_angle: float = 0.92, min_alpha: float = 1e-3
) -> NoiseSchedule:
    """Squared-cosine alpha_bar curve.

    max_angle < 1 stops the curve short of cos(pi/2) = 0 so the terminal
    alpha_bar stays around 1e-2 instead of collapsing to zero. Each
    deterministic denoise step divides by sqrt(alpha_t); letting alpha_t
    shrink toward zero at the noisy end amplifies model error without
    bound, so the cap is what keeps few-step sampling stable.
    """
    if num_steps < 1:
        raise ContractViolation("num_steps must be >= 1")

    def f(i: float) -> float:
        return math.cos(((i / num_steps) + s) / (1 + s) * max_angle * math.pi / 2) ** 2

    bars = np.array([f(i + 1) / f(0) for i in range(num_steps)], dtype=np.float64)
    prev = np.concatenate([[1.0], bars[:-1]])
    alphas = np.clip(bars / prev, min_alpha, 1.0)
    # re-derive bars from the clipped alphas so the consistency invariant is exact
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(
        alphas=alphas,
        alpha_bars=alpha_bars,
        name="cosine",
        params={"s": s, "max_angle": max_angle, "min_alpha": min_alpha},
    )


def forward_noise(x0, eps, schedule: NoiseSchedule, t: int):
    """Noise clean data to the marginal at step t: sqrt(ab)*x0 + sqrt(1-ab)*eps."""
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def extrapolate_final(x_t, eps, schedule: NoiseSchedule, t: int):
    """One-shot estimate of the clean sample implied by a noise prediction."""
    ab = schedule.alpha_bar(t)
    return (x_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


def denoise_step(x_t, eps, schedule: NoiseSchedule, t: int):
    """Deterministic update from step t to its predecessor.

    Moves the implied clean estimate onto the predecessor marginal:
    x_{t-1} = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev) * eps. With a
    frozen eps this telescopes exactly to extrapolate_final, and when
    alpha_t = 1 (so ab_prev = ab_t) it reduces to the identity. At t=0
    the predecessor is clean data and the update returns x0_hat itself,
    i.e. (x_t - sqrt(1 - ab_0) * eps) / sqrt(ab_0).
    """
    return denoise_to(x_t, eps, schedule, t, t - 1)


def denoise_to(x_t, eps, schedule: NoiseSchedule, t_from: int, t_to: int):
    """Strided deterministic update from step t_from down to t_to.

    t_to = -1 lands on clean data (alpha_bar treated as 1), which is how
    reduced-step sampling finishes. Same telescoping identity as
    denoise_step, just across a wider gap.
    """
    if t_to >= t_from:
        raise ContractViolation(f"denoise_to must move toward less noise, got {t_from} -> {t_to}")
    ab_to = 1.0 if t_to < 0 else schedule.alpha_bar(t_to)
    x0_hat = extrapolate_final(x_t, eps, schedule, t_from)
    return math.sqrt(ab_to) * x0_hat + math.sqrt(1.0 - ab_to) * eps
