"""Composing sliders into the denoising loop and generating images.

The inference loop walks a strided subset of the schedule from noisiest
to cleanest. Activations apply to the model weights for the steps a
gate allows (positions are loop positions, 0 = noisiest), and guidance
blends conditional and null predictions in epsilon space. Adapters act
on both branches: a slider is a model edit, not a prompt edit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from .adapters import LowRankAdapter, SliderActivation
from .backends.base import DiffusionBackend
from .errors import ContractViolation
from .schedule import denoise_to, extrapolate_final


@dataclass(frozen=True)
class TimestepGate:
    """Half-open window [start, end) of inference-loop positions."""

    start: int
    end: int

    def __post_init__(self):
        # start == end is a legal empty window (slider fully gated off).
        if self.start < 0 or self.end < self.start:
            raise ContractViolation(f"gate window [{self.start}, {self.end}) is negative")

    def active(self, position: int) -> bool:
        return self.start <= position < self.end

    @classmethod
    def full(cls, num_steps: int) -> "TimestepGate":
        return cls(0, num_steps)

    @classmethod
    def trailing(cls, fraction: float, num_steps: int) -> "TimestepGate":
        """Window covering the last `fraction` of the loop (the low-noise end)."""
        if not 0 < fraction <= 1:
            raise ContractViolation("trailing fraction must be in (0, 1]")
        start = int(round((1 - fraction) * num_steps))
        return cls(min(start, num_steps - 1), num_steps)

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end}


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    seed: int = 0
    activations: tuple[SliderActivation, ...] = ()
    num_steps: int | None = None  # None = full schedule length
    guidance_scale: float = 1.0
    null_prompt: str = ""
    gate: TimestepGate | None = None

    def __post_init__(self):
        object.__setattr__(self, "activations", tuple(self.activations))
        if self.num_steps is not None and self.num_steps < 1:
            raise ContractViolation("num_steps must be >= 1")
        if not np.isfinite(self.guidance_scale) or self.guidance_scale < 0:
            raise ContractViolation(f"guidance_scale must be finite and >= 0, got {self.guidance_scale}")


@dataclass
class GenerationResult:
    image: torch.Tensor  # (3, H, W) in [0, 1]
    latent: torch.Tensor  # (3, H, W) in model value_range
    request: GenerationRequest
    captures: dict[int, torch.Tensor] = field(default_factory=dict)  # t -> x0_hat image


def step_indices(schedule_len: int, num_steps: int) -> list[int]:
    """Descending schedule indices for a num_steps inference loop.

    floor(x + 0.5) rounding keeps the strided points strictly increasing
    (plain round-half-even can collapse neighbors one apart).
    """
    if not 1 <= num_steps <= schedule_len:
        raise ContractViolation(f"num_steps must be in [1, {schedule_len}], got {num_steps}")
    if num_steps == 1:
        return [schedule_len - 1]
    pts = np.floor(np.linspace(0, schedule_len - 1, num_steps) + 0.5).astype(int)
    return list(pts[::-1])


def initial_latent(backend: DiffusionBackend, seed: int, batch: int = 1) -> torch.Tensor:
    """Seeded starting noise; one generator per seed, independent of batching."""
    desc = backend.descriptor()
    gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
    return torch.randn(batch, desc.channels, desc.image_size, desc.image_size, generator=gen)


def run_trajectory(
    backend: DiffusionBackend,
    x: torch.Tensor,
    cond: torch.Tensor,
    adapters: Mapping[str, LowRankAdapter] | None = None,
    activations: Sequence[SliderActivation] = (),
    num_steps: int | None = None,
    guidance_scale: float = 1.0,
    null_cond: torch.Tensor | None = None,
    gate: TimestepGate | None = None,
    capture_timesteps: Sequence[int] = (),
    capture_latents: Sequence[int] = (),
) -> tuple[torch.Tensor, dict[int, torch.Tensor], dict[int, torch.Tensor]]:
    """Denoise x (a batch at the noisiest step) to a clean latent.

    Returns the final latent, the final-image extrapolation at every
    index in capture_timesteps, and the raw noisy latent x_t at every
    index in capture_latents (as the loop arrived there, before its
    update), which is what slider training consumes.
    """
    schedule = backend.schedule
    indices = step_indices(schedule.num_steps, num_steps or schedule.num_steps)
    capture_set = set(capture_timesteps)
    latent_set = set(capture_latents)
    missing = capture_set.union(latent_set).difference(indices)
    if missing:
        raise ContractViolation(f"capture timesteps {sorted(missing)} not visited by a {len(indices)}-step loop")
    use_guidance = guidance_scale != 1.0 and null_cond is not None
    captures: dict[int, torch.Tensor] = {}
    latents: dict[int, torch.Tensor] = {}
    for position, t_from in enumerate(indices):
        t_to = indices[position + 1] if position + 1 < len(indices) else -1
        acts = tuple(activations) if (gate is None or gate.active(position)) else ()
        if t_from in latent_set:
            latents[t_from] = x.clone()
        eps = backend.predict_noise(x, t_from, cond, adapters, acts)
        if use_guidance:
            eps_null = backend.predict_noise(x, t_from, null_cond, adapters, acts)
            eps = eps_null + guidance_scale * (eps - eps_null)
        if t_from in capture_set:
            captures[t_from] = extrapolate_final(x, eps, schedule, t_from)
        x = denoise_to(x, eps, schedule, t_from, t_to)
    return x, captures, latents


def generate(
    backend: DiffusionBackend,
    request: GenerationRequest,
    adapters: Mapping[str, LowRankAdapter] | None = None,
    capture_timesteps: Sequence[int] = (),
) -> GenerationResult:
    """Run one seeded request to a final image."""
    desc = backend.descriptor()
    with torch.no_grad():
        cond = backend.encode_prompt([request.prompt])
        null_cond = None
        if request.guidance_scale != 1.0:
            null_cond = backend.encode_prompt([request.null_prompt])
        x = initial_latent(backend, request.seed)
        x, captures, _ = run_trajectory(
            backend,
            x,
            cond,
            adapters=adapters,
            activations=request.activations,
            num_steps=request.num_steps,
            guidance_scale=request.guidance_scale,
            null_cond=null_cond,
            gate=request.gate,
            capture_timesteps=capture_timesteps,
        )
    lo, hi = desc.value_range
    latent = x[0].clamp(lo, hi)
    image = backend.decode_latents(latent)
    capture_images = {t: backend.decode_latents(v[0].clamp(lo, hi)) for t, v in captures.items()}
    return GenerationResult(image=image, latent=latent, request=request, captures=capture_images)


def sparse_random_activation(
    adapter_ids: Sequence[str],
    k: int = 3,
    scale_magnitude: float = 1.0,
    generator: torch.Generator | None = None,
    signed: bool = True,
) -> tuple[SliderActivation, ...]:
    """k distinct sliders at +/-scale_magnitude, for diversity probing.

    Signs are random by default; signed=False pins every scale positive.
    k=0 is a legal no-op draw.
    """
    ids = list(adapter_ids)
    if not 0 <= k <= len(ids):
        raise ContractViolation(f"k must be in [0, {len(ids)}], got {k}")
    if not np.isfinite(scale_magnitude) or scale_magnitude < 0:
        raise ContractViolation(f"scale_magnitude must be finite and >= 0, got {scale_magnitude}")
    if k == 0:
        return ()
    perm = torch.randperm(len(ids), generator=generator)[:k]
    if signed:
        signs = torch.randint(0, 2, (k,), generator=generator) * 2 - 1
    else:
        signs = torch.ones(k, dtype=torch.long)
    return tuple(
        SliderActivation(ids[int(i)], float(sign) * scale_magnitude) for i, sign in zip(perm, signs)
    )


def transfer_generate(
    backend: DiffusionBackend,
    request: GenerationRequest,
    adapters: Mapping[str, LowRankAdapter],
    trained_prompt: str,
    capture_timesteps: Sequence[int] = (),
) -> tuple[GenerationResult, dict]:
    """Apply sliders trained on one prompt to a request for another.

    Sliders are weight edits, so nothing stops reuse across prompts; the
    returned provenance records the mismatch instead of hiding it.
    """
    result = generate(backend, request, adapters=adapters, capture_timesteps=capture_timesteps)
    provenance = {
        "trained_prompt": trained_prompt,
        "generation_prompt": request.prompt,
        "transferred": request.prompt != trained_prompt,
    }
    return result, provenance
