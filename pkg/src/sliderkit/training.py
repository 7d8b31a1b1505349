"""Aligning low-rank sliders with principal directions of an embedding space.

Each slider trains independently. A step forward-noises clean base
samples, runs the denoiser twice (with and without the adapter), decodes
both one-shot final predictions, and embeds them; the loss pulls the
embedding delta onto the slider's assigned direction.

Two failure modes shape the recipe. The cosine objective is scale-free,
so it is perfectly satisfiable at vanishing adapter norm (no visible
effect); a hinge keeps the mean delta norm above a floor. It also has a
parameter-space attractor at the antipode when the adapter initializes
pointing away from the direction; a short warmup on the raw inner
product (which has no such attractor and grows the norm) escapes it
before the cosine phase takes over.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch

from .adapters import LowRankAdapter, SliderActivation, init_adapter
from .backends.base import DiffusionBackend
from .composer import initial_latent, run_trajectory
from .decomposition import PrincipalDirections
from .encoders.base import Encoder
from .errors import CapabilityError, ContractViolation, TrainingError
from .schedule import extrapolate_final, forward_noise

EPS_NORM = 1e-8
OBJECTIVE_MODES = ("semantic", "output-space", "customization")

# A slider whose probe effect collapses below this norm, or whose
# alignment lands below this cosine, is flagged as diverged.
FLAG_MIN_EFFECT_NORM = 1e-6
FLAG_MIN_ALIGNMENT = 0.2


def direction_alignment_loss(
    delta_phi: torch.Tensor, direction: torch.Tensor, eps_norm: float = EPS_NORM
) -> torch.Tensor:
    """Mean of 1 - cos(delta_phi_i, direction) over a batch of deltas.

    0 when every delta points along the direction, 1 at orthogonal,
    2 at anti-aligned. The norm clamp keeps the gradient finite for
    near-zero deltas without biasing it elsewhere.
    """
    if delta_phi.ndim == 1:
        delta_phi = delta_phi.unsqueeze(0)
    if delta_phi.ndim != 2 or direction.ndim != 1:
        raise ContractViolation("delta_phi must be (batch, dim) and direction (dim,)")
    if delta_phi.shape[1] != direction.shape[0]:
        raise ContractViolation(
            f"dimension mismatch: deltas are {delta_phi.shape[1]}-d, direction is {direction.shape[0]}-d"
        )
    dir_norm = torch.linalg.vector_norm(direction)
    if dir_norm < eps_norm:
        raise ContractViolation("direction must have nonzero norm")
    unit = direction / dir_norm
    norms = torch.linalg.vector_norm(delta_phi, dim=1).clamp_min(eps_norm)
    cos = (delta_phi @ unit) / norms
    return (1.0 - cos).mean()


@dataclass(frozen=True)
class TrainingConfig:
    prompt: str
    num_sliders: int = 4
    rank: int = 1
    target_layer: str = "cond_proj"
    mode: str = "semantic"
    steps_per_slider: int = 500
    batch_size: int = 4
    lr: float = 2e-4
    train_scale: float = 1.0
    bidirectional: bool = False
    warmup_steps: int = 40
    norm_floor_sigmas: float = 3.0
    floor_weight: float = 1.0
    pool_size: int = 48
    pool_base_seed: int = 10_000
    timesteps: tuple[int, ...] = ()  # () = uniform over the full schedule
    seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "timesteps", tuple(self.timesteps))
        if self.mode not in OBJECTIVE_MODES:
            raise ContractViolation(f"mode must be one of {OBJECTIVE_MODES}, got {self.mode!r}")
        if self.num_sliders < 1:
            raise ContractViolation("num_sliders must be >= 1")
        if self.rank < 1:
            raise ContractViolation("rank must be >= 1")
        if self.steps_per_slider < 1:
            raise ContractViolation("steps_per_slider must be >= 1")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.pool_size < 1:
            raise ContractViolation("pool_size must be >= 1")
        if not self.warmup_steps >= 0:
            raise ContractViolation("warmup_steps must be >= 0")
        for name in ("lr", "train_scale", "norm_floor_sigmas", "floor_weight", "init_scale"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                if name in ("norm_floor_sigmas", "floor_weight") and value == 0:
                    continue  # hinge may be disabled outright
                raise ContractViolation(f"{name} must be finite and > 0, got {value}")

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "num_sliders": self.num_sliders,
            "rank": self.rank,
            "target_layer": self.target_layer,
            "mode": self.mode,
            "steps_per_slider": self.steps_per_slider,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "train_scale": self.train_scale,
            "bidirectional": self.bidirectional,
            "warmup_steps": self.warmup_steps,
            "norm_floor_sigmas": self.norm_floor_sigmas,
            "floor_weight": self.floor_weight,
            "pool_size": self.pool_size,
            "pool_base_seed": self.pool_base_seed,
            "timesteps": list(self.timesteps),
            "seed": self.seed,
            "init_scale": self.init_scale,
        }


@dataclass
class TrainingReport:
    mode: str
    slider_ids: list[str]
    final_losses: list[float]
    alignments: list[float]  # empty in customization mode
    effect_norms: list[float]
    effect_vectors: np.ndarray  # (num_sliders, embed_dim) probe deltas
    flagged: list[str]
    wall_seconds: float
    loss_curves: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "slider_ids": list(self.slider_ids),
            "final_losses": [float(v) for v in self.final_losses],
            "alignments": [float(v) for v in self.alignments],
            "effect_norms": [float(v) for v in self.effect_norms],
            "effect_vectors": np.asarray(self.effect_vectors, dtype=np.float64).tolist(),
            "flagged": list(self.flagged),
            "wall_seconds": float(self.wall_seconds),
        }


def _derived_seed(base: int, label: str) -> int:
    digest = hashlib.sha256(f"{base}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def build_sample_pool(
    backend: DiffusionBackend,
    prompt: str,
    pool_size: int,
    base_seed: int,
    batch_size: int = 16,
) -> torch.Tensor:
    """Clean base-model latents to forward-noise during training.

    Full trajectories run once here; training steps then draw (sample,
    fresh noise, random t) triples, which is far cheaper than re-running
    trajectories per step and decouples steps from each other.
    """
    with torch.no_grad():
        cond = backend.encode_prompt([prompt])
        chunks = []
        for start in range(0, pool_size, batch_size):
            seeds = range(base_seed + start, base_seed + min(start + batch_size, pool_size))
            x = torch.cat([initial_latent(backend, s) for s in seeds])
            x, _, _ = run_trajectory(backend, x, cond.expand(x.shape[0], -1))
            chunks.append(x)
    return torch.cat(chunks)


def _draw_batch(
    pool: torch.Tensor,
    schedule,
    config: TrainingConfig,
    generator: torch.Generator,
) -> tuple[torch.Tensor, int]:
    idx = torch.randint(pool.shape[0], (config.batch_size,), generator=generator)
    if config.timesteps:
        t = config.timesteps[int(torch.randint(len(config.timesteps), (1,), generator=generator))]
    else:
        t = int(torch.randint(schedule.num_steps, (1,), generator=generator))
    x0 = pool[idx]
    eps = torch.randn(x0.shape, generator=generator)
    return forward_noise(x0, eps, schedule, t), t


def _predicted_embedding(
    backend: DiffusionBackend,
    encoder: Encoder,
    x_t: torch.Tensor,
    t: int,
    cond: torch.Tensor,
    adapters: Mapping[str, LowRankAdapter] | None = None,
    activations: tuple[SliderActivation, ...] = (),
) -> torch.Tensor:
    eps = backend.predict_noise(x_t, t, cond, adapters, activations)
    x0_hat = extrapolate_final(x_t, eps, backend.schedule, t)
    images = backend.decode_latents(x0_hat, clamp=False)
    return encoder.encode_images(images)


def _train_aligned_slider(
    backend: DiffusionBackend,
    encoder: Encoder,
    direction: torch.Tensor,
    pool: torch.Tensor,
    cond: torch.Tensor,
    config: TrainingConfig,
    slider_seed: int,
    norm_floor: float,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[LowRankAdapter, list[float]]:
    out_dim, in_dim = backend.adapter_shape(config.target_layer)
    gen = torch.Generator().manual_seed(slider_seed)
    adapter = init_adapter(
        "trainee", config.target_layer, in_dim, out_dim,
        rank=config.rank, generator=gen, init_scale=config.init_scale,
    )
    opt = torch.optim.Adam(adapter.parameters(), lr=config.lr)
    unit = direction / torch.linalg.vector_norm(direction)
    adapters = {adapter.adapter_id: adapter}
    pos = (SliderActivation(adapter.adapter_id, config.train_scale),)
    neg = (SliderActivation(adapter.adapter_id, -config.train_scale),)
    curve = []
    warm = True
    for step in range(config.steps_per_slider):
        x_t, t = _draw_batch(pool, backend.schedule, config, gen)
        batch_cond = cond.expand(x_t.shape[0], -1)
        with torch.no_grad():
            e_base = _predicted_embedding(backend, encoder, x_t, t, batch_cond)
        e_pos = _predicted_embedding(backend, encoder, x_t, t, batch_cond, adapters, pos)
        deltas = [e_pos - e_base]
        if config.bidirectional:
            e_neg = _predicted_embedding(backend, encoder, x_t, t, batch_cond, adapters, neg)
            deltas.append(e_neg - e_base)
        if warm and step < config.warmup_steps:
            # Raw inner product: no antipodal attractor, grows the norm.
            # Ends once alignment is safely positive and the norm has
            # cleared half the floor, so small-floor sliders neither
            # overshoot nor hand a near-zero delta to the cosine phase.
            with torch.no_grad():
                d = deltas[0].mean(dim=0)
                norm = float(torch.linalg.vector_norm(d))
                cos = float(d @ unit / max(norm, EPS_NORM))
            warm = cos < 0.5 or norm < 0.5 * norm_floor
            loss = -(deltas[0] @ unit).mean()
            if config.bidirectional:
                loss = loss + (deltas[1] @ unit).mean()
        else:
            # Clamping the cosine denominator at a fraction of the floor
            # caps its gradient near zero norm; the relative hinge pushes
            # back at a comparable scale however small the floor is.
            train_eps = max(EPS_NORM, 0.1 * norm_floor)
            loss = direction_alignment_loss(deltas[0], direction, eps_norm=train_eps)
            if config.bidirectional:
                loss = 0.5 * (loss + direction_alignment_loss(deltas[1], -direction, eps_norm=train_eps))
            if config.floor_weight > 0 and norm_floor > 0:
                # Floor the coherent effect (norm of the batch-mean delta,
                # per branch), not per-sample norms: uniform-t draws satisfy
                # the latter with high-noise steps alone while the realized
                # slider strength stays near zero.
                coherent = torch.stack(
                    [torch.linalg.vector_norm(d.mean(dim=0)) for d in deltas]
                ).mean()
                loss = loss + config.floor_weight * torch.relu(1.0 - coherent / norm_floor)
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append(float(loss.detach()))
        if progress is not None:
            progress(step, curve[-1])
    return adapter, curve


def _train_customization_slider(
    backend: DiffusionBackend,
    pool: torch.Tensor,
    cond: torch.Tensor,
    config: TrainingConfig,
    slider_seed: int,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[LowRankAdapter, list[float]]:
    """Ablation arm: plain denoising pull toward an exemplar subset.

    No direction target at all; each slider bootstraps its own exemplars,
    so the adapters tend to agree with each other instead of spanning
    distinct directions.
    """
    out_dim, in_dim = backend.adapter_shape(config.target_layer)
    gen = torch.Generator().manual_seed(slider_seed)
    adapter = init_adapter(
        "trainee", config.target_layer, in_dim, out_dim,
        rank=config.rank, generator=gen, init_scale=config.init_scale,
    )
    opt = torch.optim.Adam(adapter.parameters(), lr=config.lr)
    subset_size = max(4, pool.shape[0] // 4)
    subset = pool[torch.randint(pool.shape[0], (subset_size,), generator=gen)]
    adapters = {adapter.adapter_id: adapter}
    pos = (SliderActivation(adapter.adapter_id, config.train_scale),)
    curve = []
    for step in range(config.steps_per_slider):
        x_t, clean, t = _draw_subset_batch(subset, backend.schedule, config, gen)
        batch_cond = cond.expand(x_t.shape[0], -1)
        eps = backend.predict_noise(x_t, t, batch_cond, adapters, pos)
        x0_hat = extrapolate_final(x_t, eps, backend.schedule, t)
        loss = torch.mean((x0_hat - clean) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append(float(loss.detach()))
        if progress is not None:
            progress(step, curve[-1])
    return adapter, curve


def _draw_subset_batch(subset, schedule, config, generator):
    idx = torch.randint(subset.shape[0], (config.batch_size,), generator=generator)
    if config.timesteps:
        t = config.timesteps[int(torch.randint(len(config.timesteps), (1,), generator=generator))]
    else:
        t = int(torch.randint(schedule.num_steps, (1,), generator=generator))
    clean = subset[idx]
    eps = torch.randn(clean.shape, generator=generator)
    return forward_noise(clean, eps, schedule, t), clean, t


def probe_effects(
    backend: DiffusionBackend,
    encoder: Encoder,
    adapters: Mapping[str, LowRankAdapter],
    pool: torch.Tensor,
    cond: torch.Tensor,
    scale: float = 1.0,
    probe_t: int | None = None,
    probe_size: int = 16,
) -> dict[str, np.ndarray]:
    """Mean embedding delta per slider on a held-out probe batch.

    One denoiser pass at a mid-schedule timestep: cheap, deterministic,
    and the same quantity the loss steers, so it reads training health
    directly.
    """
    t = backend.schedule.num_steps // 2 if probe_t is None else probe_t
    x0 = pool[:probe_size]
    gen = torch.Generator().manual_seed(_derived_seed(0, "probe-noise"))
    eps = torch.randn(x0.shape, generator=gen)
    x_t = forward_noise(x0, eps, backend.schedule, t)
    batch_cond = cond.expand(x_t.shape[0], -1)
    effects = {}
    with torch.no_grad():
        e_base = _predicted_embedding(backend, encoder, x_t, t, batch_cond)
        for adapter_id in sorted(adapters):
            acts = (SliderActivation(adapter_id, scale),)
            e_pos = _predicted_embedding(backend, encoder, x_t, t, batch_cond, adapters, acts)
            effects[adapter_id] = (e_pos - e_base).mean(dim=0).numpy().astype(np.float64)
    return effects


def train_sliders(
    backend: DiffusionBackend,
    config: TrainingConfig,
    directions: PrincipalDirections | None = None,
    encoder: Encoder | None = None,
    progress: Callable[[str, int, float], None] | None = None,
) -> tuple[dict[str, LowRankAdapter], TrainingReport]:
    """Train config.num_sliders adapters, one per principal direction.

    Sliders are independent: each draws from its own seeded stream over
    a shared precomputed sample pool, so training one alone reproduces
    its adapter from a full run bit for bit. Divergent sliders are
    flagged in the report, not raised, so one bad direction cannot sink
    the rest.
    """
    aligned = config.mode in ("semantic", "output-space")
    if aligned:
        if directions is None or encoder is None:
            raise ContractViolation(f"{config.mode} mode needs directions and an encoder")
        if not encoder.descriptor().differentiable:
            raise CapabilityError(
                f"encoder {encoder.descriptor().name!r} is not differentiable; "
                "alignment training backpropagates through it"
            )
        if directions.components.shape[0] < config.num_sliders:
            raise ContractViolation(
                f"need {config.num_sliders} components, decomposition has {directions.components.shape[0]}"
            )
        bad = [i for i in directions.degenerate_indices if i < config.num_sliders]
        if bad:
            raise TrainingError(
                f"components {bad} are degenerate (no variance to align with); "
                "reduce num_sliders or sample more broadly"
            )
    start = time.monotonic()
    pool = build_sample_pool(backend, config.prompt, config.pool_size, config.pool_base_seed)
    with torch.no_grad():
        cond = backend.encode_prompt([config.prompt])
    adapters: dict[str, LowRankAdapter] = {}
    curves: list[list[float]] = []
    for i in range(config.num_sliders):
        slider_id = f"slider-{i:02d}"
        slider_seed = _derived_seed(config.seed, f"slider-{i}")
        hook = (lambda step, loss, s=slider_id: progress(s, step, loss)) if progress else None
        if aligned:
            direction = torch.from_numpy(directions.direction(i)).to(torch.float32)
            # Scale 1.0 should mean "a few sigmas along this component":
            # a flat floor inflates low-variance directions off-manifold.
            floor = config.norm_floor_sigmas * float(np.sqrt(max(directions.explained_variance[i], 0.0)))
            adapter, curve = _train_aligned_slider(
                backend, encoder, direction, pool, cond, config, slider_seed, floor, hook
            )
        else:
            adapter, curve = _train_customization_slider(
                backend, pool, cond, config, slider_seed, hook
            )
        adapter = LowRankAdapter(
            adapter_id=slider_id,
            target_layer=adapter.target_layer,
            rank=adapter.rank,
            down=adapter.down.detach().clone(),
            up=adapter.up.detach().clone(),
            metadata={"pc_index": i, "mode": config.mode} if aligned else {"mode": config.mode},
        )
        adapters[slider_id] = adapter
        curves.append(curve)
    probe_encoder = encoder
    if probe_encoder is None:
        from .encoders import get_encoder

        probe_encoder = get_encoder("toy-semantic")
    effects = probe_effects(backend, probe_encoder, adapters, pool, cond, scale=config.train_scale)
    slider_ids = sorted(adapters)
    effect_matrix = np.stack([effects[s] for s in slider_ids])
    effect_norms = [float(np.linalg.norm(v)) for v in effect_matrix]
    alignments = []
    if aligned:
        for i, s in enumerate(slider_ids):
            v = directions.direction(i)
            denom = max(effect_norms[i] * np.linalg.norm(v), EPS_NORM)
            alignments.append(float(effect_matrix[i] @ v / denom))
    flagged = []
    for i, s in enumerate(slider_ids):
        final_loss = curves[i][-1] if curves[i] else float("nan")
        diverged = not np.isfinite(final_loss) or effect_norms[i] < FLAG_MIN_EFFECT_NORM
        if aligned and alignments[i] < FLAG_MIN_ALIGNMENT:
            diverged = True
        if diverged:
            flagged.append(s)
    report = TrainingReport(
        mode=config.mode,
        slider_ids=slider_ids,
        final_losses=[c[-1] if c else float("nan") for c in curves],
        alignments=alignments,
        effect_norms=effect_norms,
        effect_vectors=effect_matrix,
        flagged=flagged,
        wall_seconds=time.monotonic() - start,
        loss_curves=curves,
    )
    return adapters, report


def train_variant(
    backend: DiffusionBackend,
    config: TrainingConfig,
    objective_mode: str,
    directions: PrincipalDirections | None = None,
    encoder: Encoder | None = None,
    progress: Callable[[str, int, float], None] | None = None,
) -> tuple[dict[str, LowRankAdapter], TrainingReport]:
    """train_sliders with the objective mode swapped, for ablation runs."""
    if objective_mode not in OBJECTIVE_MODES:
        raise ContractViolation(f"objective_mode must be one of {OBJECTIVE_MODES}, got {objective_mode!r}")
    cfg = TrainingConfig(**{**config.to_dict(), "mode": objective_mode, "timesteps": config.timesteps})
    return train_sliders(backend, cfg, directions=directions, encoder=encoder, progress=progress)
