"""A small trainable conditional denoiser over the procedural toy world.

The UNet predicts epsilon for 32x32 images in [-1, 1] model space,
conditioned on a 16-dim text vector through a single projection layer
(``cond_proj``). That projection is the default adapter target: every
spatial block reads conditioning through it, so a rank-1 delta on it can
steer global semantics. Trained weights are cached on disk keyed by a
hash of the full training configuration, which keeps repeated pipeline
runs deterministic and fast.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .. import toyworld
from ..adapters import LowRankAdapter, SliderActivation, effective_weight
from ..config import cache_dir, config_hash
from ..errors import NotFoundError
from ..schedule import NoiseSchedule, cosine_schedule, forward_noise
from ..tensorio import read_tensor_file, write_tensor_file
from .base import BackendDescriptor, DiffusionBackend, register_backend

COND_DIM = 32
TIME_DIM = 64

_STOPWORDS = frozenset({"a", "an", "the", "on", "of", "with", "and"})


def _word_vector(word: str, dim: int = COND_DIM) -> torch.Tensor:
    """Stable per-word Gaussian derived from a sha256 of the token."""
    seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little") % (2**63)
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(dim, generator=gen)


class HashTextEncoder:
    """Mean-pooled seeded word vectors, L2-normalized. No learned weights.

    Stopwords are dropped before pooling so short prompts do not collapse
    onto the articles they share.
    """

    def __init__(self, dim: int = COND_DIM):
        self.dim = dim
        self._cache: dict[str, torch.Tensor] = {}

    def encode(self, texts: Sequence[str]) -> torch.Tensor:
        rows = []
        for text in texts:
            words = [w for w in text.lower().split() if w not in _STOPWORDS] or ["<empty>"]
            vecs = []
            for w in words:
                if w not in self._cache:
                    self._cache[w] = _word_vector(w, self.dim)
                vecs.append(self._cache[w])
            pooled = torch.stack(vecs).mean(dim=0)
            rows.append(pooled / (pooled.norm() + 1e-8))
        return torch.stack(rows)


def _time_embedding(t_frac: torch.Tensor, dim: int = 32) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(torch.linspace(0, math.log(200.0), half, device=t_frac.device))
    ang = t_frac[:, None] * freqs[None]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class _Block(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm = nn.GroupNorm(4, c_out)
        self.t_proj = nn.Linear(TIME_DIM, c_out)
        self.c_proj = nn.Linear(32, c_out)

    def forward(self, x, t_emb, c_emb):
        h = self.conv(x)
        h = h + self.t_proj(t_emb)[:, :, None, None] + self.c_proj(c_emb)[:, :, None, None]
        return F.silu(self.norm(h))


class ToyDenoiser(nn.Module):
    """Predicts the clean image x0 (not epsilon) from a noisy input.

    x0-prediction keeps few-step deterministic sampling stable: near pure
    noise an epsilon-parameterized net must be divided by sqrt(alpha_bar)
    to recover structure, amplifying its error by orders of magnitude,
    while an x0 net just outputs a blurry average and refines it.
    """

    def __init__(self):
        super().__init__()
        self.time_mlp = nn.Sequential(nn.Linear(32, TIME_DIM), nn.SiLU(), nn.Linear(TIME_DIM, TIME_DIM))
        self.cond_proj = nn.Linear(COND_DIM, 32)
        self.enc1 = _Block(3, 32)
        self.enc2 = _Block(32, 64, stride=2)
        self.enc3 = _Block(64, 96, stride=2)
        self.mid = _Block(96, 96)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.dec2 = _Block(96 + 64, 64)
        self.dec1 = _Block(64 + 32, 32)
        self.out = nn.Conv2d(32, 3, 3, padding=1)

    def forward(self, x, t_frac, cond, cond_weight: torch.Tensor | None = None):
        t_emb = self.time_mlp(_time_embedding(t_frac))
        weight = self.cond_proj.weight if cond_weight is None else cond_weight
        c_emb = F.silu(F.linear(cond, weight, self.cond_proj.bias))
        h1 = self.enc1(x, t_emb, c_emb)
        h2 = self.enc2(h1, t_emb, c_emb)
        h3 = self.enc3(h2, t_emb, c_emb)
        h4 = self.mid(h3, t_emb, c_emb)
        h5 = self.dec2(torch.cat([self.up(h4), h2], dim=1), t_emb, c_emb)
        h6 = self.dec1(torch.cat([self.up(h5), h1], dim=1), t_emb, c_emb)
        return self.out(h6)


@dataclass(frozen=True)
class ToyTrainConfig:
    seed: int = 1
    dataset_size: int = 3072
    train_steps: int = 1500
    batch_size: int = 64
    lr: float = 2e-3
    num_steps: int = 50  # schedule length
    plain_fraction: float = 0.5

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class ToyBackend(DiffusionBackend):
    def __init__(self, model: ToyDenoiser, schedule: NoiseSchedule, train_config: ToyTrainConfig):
        self.model = model.eval()
        self._schedule = schedule
        self.train_config = train_config
        self.text_encoder = HashTextEncoder()
        for p in self.model.parameters():
            p.requires_grad_(False)

    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(
            name="toy",
            image_size=toyworld.IMAGE_SIZE,
            channels=3,
            conditioning_dim=COND_DIM,
            adapter_targets=("cond_proj",),
            value_range=(-1.0, 1.0),
            params={"train": self.train_config.to_dict()},
        )

    @property
    def schedule(self) -> NoiseSchedule:
        return self._schedule

    def encode_prompt(self, texts: Sequence[str]) -> torch.Tensor:
        return self.text_encoder.encode(texts)

    def adapter_shape(self, target_layer: str) -> tuple[int, int]:
        if target_layer != "cond_proj":
            raise NotFoundError(f"toy backend has no adapter target {target_layer!r}")
        w = self.model.cond_proj.weight
        return (w.shape[0], w.shape[1])

    def predict_noise(
        self,
        x_t: torch.Tensor,
        t: int,
        cond: torch.Tensor,
        adapters: Mapping[str, LowRankAdapter] | None = None,
        activations: Sequence[SliderActivation] | None = None,
    ) -> torch.Tensor:
        # the net predicts x0; convert to the epsilon implied by x_t
        ab = self._schedule.alpha_bar(t)
        x0_hat = self._predict_x0(x_t, t, cond, adapters, activations)
        return (x_t - math.sqrt(ab) * x0_hat) / math.sqrt(1.0 - ab)

    def _predict_x0(
        self,
        x_t: torch.Tensor,
        t: int,
        cond: torch.Tensor,
        adapters: Mapping[str, LowRankAdapter] | None = None,
        activations: Sequence[SliderActivation] | None = None,
    ) -> torch.Tensor:
        t_frac = torch.full((x_t.shape[0],), t / max(self._schedule.num_steps - 1, 1), dtype=torch.float32)
        cond_weight = None
        if activations:
            cond_weight = effective_weight(self.model.cond_proj.weight, adapters or {}, activations)
        return self.model(x_t, t_frac, cond, cond_weight=cond_weight)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.model.state_dict().items()}


def _train_toy_model(cfg: ToyTrainConfig) -> ToyDenoiser:
    torch.manual_seed(cfg.seed)
    model = ToyDenoiser()
    schedule = cosine_schedule(cfg.num_steps)
    factors, images, captions = toyworld.make_dataset(cfg.dataset_size, seed=cfg.seed, plain_fraction=cfg.plain_fraction)
    latents = images * 2.0 - 1.0
    text_enc = HashTextEncoder()
    cond_all = text_enc.encode(captions)

    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=0.0)
    lr_sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.train_steps, eta_min=cfg.lr * 0.1)
    gen = torch.Generator().manual_seed(cfg.seed + 7919)
    n = latents.shape[0]
    model.train()
    for _ in range(cfg.train_steps):
        idx = torch.randint(0, n, (cfg.batch_size,), generator=gen)
        x0 = latents[idx]
        cond = cond_all[idx]
        t = int(torch.randint(0, cfg.num_steps, (1,), generator=gen))
        eps = torch.randn(x0.shape, generator=gen)
        x_t = forward_noise(x0, eps, schedule, t)
        t_frac = torch.full((x0.shape[0],), t / max(cfg.num_steps - 1, 1), dtype=torch.float32)
        pred = model(x_t, t_frac, cond)
        loss = F.mse_loss(pred, x0)
        opt.zero_grad()
        loss.backward()
        opt.step()
        lr_sched.step()
    model.eval()
    return model


def build_toy_backend(cfg: ToyTrainConfig | None = None, use_cache: bool = True) -> ToyBackend:
    """Train (or load from the weight cache) a toy backend for cfg."""
    cfg = cfg or ToyTrainConfig()
    schedule = cosine_schedule(cfg.num_steps)
    cache_path = cache_dir() / f"toy-backend-{config_hash(cfg.to_dict())[:16]}.trec"
    model = ToyDenoiser()
    if use_cache and cache_path.exists():
        arrays, _ = read_tensor_file(cache_path)
        state = {k: torch.from_numpy(v) for k, v in arrays.items()}
        model.load_state_dict(state)
    else:
        model = _train_toy_model(cfg)
        if use_cache:
            arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
            write_tensor_file(cache_path, arrays, {"config": cfg.to_dict()})
    return ToyBackend(model, schedule, cfg)


def _toy_factory(**kwargs) -> ToyBackend:
    cfg = ToyTrainConfig(**kwargs) if kwargs else ToyTrainConfig()
    return build_toy_backend(cfg)


register_backend("toy", _toy_factory)
