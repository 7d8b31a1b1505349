"""Encoders for the procedural toy world.

ToySemanticEncoder is the discovery-space encoder: it reads the four
generative factors out of an image differentiably, rescales them so hue
carries the most variance, mixes them through a fixed seeded orthogonal
map, appends a constant bias coordinate, and L2-normalizes. The bias
coordinate keeps all embeddings inside one cone, so cosine similarity to
a text anchor stays high while differences between embeddings still
carry full factor contrast. Text lands in the same space by mapping
factor words to target values (absent factors sit at the centered mean).
"""

from __future__ import annotations

from typing import Sequence

import torch

from .. import toyworld
from ..errors import ContractViolation
from .base import Encoder, register_encoder

# variance order: hue (dominant) > shape > size = brightness
FEATURE_SCALES = torch.tensor([1.0, 0.4, 0.3, 0.4])
_FACTOR_INDEX = {name: i for i, name in enumerate(toyworld.FACTOR_NAMES)}


def _text_features(texts: Sequence[str]) -> torch.Tensor:
    rows = []
    for text in texts:
        feat = torch.zeros(4)
        for word in text.lower().split():
            target = toyworld.WORD_TARGETS.get(word)
            if target is not None:
                factor, value = target
                feat[_FACTOR_INDEX[factor]] = (value - 0.5) * FEATURE_SCALES[_FACTOR_INDEX[factor]]
        rows.append(feat)
    return torch.stack(rows)


class ToyOracleEncoder(Encoder):
    """Centered, variance-scaled ground-truth factor estimates (4-dim)."""

    name = "toy-oracle"
    dim = 4
    supports_text = True
    differentiable = True
    factor_names = toyworld.FACTOR_NAMES

    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        est = toyworld.estimate_factors(images)
        return (est - 0.5) * FEATURE_SCALES.to(est.device)

    def encode_text(self, texts: Sequence[str]) -> torch.Tensor:
        return _text_features(texts)


class ToySemanticEncoder(Encoder):
    """Factor readout mixed into a 17-dim unit-norm space with a bias cone."""

    name = "toy-semantic"
    dim = 17
    supports_text = True
    differentiable = True

    def __init__(self, seed: int = 101, bias: float = 2.5):
        self.seed = seed
        self.bias = bias
        gen = torch.Generator().manual_seed(seed)
        raw = torch.randn(16, 4, generator=gen, dtype=torch.float64)
        q, _ = torch.linalg.qr(raw)
        self._mix = q.to(torch.float32)  # orthonormal columns: preserves factor geometry

    def _embed(self, feats: torch.Tensor) -> torch.Tensor:
        mixed = feats @ self._mix.T.to(feats.device)
        bias = torch.full((feats.shape[0], 1), self.bias, dtype=mixed.dtype, device=feats.device)
        out = torch.cat([mixed, bias], dim=1)
        return out / out.norm(dim=1, keepdim=True)

    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        est = toyworld.estimate_factors(images)
        return self._embed((est - 0.5) * FEATURE_SCALES.to(est.device))

    def encode_text(self, texts: Sequence[str]) -> torch.Tensor:
        return self._embed(_text_features(texts))

    def _params(self) -> dict:
        return {"seed": self.seed, "bias": self.bias}


class PixelFlattenEncoder(Encoder):
    """Raw appearance space: 2x2 average pool then flatten, no normalization."""

    name = "pixel-flatten"
    dim = 768
    supports_text = False
    differentiable = True

    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        images = torch.as_tensor(images, dtype=torch.float32)
        if images.ndim == 3:
            images = images[None]
        if images.shape[-2] % 2 or images.shape[-1] % 2:
            raise ContractViolation(f"pixel encoder needs even spatial dims, got {tuple(images.shape)}")
        pooled = torch.nn.functional.avg_pool2d(images, kernel_size=2)
        return pooled.reshape(images.shape[0], -1)


register_encoder(ToyOracleEncoder.name, ToyOracleEncoder)
register_encoder(ToySemanticEncoder.name, ToySemanticEncoder)
register_encoder(PixelFlattenEncoder.name, PixelFlattenEncoder)
