"""Diffusion backend abstraction.

A backend bundles a noise-prediction model, its prompt conditioning
encoder, and the schedule it was trained against. Slider adapters are
passed per-call rather than mutated into the model, so the same backend
instance can serve concurrent requests with different activations.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import torch

from ..adapters import LowRankAdapter, SliderActivation
from ..errors import NotFoundError
from ..schedule import NoiseSchedule


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    image_size: int
    channels: int
    conditioning_dim: int
    adapter_targets: tuple[str, ...]
    value_range: tuple[float, float] = (-1.0, 1.0)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "image_size": self.image_size,
            "channels": self.channels,
            "conditioning_dim": self.conditioning_dim,
            "adapter_targets": list(self.adapter_targets),
            "value_range": list(self.value_range),
            "params": dict(self.params),
        }


class DiffusionBackend(ABC):
    """Noise predictor plus prompt encoder plus native schedule."""

    @abstractmethod
    def descriptor(self) -> BackendDescriptor: ...

    @property
    @abstractmethod
    def schedule(self) -> NoiseSchedule: ...

    @abstractmethod
    def encode_prompt(self, texts: Sequence[str]) -> torch.Tensor:
        """(n, conditioning_dim) conditioning vectors."""

    @abstractmethod
    def predict_noise(
        self,
        x_t: torch.Tensor,
        t: int,
        cond: torch.Tensor,
        adapters: Mapping[str, LowRankAdapter] | None = None,
        activations: Sequence[SliderActivation] | None = None,
    ) -> torch.Tensor:
        """Predict epsilon for a batch at step t, with sliders blended in."""

    @abstractmethod
    def adapter_shape(self, target_layer: str) -> tuple[int, int]:
        """(out_features, in_features) of a named adapter target."""

    def decode_latents(self, x: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        """Model-space latents to displayable [0, 1] images.

        clamp=False keeps the map affine so training losses can pass
        gradients through saturated pixels.
        """
        lo, hi = self.descriptor().value_range
        out = (x - lo) / (hi - lo)
        return out.clamp(0.0, 1.0) if clamp else out

    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        lo, hi = self.descriptor().value_range
        return images * (hi - lo) + lo


_REGISTRY: dict[str, Callable[..., DiffusionBackend]] = {}


def register_backend(name: str, factory: Callable[..., DiffusionBackend]):
    _REGISTRY[name] = factory


def get_backend(name: str, **kwargs) -> DiffusionBackend:
    if name not in _REGISTRY:
        raise NotFoundError(f"unknown backend {name!r}; available: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**kwargs)


def list_backends() -> list[str]:
    return sorted(_REGISTRY)
