"""Encoder abstraction: images (and optionally text) into a shared space."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

from ..errors import CapabilityError, NotFoundError


@dataclass(frozen=True)
class EncoderDescriptor:
    name: str
    dim: int
    supports_text: bool
    differentiable: bool
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "supports_text": self.supports_text,
            "differentiable": self.differentiable,
            "params": dict(self.params),
        }


class Encoder(ABC):
    """Maps image batches (n, 3, H, W) to embeddings (n, dim)."""

    name: str = "encoder"
    dim: int = 0
    supports_text: bool = False
    differentiable: bool = False

    @abstractmethod
    def encode_images(self, images: torch.Tensor) -> torch.Tensor: ...

    def encode_text(self, texts: Sequence[str]) -> torch.Tensor:
        raise CapabilityError(f"encoder {self.name!r} does not embed text")

    def descriptor(self) -> EncoderDescriptor:
        return EncoderDescriptor(
            name=self.name,
            dim=self.dim,
            supports_text=self.supports_text,
            differentiable=self.differentiable,
            params=self._params(),
        )

    def _params(self) -> dict:
        return {}


_REGISTRY: dict[str, Callable[..., Encoder]] = {}


def register_encoder(name: str, factory: Callable[..., Encoder]):
    _REGISTRY[name] = factory


def get_encoder(name: str, **kwargs) -> Encoder:
    if name not in _REGISTRY:
        raise NotFoundError(f"unknown encoder {name!r}; available: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**kwargs)


def list_encoders() -> list[str]:
    return sorted(_REGISTRY)
