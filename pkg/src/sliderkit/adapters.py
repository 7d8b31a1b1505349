"""Low-rank adapters and their composition onto a base weight.

An adapter stores two factors A (rank x in_features) and B
(out_features x rank) so the weight delta is B @ A. Composition is a
plain sum of scaled deltas; scales merge by summation when an adapter id
appears more than once, adapters are applied in sorted-id order, and
zero net scales are skipped entirely so an all-zero activation set is
bit-identical to the base weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from .errors import ContractViolation, NotFoundError


@dataclass
class LowRankAdapter:
    """One slider direction as a rank-r factorized weight delta."""

    adapter_id: str
    target_layer: str
    rank: int
    down: torch.Tensor  # (rank, in_features), trainable "A"
    up: torch.Tensor  # (out_features, rank), trainable "B"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rank < 1:
            raise ContractViolation("adapter rank must be >= 1")
        if self.down.ndim != 2 or self.up.ndim != 2:
            raise ContractViolation("adapter factors must be 2-d")
        if self.down.shape[0] != self.rank or self.up.shape[1] != self.rank:
            raise ContractViolation(
                f"factor shapes {tuple(self.up.shape)} x {tuple(self.down.shape)} "
                f"inconsistent with rank {self.rank}"
            )
        limit = min(self.out_features, self.in_features)
        if self.rank > limit:
            raise ContractViolation(f"rank {self.rank} exceeds min(out, in) = {limit}")

    @property
    def in_features(self) -> int:
        return self.down.shape[1]

    @property
    def out_features(self) -> int:
        return self.up.shape[0]

    def delta(self) -> torch.Tensor:
        return self.up @ self.down

    def parameter_count(self) -> int:
        """Trainable parameters; rank * (in + out), tiny next to the base layer."""
        return self.rank * (self.in_features + self.out_features)

    def parameters(self) -> list[torch.Tensor]:
        return [self.down, self.up]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "down": self.down.detach().cpu().numpy().astype(np.float32),
            "up": self.up.detach().cpu().numpy().astype(np.float32),
        }


def init_adapter(
    adapter_id: str,
    target_layer: str,
    in_features: int,
    out_features: int,
    rank: int = 1,
    generator: torch.Generator | None = None,
    init_scale: float = 0.01,
    metadata: dict | None = None,
) -> LowRankAdapter:
    """Fresh adapter whose delta starts at exactly zero (up factor zeroed)."""
    down = torch.empty(rank, in_features, dtype=torch.float32)
    down.normal_(mean=0.0, std=init_scale, generator=generator)
    up = torch.zeros(out_features, rank, dtype=torch.float32)
    down.requires_grad_(True)
    up.requires_grad_(True)
    return LowRankAdapter(
        adapter_id=adapter_id,
        target_layer=target_layer,
        rank=rank,
        down=down,
        up=up,
        metadata=dict(metadata or {}),
    )


@dataclass(frozen=True)
class SliderActivation:
    """A request to blend one adapter at a signed strength."""

    adapter_id: str
    scale: float

    def __post_init__(self):
        if not np.isfinite(self.scale):
            raise ContractViolation(f"activation scale must be finite, got {self.scale}")


def merge_activations(activations: Iterable[SliderActivation]) -> dict[str, float]:
    """Sum scales per adapter id; order-insensitive by construction."""
    merged: dict[str, float] = {}
    for act in activations:
        merged[act.adapter_id] = merged.get(act.adapter_id, 0.0) + act.scale
    return merged


def effective_weight(
    base_weight: torch.Tensor,
    adapters: Mapping[str, LowRankAdapter],
    activations: Sequence[SliderActivation],
) -> torch.Tensor:
    """base + sum_i scale_i * (up_i @ down_i) over the active adapters.

    Ids are resolved strictly (unknown id -> NotFoundError), merged
    scales of exactly zero contribute nothing, and when no term survives
    the base tensor itself is returned so composition with an empty
    activation list is bit-identical to the unmodified model.
    """
    merged = merge_activations(activations)
    for adapter_id in merged:
        if adapter_id not in adapters:
            raise NotFoundError(f"unknown adapter id {adapter_id!r}")
    total = None
    for adapter_id in sorted(merged):
        scale = merged[adapter_id]
        if scale == 0.0:
            continue
        adapter = adapters[adapter_id]
        if adapter.delta().shape != base_weight.shape:
            raise ContractViolation(
                f"adapter {adapter_id!r} delta shape {tuple(adapter.delta().shape)} "
                f"does not match base weight {tuple(base_weight.shape)}"
            )
        term = scale * adapter.delta()
        total = term if total is None else total + term
    if total is None:
        return base_weight
    return base_weight + total
