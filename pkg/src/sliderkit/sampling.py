"""Seeded trajectory sampling into an embedding record store.

A plan fixes the prompt, how many seeds to run, and which schedule
indices to capture. Each seed's trajectory is denoised once; at every
captured index the final-image extrapolation is decoded and embedded.
Records append per seed (all of a seed's rows at once), so an
interrupted run resumes by running only the seeds that never landed,
and re-running a complete plan is a no-op.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .backends.base import DiffusionBackend
from .composer import initial_latent, run_trajectory, step_indices
from .config import config_hash
from .encoders.base import Encoder
from .errors import ContractViolation, IntegrityError
from .tensorio import read_tensor_file, write_tensor_file


def default_capture_timesteps(schedule_len: int, count: int = 4, lo: float = 0.1, hi: float = 0.9) -> tuple[int, ...]:
    """Evenly spaced schedule indices across the middle of the trajectory.

    The extremes are skipped: near pure noise the extrapolation carries
    almost no semantics, and the final step adds nothing over the result.
    """
    if count < 1:
        raise ContractViolation("count must be >= 1")
    pts = np.linspace(lo * (schedule_len - 1), hi * (schedule_len - 1), count)
    idx = sorted({int(p) for p in np.floor(pts + 0.5)})
    return tuple(idx)


@dataclass(frozen=True)
class SamplingPlan:
    prompt: str
    num_seeds: int = 256
    capture_timesteps: tuple[int, ...] = ()
    base_seed: int = 0
    batch_size: int = 32
    guidance_scale: float = 1.0
    null_prompt: str = ""
    encoder_name: str = "toy-semantic"
    num_steps: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "capture_timesteps", tuple(int(t) for t in self.capture_timesteps))
        if self.num_seeds < 1:
            raise ContractViolation("num_seeds must be >= 1")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.num_seeds)]

    def resolve_timesteps(self, schedule_len: int) -> tuple[int, ...]:
        ts = self.capture_timesteps or default_capture_timesteps(schedule_len)
        loop = step_indices(schedule_len, self.num_steps or schedule_len)
        missing = set(ts).difference(loop)
        if missing:
            raise ContractViolation(f"capture timesteps {sorted(missing)} not visited by the inference loop")
        return tuple(sorted(ts))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def plan_hash(self) -> str:
        return config_hash(self.to_dict())


class RecordStore:
    """Append-only (seed, timestep, embedding) rows with atomic per-seed appends."""

    def __init__(self, dim: int, plan_hash: str = "", metadata: dict | None = None):
        self.dim = dim
        self.plan_hash = plan_hash
        self.metadata = dict(metadata or {})
        self._seeds: list[int] = []
        self._timesteps: list[int] = []
        self._rows: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def completed_seeds(self) -> set[int]:
        return set(self._seeds)

    def append_seed(self, seed: int, rows: dict[int, np.ndarray]):
        """All captured rows for one seed, timestep-ascending. Idempotent."""
        if seed in self.completed_seeds:
            return
        for t in sorted(rows):
            row = np.asarray(rows[t], dtype=np.float32).reshape(-1)
            if row.shape[0] != self.dim:
                raise ContractViolation(f"embedding dim {row.shape[0]} != store dim {self.dim}")
            self._seeds.append(seed)
            self._timesteps.append(t)
            self._rows.append(row)

    def matrix(self) -> np.ndarray:
        if not self._rows:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack(self._rows)

    def index(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self._seeds, dtype=np.int64), np.asarray(self._timesteps, dtype=np.int64)

    def rows_for_timestep(self, t: int) -> np.ndarray:
        mask = np.asarray(self._timesteps) == t
        return self.matrix()[mask]

    def pending_seeds(self, plan: SamplingPlan) -> list[int]:
        done = self.completed_seeds
        return [s for s in plan.seeds() if s not in done]

    def is_complete(self, plan: SamplingPlan) -> bool:
        return not self.pending_seeds(plan)

    def save(self, path) -> str:
        seeds, ts = self.index()
        return write_tensor_file(
            path,
            {"embeddings": self.matrix(), "seeds": seeds, "timesteps": ts},
            {"plan_hash": self.plan_hash, "dim": self.dim, **self.metadata},
        )

    @classmethod
    def load(cls, path, expect_plan_hash: str | None = None) -> "RecordStore":
        arrays, meta = read_tensor_file(path)
        store = cls(dim=int(meta["dim"]), plan_hash=meta.get("plan_hash", ""), metadata=meta)
        if expect_plan_hash is not None and store.plan_hash != expect_plan_hash:
            raise IntegrityError(f"record store was sampled under a different plan ({store.plan_hash[:12]}…)")
        emb = arrays["embeddings"]
        if emb.shape[0] != len(arrays["seeds"]) or emb.shape[0] != len(arrays["timesteps"]):
            raise IntegrityError("record store index and embedding row counts disagree")
        store._seeds = [int(s) for s in arrays["seeds"]]
        store._timesteps = [int(t) for t in arrays["timesteps"]]
        store._rows = [row.astype(np.float32) for row in emb]
        return store


def run_sampling(
    backend: DiffusionBackend,
    encoder: Encoder,
    plan: SamplingPlan,
    store: RecordStore | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> RecordStore:
    """Fill a record store for the plan, skipping already-completed seeds."""
    schedule_len = backend.schedule.num_steps
    timesteps = plan.resolve_timesteps(schedule_len)
    if store is None:
        store = RecordStore(dim=encoder.dim, plan_hash=plan.plan_hash(), metadata={"prompt": plan.prompt})
    elif store.plan_hash and store.plan_hash != plan.plan_hash():
        raise IntegrityError("record store belongs to a different sampling plan")

    pending = store.pending_seeds(plan)
    done_so_far = plan.num_seeds - len(pending)
    with torch.no_grad():
        cond1 = backend.encode_prompt([plan.prompt])
        null1 = backend.encode_prompt([plan.null_prompt]) if plan.guidance_scale != 1.0 else None
        for lo in range(0, len(pending), plan.batch_size):
            seeds = pending[lo : lo + plan.batch_size]
            x = torch.cat([initial_latent(backend, s) for s in seeds])
            cond = cond1.repeat(len(seeds), 1)
            null = null1.repeat(len(seeds), 1) if null1 is not None else None
            _, captures, _ = run_trajectory(
                backend,
                x,
                cond,
                num_steps=plan.num_steps,
                guidance_scale=plan.guidance_scale,
                null_cond=null,
                capture_timesteps=timesteps,
            )
            images = {t: backend.decode_latents(v) for t, v in captures.items()}
            embedded = {t: encoder.encode_images(img).cpu().numpy() for t, img in images.items()}
            for i, seed in enumerate(seeds):
                store.append_seed(seed, {t: embedded[t][i] for t in timesteps})
            done_so_far += len(seeds)
            if progress:
                progress(done_so_far, plan.num_seeds)
    return store
