"""Staged, resumable discovery runs rooted in one directory.

A workspace owns every artifact for a single discovery configuration:

    config.json            the pinned configuration (mixing configs is refused)
    records.trec           sampled embedding records
    directions.trec        fitted principal directions
    manifest.json, sliders/   the trained slider manifest and its sidecars
    training_report.json
    evaluation.json
    markers/<stage>.json   stage-completion markers

Stages run in the fixed order sampled -> decomposed -> trained ->
evaluated. A stage is skipped when its marker is present, so deleting
exactly one marker re-runs exactly that stage; markers are only ever
written after the stage's artifacts, and never out of order.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from .composer import GenerationRequest, generate
from .config import config_hash
from .decomposition import PrincipalDirections, fit_pca
from .encoders import get_encoder
from .errors import ContractViolation, ValidationError
from .evaluation import (
    diversity_protocol,
    factor_correlation,
    factor_shift_captioner,
    label_sliders,
    mutual_coherence,
    orthogonality_gap,
)
from .manifest import (
    DIRECTIONS_NAME,
    MANIFEST_NAME,
    ManifestBundle,
    load_manifest,
    read_directions_file,
    save_manifest,
    write_directions_file,
)
from .sampling import RecordStore, SamplingPlan, run_sampling
from .training import OBJECTIVE_MODES, TrainingConfig, train_sliders

STAGES = ("sampled", "decomposed", "trained", "evaluated")

CONFIG_NAME = "config.json"
RECORDS_NAME = "records.trec"
REPORT_NAME = "training_report.json"
EVALUATION_NAME = "evaluation.json"
MARKERS_DIR = "markers"


@dataclass(frozen=True)
class DiscoveryConfig:
    """Everything a discovery run depends on, hashable for the config guard."""

    prompt: str
    backend_id: str = "toy"
    encoder_id: str = "toy-semantic"
    oracle_encoder_id: str = ""
    num_seeds: int = 256
    num_sliders: int = 4
    rank: int = 1
    mode: str = "semantic"
    steps_per_slider: int = 500
    batch_size: int = 4
    lr: float = 2e-4
    seed: int = 0
    capture_timesteps: tuple[int, ...] = ()
    eval_probes: int = 24
    eval_k: int = 3
    eval_seeds: int = 20

    def __post_init__(self):
        object.__setattr__(self, "capture_timesteps", tuple(int(t) for t in self.capture_timesteps))
        if not self.prompt:
            raise ContractViolation("prompt must be non-empty")
        if self.mode not in OBJECTIVE_MODES:
            raise ContractViolation(f"mode must be one of {OBJECTIVE_MODES}, got {self.mode!r}")
        for name in ("num_seeds", "num_sliders", "rank", "steps_per_slider", "batch_size",
                     "eval_probes", "eval_seeds"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        if self.eval_k < 0:
            raise ContractViolation("eval_k must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc["capture_timesteps"] = list(doc["capture_timesteps"])
        return config_hash(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscoveryConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown discovery config keys: {sorted(unknown)}")
        return cls(**doc)

    def sampling_plan(self) -> SamplingPlan:
        return SamplingPlan(
            prompt=self.prompt,
            num_seeds=self.num_seeds,
            capture_timesteps=self.capture_timesteps,
            encoder_name=self.encoder_id,
        )

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            prompt=self.prompt,
            num_sliders=self.num_sliders,
            rank=self.rank,
            mode=self.mode,
            steps_per_slider=self.steps_per_slider,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed,
        )


class Workspace:
    """One discovery run's directory, with stage-granular resume."""

    def __init__(self, root, config: DiscoveryConfig | None = None, backend=None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / MARKERS_DIR).mkdir(exist_ok=True)
        stored = self._read_config()
        if stored is None:
            if config is None:
                raise ValidationError(f"no {CONFIG_NAME} under {self.root} and no config given")
            self.config = config
            self._write_config()
        else:
            if config is not None and config.config_hash() != stored.config_hash():
                raise ValidationError(
                    "workspace was created with a different configuration; "
                    "use a fresh directory or pass no config to resume"
                )
            self.config = stored
        self._backend = backend
        self._encoder = None

    # -- configuration ------------------------------------------------

    def _read_config(self) -> DiscoveryConfig | None:
        path = self.root / CONFIG_NAME
        if not path.exists():
            return None
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"corrupt {CONFIG_NAME}: {exc}") from exc
        doc["capture_timesteps"] = tuple(doc.get("capture_timesteps", ()))
        return DiscoveryConfig.from_dict(doc)

    def _write_config(self):
        doc = self.config.to_dict()
        doc["capture_timesteps"] = list(doc["capture_timesteps"])
        (self.root / CONFIG_NAME).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    # -- lazy heavyweight dependencies ---------------------------------

    @property
    def backend(self):
        if self._backend is None:
            from .backends import get_backend

            self._backend = get_backend(self.config.backend_id)
        return self._backend

    @property
    def encoder(self):
        if self._encoder is None:
            self._encoder = get_encoder(self.config.encoder_id)
        return self._encoder

    # -- stage markers --------------------------------------------------

    def _marker_path(self, stage: str) -> Path:
        if stage not in STAGES:
            raise ContractViolation(f"unknown stage {stage!r}; stages are {STAGES}")
        return self.root / MARKERS_DIR / f"{stage}.json"

    def stage_complete(self, stage: str) -> bool:
        return self._marker_path(stage).exists()

    def completed_stages(self) -> list[str]:
        return [s for s in STAGES if self.stage_complete(s)]

    def _mark(self, stage: str):
        index = STAGES.index(stage)
        for earlier in STAGES[:index]:
            if not self.stage_complete(earlier):
                raise ContractViolation(f"cannot mark {stage!r} before {earlier!r} is complete")
        doc = {
            "stage": stage,
            "config_hash": self.config.config_hash(),
            "completed": datetime.now(timezone.utc).isoformat(),
        }
        self._marker_path(stage).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def reset_stage(self, stage: str):
        """Drop one stage's marker so the next ensure() re-runs just it."""
        self._marker_path(stage).unlink(missing_ok=True)

    # -- stage bodies ---------------------------------------------------

    def _run_sampled(self, progress=None):
        plan = self.config.sampling_plan()
        path = self.root / RECORDS_NAME
        store = RecordStore.load(path, expect_plan_hash=plan.plan_hash()) if path.exists() else None
        store = run_sampling(self.backend, self.encoder, plan, store=store, progress=progress)
        store.save(path)

    def _run_decomposed(self, progress=None):
        plan = self.config.sampling_plan()
        store = RecordStore.load(self.root / RECORDS_NAME, expect_plan_hash=plan.plan_hash())
        directions = fit_pca(store.matrix(), self.config.num_sliders,
                             encoder_name=self.config.encoder_id)
        write_directions_file(self.root / DIRECTIONS_NAME, directions)

    def _run_trained(self, progress=None):
        directions = read_directions_file(self.root / DIRECTIONS_NAME)
        train_cfg = self.config.training_config()
        needs_semantics = train_cfg.mode != "customization"
        adapters, report = train_sliders(
            self.backend,
            train_cfg,
            directions=directions if needs_semantics else None,
            encoder=self.encoder if needs_semantics else None,
            progress=progress,
        )
        plan = self.config.sampling_plan()
        provenance = {
            "config_hash": self.config.config_hash(),
            "training_config_hash": config_hash(train_cfg.to_dict()),
            "objective_mode": train_cfg.mode,
            "seeds": {
                "training": train_cfg.seed,
                "sampling_base": plan.base_seed,
                "sampling_count": plan.num_seeds,
            },
            "plan_hash": plan.plan_hash(),
        }
        save_manifest(
            self.root,
            prompt=self.config.prompt,
            backend_id=self.config.backend_id,
            encoder_id=self.config.encoder_id,
            adapters=adapters,
            directions=directions,
            provenance=provenance,
        )
        (self.root / REPORT_NAME).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")

    def _run_evaluated(self, progress=None):
        bundle = load_manifest(self.root)
        cfg = self.config
        diversity = diversity_protocol(
            self.backend, bundle.adapters, self.encoder, cfg.prompt,
            num_probes=cfg.eval_probes, k=cfg.eval_k, seed=cfg.seed,
        )
        doc = {
            "manifest_hash": bundle.manifest_hash,
            "diversity": diversity.to_dict(),
        }
        report_path = self.root / REPORT_NAME
        if report_path.exists():
            report = json.loads(report_path.read_text())
            effects = np.asarray(report.get("effect_vectors", []), dtype=np.float64)
            if effects.size:
                gap, diag, off = orthogonality_gap(effects, bundle.directions.components[: len(effects)])
                doc["orthogonality"] = {
                    "gap": gap, "aligned_mean": diag, "cross_mean": off,
                    "mutual_coherence": mutual_coherence(effects),
                }
        if cfg.oracle_encoder_id:
            oracle = get_encoder(cfg.oracle_encoder_id)
            correlations = {}
            for entry in bundle.manifest.sliders:
                metric = factor_correlation(
                    self.backend, bundle.adapters, oracle, cfg.prompt, entry.adapter_id,
                    num_seeds=cfg.eval_seeds,
                )
                correlations[entry.adapter_id] = metric.to_dict()
            doc["factor_correlations"] = correlations
        (self.root / EVALUATION_NAME).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    # -- orchestration ----------------------------------------------------

    def ensure(self, through: str = "trained", progress: Callable[[str, str], None] | None = None):
        """Run every incomplete stage up to and including `through`.

        Completed stages are skipped outright, which is what makes a
        second identical discover() a no-op with an unchanged manifest.
        """
        if through not in STAGES:
            raise ContractViolation(f"unknown stage {through!r}; stages are {STAGES}")
        bodies = {
            "sampled": self._run_sampled,
            "decomposed": self._run_decomposed,
            "trained": self._run_trained,
            "evaluated": self._run_evaluated,
        }
        for stage in STAGES[: STAGES.index(through) + 1]:
            if self.stage_complete(stage):
                if progress:
                    progress(stage, "skipped")
                continue
            if progress:
                progress(stage, "running")
            bodies[stage]()
            self._mark(stage)
            if progress:
                progress(stage, "done")

    def discover(self, progress=None) -> ManifestBundle:
        """Sample, decompose, and train; returns the resulting bundle."""
        self.ensure("trained", progress=progress)
        return self.bundle()

    def evaluate(self, progress=None) -> dict:
        self.ensure("evaluated", progress=progress)
        return json.loads((self.root / EVALUATION_NAME).read_text())

    def bundle(self) -> ManifestBundle:
        if not self.stage_complete("trained"):
            raise ValidationError("workspace has no trained manifest yet; run discover first")
        return load_manifest(self.root)

    def label(self, seeds=(0, 1), scale: float = 1.0) -> dict[str, str]:
        """Caption each slider and write the labels back into the manifest."""
        bundle = self.bundle()
        labels = label_sliders(self.backend, bundle.adapters, self.config.prompt,
                               factor_shift_captioner, seeds=seeds, scale=scale)
        save_manifest(
            self.root,
            prompt=bundle.manifest.prompt,
            backend_id=bundle.manifest.backend_id,
            encoder_id=bundle.manifest.encoder_id,
            adapters=bundle.adapters,
            directions=bundle.directions,
            provenance=bundle.manifest.provenance,
            labels=labels,
            label_source="machine",
        )
        return labels

    def export(self, dest) -> Path:
        """Copy the manifest bundle (and nothing else) to a new directory."""
        bundle = self.bundle()
        dest = Path(dest)
        if dest.exists() and any(dest.iterdir()):
            raise ValidationError(f"export destination {dest} is not empty")
        dest.mkdir(parents=True, exist_ok=True)
        shutil.copy2(self.root / MANIFEST_NAME, dest / MANIFEST_NAME)
        shutil.copy2(self.root / bundle.manifest.directions_file, dest / bundle.manifest.directions_file)
        for entry in bundle.manifest.sliders:
            target = dest / entry.weight_file
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copy2(self.root / entry.weight_file, target)
        load_manifest(dest)
        return dest

    def generate_image(self, request: GenerationRequest):
        bundle = self.bundle()
        return generate(self.backend, request, adapters=bundle.adapters)
