"""Persisted form of a discovered slider set.

A manifest directory holds one human-readable JSON document plus binary
tensor-record sidecars: one per slider (adapter factors) and one bundle
for the principal directions. The document carries a checksum for every
sidecar; loading verifies them and refuses mismatches by name.

The manifest hash is the sha256 of the canonical (sorted, whitespace-
free) JSON with timestamps stripped, so re-running an identical
discovery yields an identical hash even though the wall clock moved.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from .adapters import LowRankAdapter
from .config import canonical_json
from .decomposition import PrincipalDirections
from .errors import ContractViolation, IntegrityError, ValidationError
from .tensorio import read_tensor_file, sha256_file, write_tensor_file

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
DIRECTIONS_NAME = "directions.trec"
SLIDERS_DIR = "sliders"


@dataclass
class SliderEntry:
    adapter_id: str
    pc_index: int
    explained_variance_share: float
    weight_file: str
    checksum: str
    label: str = ""
    label_source: str = ""

    def to_dict(self) -> dict:
        return {
            "adapter_id": self.adapter_id,
            "pc_index": self.pc_index,
            "explained_variance_share": self.explained_variance_share,
            "weight_file": self.weight_file,
            "checksum": self.checksum,
            "label": self.label,
            "label_source": self.label_source,
        }


@dataclass
class SliderManifest:
    prompt: str
    backend_id: str
    encoder_id: str
    n: int
    sliders: list[SliderEntry]
    directions_file: str
    directions_checksum: str
    n_components: int
    provenance: dict = field(default_factory=dict)
    manifest_version: int = MANIFEST_VERSION

    def __post_init__(self):
        if len(self.sliders) != self.n:
            raise ContractViolation(f"manifest lists {len(self.sliders)} sliders but n={self.n}")
        pcs = [s.pc_index for s in self.sliders]
        if len(set(pcs)) != len(pcs):
            raise ContractViolation("pc_index values must be distinct")
        bad = [p for p in pcs if not 0 <= p < self.n_components]
        if bad:
            raise ContractViolation(f"pc_index values {bad} outside fitted component count {self.n_components}")

    def slider(self, adapter_id: str) -> SliderEntry:
        for entry in self.sliders:
            if entry.adapter_id == adapter_id:
                return entry
        raise ContractViolation(f"manifest has no slider {adapter_id!r}")

    def to_document(self) -> dict:
        return {
            "manifest_version": self.manifest_version,
            "prompt": self.prompt,
            "backend_id": self.backend_id,
            "encoder_id": self.encoder_id,
            "n": self.n,
            "n_components": self.n_components,
            "sliders": [s.to_dict() for s in self.sliders],
            "directions": {"file": self.directions_file, "checksum": self.directions_checksum},
            "provenance": dict(self.provenance),
        }

    def manifest_hash(self) -> str:
        doc = self.to_document()
        doc.get("provenance", {}).pop("timestamps", None)
        return hashlib.sha256(canonical_json(doc).encode()).hexdigest()

    @classmethod
    def from_document(cls, doc: dict) -> "SliderManifest":
        version = doc.get("manifest_version")
        if version != MANIFEST_VERSION:
            raise ValidationError(
                f"unsupported manifest_version {version!r}; this build reads version {MANIFEST_VERSION}"
            )
        try:
            sliders = [SliderEntry(**entry) for entry in doc["sliders"]]
            return cls(
                prompt=doc["prompt"],
                backend_id=doc["backend_id"],
                encoder_id=doc["encoder_id"],
                n=int(doc["n"]),
                sliders=sliders,
                directions_file=doc["directions"]["file"],
                directions_checksum=doc["directions"]["checksum"],
                n_components=int(doc["n_components"]),
                provenance=dict(doc.get("provenance", {})),
                manifest_version=int(version),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed manifest document: {exc}") from exc


@dataclass
class ManifestBundle:
    """A manifest plus its deserialized tensors, ready to serve."""

    manifest: SliderManifest
    adapters: dict[str, LowRankAdapter]
    directions: PrincipalDirections
    root: Path

    @property
    def manifest_hash(self) -> str:
        return self.manifest.manifest_hash()


def write_directions_file(path, directions: PrincipalDirections) -> str:
    return write_tensor_file(
        Path(path),
        directions.to_arrays(),
        {"encoder_name": directions.encoder_name, "n_samples": directions.n_samples,
         "params": directions.params},
    )


def read_directions_file(path) -> PrincipalDirections:
    arrays, meta = read_tensor_file(Path(path))
    return PrincipalDirections.from_arrays(
        arrays,
        n_samples=int(meta.get("n_samples", 0)),
        encoder_name=str(meta.get("encoder_name", "")),
        params=dict(meta.get("params", {})),
    )


def _write_adapter(path: Path, adapter: LowRankAdapter) -> str:
    meta = {
        "adapter_id": adapter.adapter_id,
        "target_layer": adapter.target_layer,
        "rank": adapter.rank,
        "metadata": {k: v for k, v in adapter.metadata.items() if isinstance(v, (str, int, float, bool))},
    }
    return write_tensor_file(path, adapter.to_arrays(), meta)


def _read_adapter(path: Path) -> LowRankAdapter:
    arrays, meta = read_tensor_file(path)
    return LowRankAdapter(
        adapter_id=str(meta["adapter_id"]),
        target_layer=str(meta["target_layer"]),
        rank=int(meta["rank"]),
        down=torch.from_numpy(np.asarray(arrays["down"], dtype=np.float32)),
        up=torch.from_numpy(np.asarray(arrays["up"], dtype=np.float32)),
        metadata=dict(meta.get("metadata", {})),
    )


def save_manifest(
    root,
    prompt: str,
    backend_id: str,
    encoder_id: str,
    adapters: dict[str, LowRankAdapter],
    directions: PrincipalDirections,
    provenance: dict | None = None,
    labels: dict[str, str] | None = None,
    label_source: str = "",
) -> SliderManifest:
    """Write manifest.json plus sidecars under root; returns the manifest.

    Slider order follows sorted adapter ids; each adapter's pc_index
    comes from its metadata (falling back to its position).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / SLIDERS_DIR).mkdir(exist_ok=True)
    labels = labels or {}
    directions_checksum = write_directions_file(root / DIRECTIONS_NAME, directions)
    entries = []
    for position, adapter_id in enumerate(sorted(adapters)):
        adapter = adapters[adapter_id]
        rel = f"{SLIDERS_DIR}/{adapter_id}.trec"
        checksum = _write_adapter(root / rel, adapter)
        pc_index = int(adapter.metadata.get("pc_index", position))
        share = float(directions.explained_variance_ratio[pc_index]) if pc_index < directions.n_components else 0.0
        entries.append(SliderEntry(
            adapter_id=adapter_id,
            pc_index=pc_index,
            explained_variance_share=share,
            weight_file=rel,
            checksum=checksum,
            label=labels.get(adapter_id, ""),
            label_source=label_source if adapter_id in labels else "",
        ))
    provenance = dict(provenance or {})
    provenance.setdefault("timestamps", {})["saved"] = datetime.now(timezone.utc).isoformat()
    manifest = SliderManifest(
        prompt=prompt,
        backend_id=backend_id,
        encoder_id=encoder_id,
        n=len(entries),
        sliders=entries,
        directions_file=DIRECTIONS_NAME,
        directions_checksum=directions_checksum,
        n_components=directions.n_components,
        provenance=provenance,
    )
    (root / MANIFEST_NAME).write_text(json.dumps(manifest.to_document(), indent=2, sort_keys=True) + "\n")
    return manifest


def _verify_checksum(path: Path, expected: str) -> None:
    if not path.exists():
        raise IntegrityError(f"manifest references missing file {path.name}")
    actual = sha256_file(path)
    if actual != expected:
        raise IntegrityError(f"checksum mismatch for {path.name}: recorded {expected[:12]}..., found {actual[:12]}...")


def load_manifest(root) -> ManifestBundle:
    """Read and verify a manifest directory; checksum failures refuse the load."""
    root = Path(root)
    doc_path = root / MANIFEST_NAME
    if not doc_path.exists():
        raise ValidationError(f"no {MANIFEST_NAME} under {root}")
    try:
        doc = json.loads(doc_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest document is not valid JSON: {exc}") from exc
    manifest = SliderManifest.from_document(doc)
    directions_path = root / manifest.directions_file
    _verify_checksum(directions_path, manifest.directions_checksum)
    directions = read_directions_file(directions_path)
    adapters = {}
    for entry in manifest.sliders:
        weight_path = root / entry.weight_file
        _verify_checksum(weight_path, entry.checksum)
        adapters[entry.adapter_id] = _read_adapter(weight_path)
    return ManifestBundle(manifest=manifest, adapters=adapters, directions=directions, root=root)
