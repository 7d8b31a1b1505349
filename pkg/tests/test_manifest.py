import json

import numpy as np
import pytest
import torch

from sliderkit.adapters import LowRankAdapter
from sliderkit.decomposition import fit_pca
from sliderkit.errors import ContractViolation, IntegrityError, ValidationError
from sliderkit.manifest import (
    MANIFEST_NAME,
    SliderEntry,
    SliderManifest,
    load_manifest,
    read_directions_file,
    save_manifest,
    write_directions_file,
)

from .conftest import PROMPT


def _adapter(adapter_id, pc_index, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return LowRankAdapter(
        adapter_id=adapter_id,
        target_layer="cond_proj",
        rank=1,
        down=torch.randn(1, 32, generator=gen),
        up=torch.randn(32, 1, generator=gen),
        metadata={"pc_index": pc_index, "mode": "semantic"},
    )


@pytest.fixture()
def saved(tmp_path):
    rng = np.random.default_rng(0)
    directions = fit_pca(rng.normal(size=(40, 17)), 3, encoder_name="toy-semantic")
    adapters = {f"slider-{i:02d}": _adapter(f"slider-{i:02d}", i, seed=i) for i in range(2)}
    manifest = save_manifest(
        tmp_path, PROMPT, "toy", "toy-semantic", adapters, directions,
        provenance={"config_hash": "deadbeef"},
    )
    return tmp_path, manifest, adapters, directions


def test_round_trip_structural_equality(saved):
    root, manifest, adapters, directions = saved
    bundle = load_manifest(root)
    assert bundle.manifest.to_document() == manifest.to_document()
    assert bundle.manifest_hash == manifest.manifest_hash()
    assert sorted(bundle.adapters) == sorted(adapters)
    for sid, adapter in adapters.items():
        got = bundle.adapters[sid]
        assert torch.equal(got.down, adapter.down) and torch.equal(got.up, adapter.up)
        assert got.metadata["pc_index"] == adapter.metadata["pc_index"]
    np.testing.assert_allclose(bundle.directions.components, directions.components, atol=1e-7)
    entry = bundle.manifest.slider("slider-00")
    assert entry.pc_index == 0
    assert entry.explained_variance_share == pytest.approx(
        float(directions.explained_variance_ratio[0])
    )


def test_hash_excludes_timestamps(saved, tmp_path_factory):
    root, manifest, adapters, directions = saved
    other = tmp_path_factory.mktemp("resave")
    again = save_manifest(
        other, PROMPT, "toy", "toy-semantic", adapters, directions,
        provenance={"config_hash": "deadbeef"},
    )
    assert again.manifest_hash() == manifest.manifest_hash()
    # but the hash does change with content
    relabeled = save_manifest(
        other, PROMPT, "toy", "toy-semantic", adapters, directions,
        provenance={"config_hash": "deadbeef"}, labels={"slider-00": "hue increase"},
        label_source="machine",
    )
    assert relabeled.manifest_hash() != manifest.manifest_hash()


def test_corrupted_sidecar_refused_by_name(saved):
    root, *_ = saved
    victim = root / "sliders" / "slider-01.trec"
    data = bytearray(victim.read_bytes())
    data[-1] ^= 0xFF
    victim.write_bytes(bytes(data))
    with pytest.raises(IntegrityError, match="slider-01.trec"):
        load_manifest(root)


def test_missing_sidecar_refused_by_name(saved):
    root, *_ = saved
    (root / "directions.trec").unlink()
    with pytest.raises(IntegrityError, match="directions.trec"):
        load_manifest(root)


def test_unknown_version_refused(saved):
    root, *_ = saved
    doc = json.loads((root / MANIFEST_NAME).read_text())
    doc["manifest_version"] = 99
    (root / MANIFEST_NAME).write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="manifest_version"):
        load_manifest(root)


def test_malformed_document_refused(saved):
    root, *_ = saved
    doc = json.loads((root / MANIFEST_NAME).read_text())
    del doc["prompt"]
    (root / MANIFEST_NAME).write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="malformed"):
        load_manifest(root)
    (root / MANIFEST_NAME).write_text("{ not json")
    with pytest.raises(ValidationError, match="JSON"):
        load_manifest(root)
    (root / MANIFEST_NAME).unlink()
    with pytest.raises(ValidationError):
        load_manifest(root)


def _entries(n, n_components=4):
    return [
        SliderEntry(f"s{i}", i, 0.1, f"sliders/s{i}.trec", "0" * 64) for i in range(n)
    ]


def test_manifest_validation():
    with pytest.raises(ContractViolation, match="n=3"):
        SliderManifest(PROMPT, "toy", "enc", 3, _entries(2), "d.trec", "0" * 64, 4)
    dup = _entries(2)
    dup[1].pc_index = 0
    with pytest.raises(ContractViolation, match="distinct"):
        SliderManifest(PROMPT, "toy", "enc", 2, dup, "d.trec", "0" * 64, 4)
    high = _entries(2)
    high[1].pc_index = 9
    with pytest.raises(ContractViolation, match="outside"):
        SliderManifest(PROMPT, "toy", "enc", 2, high, "d.trec", "0" * 64, 4)
    good = SliderManifest(PROMPT, "toy", "enc", 2, _entries(2), "d.trec", "0" * 64, 4)
    with pytest.raises(ContractViolation, match="no slider"):
        good.slider("missing")


def test_document_round_trip():
    manifest = SliderManifest(PROMPT, "toy", "enc", 2, _entries(2), "d.trec", "0" * 64, 4,
                              provenance={"seed": 0})
    again = SliderManifest.from_document(manifest.to_document())
    assert again == manifest
    assert again.manifest_hash() == manifest.manifest_hash()


def test_directions_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    directions = fit_pca(rng.normal(size=(30, 8)), 5, encoder_name="enc")
    path = tmp_path / "d.trec"
    write_directions_file(path, directions)
    back = read_directions_file(path)
    np.testing.assert_allclose(back.components, directions.components, atol=1e-7)
    np.testing.assert_allclose(back.explained_variance, directions.explained_variance)
    assert back.n_samples == 30 and back.encoder_name == "enc"
    assert back.degenerate_indices == directions.degenerate_indices
    assert back.params == directions.params
