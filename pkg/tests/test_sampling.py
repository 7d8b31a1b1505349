import numpy as np
import pytest
import torch

from sliderkit.errors import ContractViolation, IntegrityError
from sliderkit.sampling import (
    RecordStore,
    SamplingPlan,
    default_capture_timesteps,
    run_sampling,
)

from .conftest import PROMPT


def test_default_capture_timesteps():
    ts = default_capture_timesteps(50)
    assert ts == tuple(sorted(ts)) and len(ts) == 4
    assert min(ts) >= 4 and max(ts) <= 45
    with pytest.raises(ContractViolation):
        default_capture_timesteps(50, count=0)


def test_plan_validation_and_hash():
    plan = SamplingPlan(prompt=PROMPT, num_seeds=8)
    assert plan.seeds() == list(range(8))
    assert plan.plan_hash() == SamplingPlan(prompt=PROMPT, num_seeds=8).plan_hash()
    assert plan.plan_hash() != SamplingPlan(prompt=PROMPT, num_seeds=9).plan_hash()
    with pytest.raises(ContractViolation):
        SamplingPlan(prompt=PROMPT, num_seeds=0)
    with pytest.raises(ContractViolation):
        SamplingPlan(prompt=PROMPT, batch_size=0)


def test_resolve_timesteps_guards():
    plan = SamplingPlan(prompt=PROMPT, capture_timesteps=(5, 60))
    with pytest.raises(ContractViolation):
        plan.resolve_timesteps(50)
    ok = SamplingPlan(prompt=PROMPT, capture_timesteps=(40, 5))
    assert ok.resolve_timesteps(50) == (5, 40)


def test_store_append_and_idempotence():
    store = RecordStore(dim=3)
    store.append_seed(7, {10: np.ones(3), 2: np.zeros(3)})
    store.append_seed(7, {10: np.full(3, 9.0), 2: np.full(3, 9.0)})  # ignored
    assert len(store) == 2
    seeds, ts = store.index()
    assert seeds.tolist() == [7, 7] and ts.tolist() == [2, 10]  # timestep-ascending
    np.testing.assert_array_equal(store.rows_for_timestep(2), np.zeros((1, 3)))
    with pytest.raises(ContractViolation):
        store.append_seed(8, {2: np.zeros(4)})


def test_store_round_trip(tmp_path):
    store = RecordStore(dim=2, plan_hash="abc", metadata={"prompt": PROMPT})
    store.append_seed(0, {5: np.array([1.0, 2.0])})
    store.append_seed(1, {5: np.array([3.0, 4.0])})
    path = tmp_path / "records.trec"
    store.save(path)
    loaded = RecordStore.load(path, expect_plan_hash="abc")
    assert loaded.plan_hash == "abc" and loaded.completed_seeds == {0, 1}
    np.testing.assert_array_equal(loaded.matrix(), store.matrix())
    with pytest.raises(IntegrityError):
        RecordStore.load(path, expect_plan_hash="different")


def test_run_sampling_and_resume(backend, semantic_encoder):
    plan = SamplingPlan(prompt=PROMPT, num_seeds=6, batch_size=4)
    calls = []
    store = run_sampling(backend, semantic_encoder, plan, progress=lambda d, n: calls.append((d, n)))
    assert store.is_complete(plan)
    assert len(store) == 6 * len(plan.resolve_timesteps(backend.schedule.num_steps))
    assert calls[-1] == (6, 6)
    assert np.isfinite(store.matrix()).all()

    # resume: a store holding a prefix of the seeds only runs the rest
    partial = RecordStore(dim=semantic_encoder.dim, plan_hash=plan.plan_hash())
    seeds, ts = store.index()
    for s in (0, 1, 2):
        rows = {int(t): row for t, row, sd in zip(ts, store.matrix(), seeds) if sd == s}
        partial.append_seed(s, rows)
    resumed = run_sampling(backend, semantic_encoder, plan, store=partial)
    assert resumed.is_complete(plan)
    np.testing.assert_allclose(resumed.matrix(), store.matrix(), atol=1e-6)

    # complete store: running again appends nothing
    n_before = len(resumed)
    run_sampling(backend, semantic_encoder, plan, store=resumed)
    assert len(resumed) == n_before


def test_run_sampling_rejects_foreign_store(backend, semantic_encoder):
    plan = SamplingPlan(prompt=PROMPT, num_seeds=2)
    foreign = RecordStore(dim=semantic_encoder.dim, plan_hash="someone-else")
    with pytest.raises(IntegrityError):
        run_sampling(backend, semantic_encoder, plan, store=foreign)


def test_sampling_deterministic(backend, semantic_encoder):
    plan = SamplingPlan(prompt=PROMPT, num_seeds=3, batch_size=2)
    a = run_sampling(backend, semantic_encoder, plan).matrix()
    b = run_sampling(backend, semantic_encoder, plan).matrix()
    np.testing.assert_array_equal(a, b)
    # batch split must not change results
    c = run_sampling(backend, semantic_encoder, SamplingPlan(prompt=PROMPT, num_seeds=3, batch_size=3)).matrix()
    np.testing.assert_allclose(a, c, atol=1e-5)
