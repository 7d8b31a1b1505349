import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sliderkit.toyworld import (
    FACTOR_NAMES,
    IMAGE_SIZE,
    caption_for,
    estimate_factors,
    make_dataset,
    render,
    sample_factors,
)


def test_sample_factors_ranges():
    f = sample_factors(200, torch.Generator().manual_seed(3))
    assert f.shape == (200, 4)
    assert float(f.min()) >= 0.0 and float(f.max()) <= 1.0
    # shape factor is binarized
    assert set(f[:, 2].unique().tolist()) <= {0.0, 1.0}


def test_render_shape_and_range():
    img = render(torch.tensor([[0.5, 0.5, 1.0, 0.8]]))
    assert img.shape == (1, 3, IMAGE_SIZE, IMAGE_SIZE)
    assert float(img.min()) >= 0.0 and float(img.max()) <= 1.0
    # 1d input broadcasts to a batch of one
    assert render(torch.tensor([0.5, 0.5, 1.0, 0.8])).shape == img.shape


def test_estimate_inverts_render():
    gen = torch.Generator().manual_seed(11)
    factors = sample_factors(64, gen)
    est = estimate_factors(render(factors))
    err = (est - factors).abs()
    # hue/brightness recover tightly; size has a soft-edge bias but stays
    # monotone; shape only needs the right side of 0.5
    assert float(err[:, 0].max()) < 0.08
    assert float(err[:, 1].max()) < 0.30
    assert float(err[:, 3].max()) < 0.08
    assert ((est[:, 2] > 0.5) == (factors[:, 2] > 0.5)).all()


def test_estimates_monotone_in_each_factor():
    levels = torch.linspace(0.1, 0.9, 7)
    for idx, name in enumerate(FACTOR_NAMES):
        if name == "shape":
            continue
        base = torch.full((7, 4), 0.5)
        base[:, 2] = 1.0
        base[:, idx] = levels
        est = estimate_factors(render(base))[:, idx]
        assert (est.diff() > 0).all(), name


def test_estimate_is_differentiable():
    factors = torch.tensor([[0.5, 0.5, 1.0, 0.7]])
    img = render(factors).requires_grad_(True)
    estimate_factors(img)[0, 0].backward()
    assert img.grad is not None
    assert torch.isfinite(img.grad).all()


def test_caption_bands():
    assert caption_for(torch.tensor([0.5, 0.5, 1.0, 0.8])) == "a medium purple square on a bright background"
    assert caption_for(torch.tensor([0.1, 0.9, 0.0, 0.5])) == "a large red disc"
    assert caption_for(torch.tensor([0.9, 0.1, 0.0, 0.1])) == "a small blue disc on a dark background"
    assert caption_for(torch.tensor([0.5, 0.5, 1.0, 0.8]), plain=True) == "a shape"


def test_make_dataset_deterministic():
    f1, i1, c1 = make_dataset(16, seed=5)
    f2, i2, c2 = make_dataset(16, seed=5)
    assert torch.equal(f1, f2) and torch.equal(i1, i2) and c1 == c2
    assert any(c == "a shape" for c in c1) and any(c != "a shape" for c in c1)


@settings(max_examples=30, deadline=None)
@given(
    hue=st.floats(0.05, 0.95),
    size=st.floats(0.1, 0.9),
    shape=st.sampled_from([0.0, 1.0]),
    bright=st.floats(0.1, 0.9),
)
def test_round_trip_property(hue, size, shape, bright):
    factors = torch.tensor([[hue, size, shape, bright]])
    est = estimate_factors(render(factors))[0]
    assert abs(float(est[0]) - hue) < 0.1
    assert abs(float(est[3]) - bright) < 0.1
    assert (float(est[2]) > 0.5) == (shape > 0.5)
