import pytest
import torch

from sliderkit.encoders import (
    PixelFlattenEncoder,
    ToyOracleEncoder,
    ToySemanticEncoder,
    get_encoder,
    list_encoders,
)
from sliderkit.errors import CapabilityError, ContractViolation, NotFoundError
from sliderkit.toyworld import FACTOR_NAMES, render


@pytest.fixture(scope="module")
def batch():
    f = torch.tensor(
        [
            [0.1, 0.5, 1.0, 0.8],
            [0.9, 0.5, 1.0, 0.8],
            [0.5, 0.2, 0.0, 0.3],
        ]
    )
    return f, render(f)


def test_registry_contents():
    names = list_encoders()
    assert {"toy-oracle", "toy-semantic", "pixel-flatten"} <= set(names)
    with pytest.raises(NotFoundError):
        get_encoder("not-an-encoder")


def test_descriptors():
    for name in ("toy-oracle", "toy-semantic", "pixel-flatten"):
        enc = get_encoder(name)
        desc = enc.descriptor()
        assert desc.name == name and desc.dim == enc.dim
        assert desc.to_dict()["differentiable"] is True
    sem = ToySemanticEncoder(seed=7, bias=1.5)
    assert sem.descriptor().params == {"seed": 7, "bias": 1.5}


def test_oracle_tracks_factors(batch):
    factors, images = batch
    enc = ToyOracleEncoder()
    assert enc.factor_names == FACTOR_NAMES
    emb = enc.encode_images(images)
    assert emb.shape == (3, 4)
    # hue dominates the first two rows' difference
    diff = emb[1] - emb[0]
    assert abs(float(diff[0])) > 3 * float(diff[1:].abs().max())


def test_semantic_embeddings_unit_norm(batch):
    _, images = batch
    emb = ToySemanticEncoder().encode_images(images)
    assert emb.shape == (3, 17)
    torch.testing.assert_close(emb.norm(dim=1), torch.ones(3), atol=1e-5, rtol=0)


def test_semantic_bias_cone(batch):
    _, images = batch
    emb = ToySemanticEncoder().encode_images(images)
    # all embeddings stay inside one cone: pairwise cosine is strongly positive
    cos = emb @ emb.T
    assert float(cos.min()) > 0.5
    # but the factor contrast survives in differences
    assert float((emb[1] - emb[0]).norm()) > 0.1


def test_semantic_text_and_image_agree():
    enc = ToySemanticEncoder()
    img = enc.encode_images(render(torch.tensor([[0.95, 0.5, 1.0, 0.8]])))
    blue = enc.encode_text(["a blue square"])
    red = enc.encode_text(["a red square"])
    assert float(img @ blue.T) > float(img @ red.T)


def test_semantic_deterministic(batch):
    _, images = batch
    a = ToySemanticEncoder().encode_images(images)
    b = ToySemanticEncoder().encode_images(images)
    assert torch.equal(a, b)
    c = ToySemanticEncoder(seed=202).encode_images(images)
    assert not torch.allclose(a, c)


def test_semantic_differentiable(batch):
    _, images = batch
    images = images.clone().requires_grad_(True)
    ToySemanticEncoder().encode_images(images).sum().backward()
    assert torch.isfinite(images.grad).all()


def test_pixel_flatten(batch):
    _, images = batch
    enc = PixelFlattenEncoder()
    emb = enc.encode_images(images)
    assert emb.shape == (3, 768)
    # pooling preserves the global mean
    torch.testing.assert_close(emb.mean(dim=1), images.mean(dim=(1, 2, 3)))
    with pytest.raises(ContractViolation):
        enc.encode_images(torch.zeros(1, 3, 15, 15))
    with pytest.raises(CapabilityError):
        enc.encode_text(["anything"])
