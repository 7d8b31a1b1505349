import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sliderkit.decomposition import PrincipalDirections, fit_pca, variance_spectrum
from sliderkit.errors import ContractViolation


def eig_oracle(X, k):
    """Covariance eigendecomposition, the independent reference for fit_pca."""
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    return evals[order][:k], evecs[:, order][:, :k].T


def test_matches_eigendecomposition_oracle():
    rng = np.random.default_rng(17)
    for trial in range(20):
        n = int(rng.integers(10, 201))
        d = int(rng.integers(4, 65))
        k = int(rng.integers(1, min(n - 1, d) + 1))
        X = rng.normal(size=(n, d)) @ np.diag(rng.uniform(0.1, 3.0, size=d))
        got = fit_pca(X, k)
        evals, evecs = eig_oracle(X, k)
        np.testing.assert_allclose(got.explained_variance, evals, rtol=1e-6, atol=1e-9)
        for i in range(k):
            # eigenvectors match up to sign
            dot = abs(float(got.components[i] @ evecs[i]))
            assert dot == pytest.approx(1.0, abs=1e-6), (trial, i)


def test_components_orthonormal():
    rng = np.random.default_rng(5)
    for _ in range(10):
        X = rng.normal(size=(60, 12))
        got = fit_pca(X, 8)
        gram = got.components @ got.components.T
        np.testing.assert_allclose(gram, np.eye(8), atol=1e-6)


def test_sign_convention_deterministic():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 6))
    a = fit_pca(X, 4)
    b = fit_pca(-X + 2 * X.mean(axis=0), 4)  # reflected data, same covariance
    np.testing.assert_allclose(a.components, b.components, atol=1e-8)
    for row in a.components:
        lead = row[np.abs(row) > 1e-12][0]
        assert lead > 0


def test_degenerate_components_zero_padded():
    rng = np.random.default_rng(3)
    # rank-2 data embedded in 10 dims
    basis = rng.normal(size=(2, 10))
    X = rng.normal(size=(50, 2)) @ basis
    got = fit_pca(X, 5)
    assert got.degenerate_indices == (2, 3, 4)
    np.testing.assert_array_equal(got.components[2:], np.zeros((3, 10)))
    np.testing.assert_array_equal(got.explained_variance[2:], np.zeros(3))
    assert got.params["rank"] == 2


def test_ratio_sums_to_one_when_full_rank():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 5))
    got = fit_pca(X, 5)
    assert float(got.explained_variance_ratio.sum()) == pytest.approx(1.0, abs=1e-9)
    assert (np.diff(got.explained_variance) <= 1e-12).all()  # sorted descending


def test_project_and_direction():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(30, 4))
    got = fit_pca(X, 3)
    coords = got.project(X, k=2)
    assert coords.shape == (30, 2)
    # projection of the mean itself is zero
    np.testing.assert_allclose(got.project(got.mean), np.zeros((1, 3)), atol=1e-9)
    # per-component projection variance equals the eigenvalue
    np.testing.assert_allclose(coords.var(axis=0, ddof=1), got.explained_variance[:2], rtol=1e-9)
    np.testing.assert_array_equal(got.direction(0), got.components[0])
    with pytest.raises(ContractViolation):
        got.direction(3)
    with pytest.raises(ContractViolation):
        got.project(np.zeros((2, 9)))


def test_uncentered_mode():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(20, 3)) + 5.0
    got = fit_pca(X, 1, center=False)
    np.testing.assert_array_equal(got.mean, np.zeros(3))
    # without centering the offset direction dominates
    offset = np.ones(3) / np.sqrt(3)
    assert abs(float(got.components[0] @ offset)) > 0.99


def test_validation():
    with pytest.raises(ContractViolation):
        fit_pca(np.zeros((1, 4)), 1)
    with pytest.raises(ContractViolation):
        fit_pca(np.zeros((4, 4)), 0)
    with pytest.raises(ContractViolation):
        fit_pca(np.zeros(4), 1)


def test_arrays_round_trip():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(25, 6))
    got = fit_pca(X, 6, encoder_name="enc")
    back = PrincipalDirections.from_arrays(
        got.to_arrays(), n_samples=got.n_samples, encoder_name=got.encoder_name, params=got.params
    )
    np.testing.assert_allclose(back.components, got.components, atol=1e-7)
    np.testing.assert_allclose(back.explained_variance, got.explained_variance)
    assert back.degenerate_indices == got.degenerate_indices
    assert back.n_samples == 25 and back.encoder_name == "enc"


def test_variance_spectrum():
    rng = np.random.default_rng(9)
    got = fit_pca(rng.normal(size=(40, 4)), 4)
    spec = variance_spectrum(got)
    assert spec["cumulative_ratio"][-1] == pytest.approx(1.0, abs=1e-9)
    assert spec["n_samples"] == 40
    assert len(spec["explained_variance"]) == 4


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 40), d=st.integers(2, 12))
def test_orthonormality_property(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    k = min(n - 1, d)
    got = fit_pca(X, k)
    live = [i for i in range(k) if i not in got.degenerate_indices]
    gram = got.components[live] @ got.components[live].T
    np.testing.assert_allclose(gram, np.eye(len(live)), atol=1e-6)
