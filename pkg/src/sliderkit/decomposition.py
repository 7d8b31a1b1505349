"""Principal directions of an embedding distribution.

The decomposition is a plain centered PCA computed by SVD. Sign is
fixed per component (first non-negligible coordinate positive) so runs
are comparable. Requesting more components than the data's numerical
rank is allowed: the surplus components are zero vectors, carry zero
variance, and are reported in degenerate_indices rather than silently
fabricated from round-off noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

_SIGN_EPS = 1e-12
_RANK_RTOL = 1e-10


@dataclass
class PrincipalDirections:
    components: np.ndarray  # (n_components, dim), rows unit-norm or zero
    mean: np.ndarray  # (dim,)
    explained_variance: np.ndarray  # (n_components,)
    explained_variance_ratio: np.ndarray  # (n_components,)
    n_samples: int
    encoder_name: str = ""
    degenerate_indices: tuple[int, ...] = ()
    params: dict = field(default_factory=dict)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    def direction(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_components:
            raise ContractViolation(f"component index {i} outside [0, {self.n_components})")
        return self.components[i]

    def project(self, embeddings: np.ndarray, k: int | None = None) -> np.ndarray:
        """Coordinates of embeddings in the first k component directions."""
        emb = np.asarray(embeddings, dtype=np.float64)
        if emb.ndim == 1:
            emb = emb[None]
        if emb.shape[1] != self.dim:
            raise ContractViolation(f"embedding dim {emb.shape[1]} != decomposition dim {self.dim}")
        k = self.n_components if k is None else k
        return (emb - self.mean) @ self.components[:k].T

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "components": self.components.astype(np.float32),
            "mean": self.mean.astype(np.float32),
            "explained_variance": self.explained_variance.astype(np.float64),
            "explained_variance_ratio": self.explained_variance_ratio.astype(np.float64),
            "degenerate_indices": np.asarray(self.degenerate_indices, dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict, n_samples: int, encoder_name: str = "", params: dict | None = None):
        return cls(
            components=np.asarray(arrays["components"], dtype=np.float64),
            mean=np.asarray(arrays["mean"], dtype=np.float64),
            explained_variance=np.asarray(arrays["explained_variance"], dtype=np.float64),
            explained_variance_ratio=np.asarray(arrays["explained_variance_ratio"], dtype=np.float64),
            n_samples=n_samples,
            encoder_name=encoder_name,
            degenerate_indices=tuple(int(i) for i in arrays.get("degenerate_indices", [])),
            params=dict(params or {}),
        )


def fit_pca(embeddings, n_components: int, encoder_name: str = "", center: bool = True) -> PrincipalDirections:
    """Centered PCA via SVD with deterministic component signs."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise ContractViolation("embeddings must be a 2-d matrix (n_samples, dim)")
    n, dim = X.shape
    if n < 2:
        raise ContractViolation("PCA needs at least 2 samples")
    if n_components < 1:
        raise ContractViolation("n_components must be >= 1")

    mean = X.mean(axis=0) if center else np.zeros(dim)
    Xc = X - mean
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)

    smax = svals[0] if len(svals) else 0.0
    rank = int(np.sum(svals > max(smax * _RANK_RTOL, _SIGN_EPS)))
    k_real = min(n_components, rank)

    components = np.zeros((n_components, dim))
    variance = np.zeros(n_components)
    components[:k_real] = vt[:k_real]
    variance[:k_real] = (svals[:k_real] ** 2) / (n - 1)

    # deterministic orientation: first non-negligible coordinate positive
    for i in range(k_real):
        row = components[i]
        nonzero = np.nonzero(np.abs(row) > _SIGN_EPS)[0]
        if len(nonzero) and row[nonzero[0]] < 0:
            components[i] = -row

    total_var = float(Xc.var(axis=0, ddof=1).sum())
    ratio = variance / total_var if total_var > 0 else np.zeros_like(variance)
    degenerate = tuple(range(k_real, n_components))

    return PrincipalDirections(
        components=components,
        mean=mean,
        explained_variance=variance,
        explained_variance_ratio=ratio,
        n_samples=n,
        encoder_name=encoder_name,
        degenerate_indices=degenerate,
        params={"center": center, "rank": rank},
    )


def variance_spectrum(directions: PrincipalDirections) -> dict:
    """Per-component variance plus cumulative ratios, ready to serialize."""
    ratio = directions.explained_variance_ratio
    return {
        "explained_variance": [float(v) for v in directions.explained_variance],
        "explained_variance_ratio": [float(v) for v in ratio],
        "cumulative_ratio": [float(v) for v in np.cumsum(ratio)],
        "n_samples": directions.n_samples,
        "degenerate_indices": list(directions.degenerate_indices),
    }
