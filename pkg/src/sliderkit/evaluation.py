"""Metrics for slider quality: diversity, alignment, distributional
distance, factor correlation, effect coherence, and labeling.

Everything numeric takes plain arrays so the metrics stay decoupled
from backends; the protocol helpers at the bottom wire them to live
generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.stats
import torch

from .adapters import LowRankAdapter, SliderActivation
from .backends.base import DiffusionBackend
from .composer import GenerationRequest, generate, sparse_random_activation
from .encoders.base import Encoder
from .errors import CapabilityError, ContractViolation

_EPS = 1e-12
_PSD_TOL = 1e-6


def _as_matrix(embeddings) -> np.ndarray:
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    if X.ndim != 2:
        raise ContractViolation("embeddings must be (n, dim)")
    return X


def pairwise_diversity(embeddings, metric: str = "cosine") -> float:
    """Mean pairwise distance over all n(n-1)/2 pairs; 0.0 below 2 samples.

    Note this is a mean, not a minimum: duplicating an outlying point
    can legitimately raise it. It measures spread, not coverage.
    """
    X = _as_matrix(embeddings)
    n = X.shape[0]
    if n < 2:
        return 0.0
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1).clip(min=_EPS)
        U = X / norms[:, None]
        G = np.clip(U @ U.T, -1.0, 1.0)
        dists = 1.0 - G
    elif metric == "euclidean":
        sq = (X**2).sum(axis=1)
        d2 = np.maximum(sq[:, None] + sq[None] - 2 * X @ X.T, 0.0)
        dists = np.sqrt(d2)
    else:
        raise ContractViolation(f"unknown diversity metric {metric!r}")
    iu = np.triu_indices(n, k=1)
    return float(dists[iu].mean())


def _anchor_cosines(image_embeddings, anchor) -> np.ndarray:
    X = _as_matrix(image_embeddings)
    t = np.asarray(anchor, dtype=np.float64).reshape(-1)
    if t.shape[0] != X.shape[1]:
        raise ContractViolation(f"text dim {t.shape[0]} != image dim {X.shape[1]}")
    cos = (X @ t) / (np.linalg.norm(X, axis=1).clip(min=_EPS) * max(np.linalg.norm(t), _EPS))
    return np.clip(cos, -1.0, 1.0)


def anchor_alignment(image_embeddings, anchor, clip_score: bool = False) -> float:
    """Mean cosine between image embeddings and a precomputed anchor.

    clip_score=True reports the familiar 100 * max(0, cos) scaling.
    """
    cos = _anchor_cosines(image_embeddings, anchor)
    if clip_score:
        return float(100.0 * np.maximum(cos, 0.0).mean())
    return float(cos.mean())


def text_alignment(image_embeddings, prompt: str, encoder: Encoder, clip_score: bool = False) -> float:
    """Mean cosine between image embeddings and the prompt's embedding."""
    if not encoder.supports_text:
        raise CapabilityError(
            f"encoder {encoder.descriptor().name!r} cannot embed text; text alignment needs a shared space"
        )
    anchor = encoder.encode_text([prompt]).cpu().numpy()[0]
    return anchor_alignment(image_embeddings, anchor, clip_score=clip_score)


@dataclass
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray
    n_samples: int

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean, "cov": self.cov, "n": np.asarray([self.n_samples])}


def _check_psd(cov: np.ndarray, label: str) -> None:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ContractViolation(f"{label} covariance must be square, got {cov.shape}")
    if np.abs(cov - cov.T).max() > _PSD_TOL:
        raise ContractViolation(f"{label} covariance is not symmetric within {_PSD_TOL}")
    low = float(np.linalg.eigvalsh((cov + cov.T) / 2.0).min())
    if low < -_PSD_TOL:
        raise ContractViolation(f"{label} covariance has eigenvalue {low:.3e} below -{_PSD_TOL}")


def gaussian_summary(embeddings) -> GaussianSummary:
    X = _as_matrix(embeddings)
    if X.shape[0] < 2:
        raise ContractViolation("need at least 2 samples to summarize a distribution")
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    return GaussianSummary(mean=X.mean(axis=0), cov=cov, n_samples=X.shape[0])


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    sym = (M + M.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    s = _psd_sqrt(cov_a)
    inner = s @ cov_b @ s
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -1e-6:
        raise ContractViolation(f"covariance product has non-trivial negative eigenvalue {vals.min():.3e}")
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """Squared Frechet distance between two Gaussian summaries.

    Computed by eigendecomposition of the symmetrized product, averaged
    over both orders; tiny negative eigenvalues from round-off are
    clamped to zero. Degenerate (singular) covariances are fine.
    """
    if a.mean.shape != b.mean.shape:
        raise ContractViolation("summaries have mismatched dimensions")
    _check_psd(a.cov, "first")
    _check_psd(b.cov, "second")
    mean_term = float(((a.mean - b.mean) ** 2).sum())
    tr_ab = _trace_sqrt_product(a.cov, b.cov)
    tr_ba = _trace_sqrt_product(b.cov, a.cov)
    value = mean_term + float(np.trace(a.cov) + np.trace(b.cov)) - (tr_ab + tr_ba)
    return max(value, 0.0)


def rank_correlation(coords, factors) -> tuple[float, bool]:
    """Spearman rho between two equal-length series.

    Returns (rho, degenerate). A constant series has no ranking, so rho
    is reported as 0.0 with the degenerate flag set instead of NaN.
    """
    x = np.asarray(coords, dtype=np.float64).reshape(-1)
    y = np.asarray(factors, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ContractViolation("series must have equal length")
    if x.shape[0] < 3:
        raise ContractViolation("need at least 3 points for a rank correlation")
    if np.ptp(x) < _EPS or np.ptp(y) < _EPS:
        return 0.0, True
    rho = scipy.stats.spearmanr(x, y).statistic
    if np.isnan(rho):
        return 0.0, True
    return float(rho), False


def bootstrap_ci(
    values, statistic: Callable[[np.ndarray], float] = np.mean,
    n_boot: int = 1000, alpha: float = 0.05, seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for a statistic of a 1-d sample."""
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.shape[0] < 2:
        raise ContractViolation("bootstrap needs at least 2 values")
    rng = np.random.default_rng(seed)
    stats = np.array([statistic(x[rng.integers(0, len(x), len(x))]) for _ in range(n_boot)])
    lo, hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def mutual_coherence(vectors) -> float:
    """Mean |cos| over distinct pairs of effect vectors; 0.0 for < 2 rows."""
    X = _as_matrix(vectors)
    if X.shape[0] < 2:
        return 0.0
    U = X / np.linalg.norm(X, axis=1).clip(min=_EPS)[:, None]
    G = np.abs(np.clip(U @ U.T, -1.0, 1.0))
    iu = np.triu_indices(X.shape[0], k=1)
    return float(G[iu].mean())


@dataclass
class MetricReport:
    name: str
    values: dict[str, float] = field(default_factory=dict)
    intervals: dict[str, tuple[float, float]] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)
    sample_count: int = 0
    encoder_id: str = ""
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "values": {k: float(v) for k, v in self.values.items()},
            "intervals": {k: [float(a), float(b)] for k, (a, b) in self.intervals.items()},
            "flags": dict(self.flags),
            "sample_count": self.sample_count,
            "encoder_id": self.encoder_id,
            "params": dict(self.params),
        }


def orthogonality_gap(effect_vectors, directions) -> tuple[float, float, float]:
    """(gap, diagonal mean, off-diagonal mean) for paired effects/directions.

    Diagonal: cos(effect_i, direction_i). Off-diagonal: |cos| between
    distinct effects. A positive gap means sliders hit their own targets
    more than they echo each other.
    """
    E = _as_matrix(effect_vectors)
    V = _as_matrix(directions)
    if E.shape[0] != V.shape[0] or E.shape[1] != V.shape[1]:
        raise ContractViolation(f"effects {E.shape} and directions {V.shape} must match")
    if E.shape[0] < 2:
        raise ContractViolation("orthogonality needs at least 2 sliders")
    En = E / np.linalg.norm(E, axis=1).clip(min=_EPS)[:, None]
    Vn = V / np.linalg.norm(V, axis=1).clip(min=_EPS)[:, None]
    diag = float(np.mean(np.sum(En * Vn, axis=1)))
    off = mutual_coherence(E)
    return diag - off, diag, off


def slider_effect_vectors(
    backend: DiffusionBackend,
    adapters: Mapping[str, LowRankAdapter],
    encoder: Encoder,
    prompt: str,
    seeds: Sequence[int],
    scale: float = 1.0,
    num_steps: int | None = None,
    guidance_scale: float = 1.0,
    null_prompt: str = "",
) -> dict[str, np.ndarray]:
    """Mean embedding delta (slider on minus base) per adapter."""
    base_embs = {}
    for seed in seeds:
        res = generate(backend, GenerationRequest(
            prompt=prompt, seed=seed, num_steps=num_steps,
            guidance_scale=guidance_scale, null_prompt=null_prompt))
        base_embs[seed] = encoder.encode_images(res.image[None]).cpu().numpy()[0]
    effects = {}
    for adapter_id in sorted(adapters):
        deltas = []
        for seed in seeds:
            res = generate(backend, GenerationRequest(
                prompt=prompt, seed=seed, num_steps=num_steps,
                activations=(SliderActivation(adapter_id, scale),),
                guidance_scale=guidance_scale, null_prompt=null_prompt),
                adapters=adapters)
            emb = encoder.encode_images(res.image[None]).cpu().numpy()[0]
            deltas.append(emb - base_embs[seed])
        effects[adapter_id] = np.mean(deltas, axis=0)
    return effects


def factor_correlation(
    backend: DiffusionBackend,
    adapters: Mapping[str, LowRankAdapter],
    oracle: Encoder,
    prompt: str,
    slider_id: str,
    scales: Sequence[float] = (-1.0, -0.5, 0.0, 0.5, 1.0),
    num_seeds: int = 20,
    base_seed: int = 300,
    num_steps: int | None = None,
) -> MetricReport:
    """Rank correlation between a slider's scale and each oracle factor.

    The headline statistic per factor is the pooled Spearman rho over all
    (seed, scale) generations: it credits a slider only when its effect
    outweighs natural seed-to-seed variation. The trajectory rho (scale
    vs the factor's mean over seeds) and the mean per-seed |rho| are
    reported alongside; on a deterministic backend the trajectory
    statistic saturates for any monotone leakage however faint, so it
    cannot rank sliders by how much they actually control.
    """
    factor_names = getattr(oracle, "factor_names", None)
    if not factor_names:
        raise CapabilityError(
            f"encoder {oracle.descriptor().name!r} exposes no factor_names; "
            "factor correlation needs a ground-truth factor oracle"
        )
    scales = [float(s) for s in scales]
    if len(scales) < 3:
        raise ContractViolation("need at least 3 scales for a rank correlation")
    if sorted(scales) != scales:
        raise ContractViolation("scales must be sorted ascending")
    if slider_id not in adapters:
        raise ContractViolation(f"unknown slider {slider_id!r}")
    values = np.zeros((num_seeds, len(scales), len(factor_names)))
    for i in range(num_seeds):
        for j, scale in enumerate(scales):
            res = generate(backend, GenerationRequest(
                prompt=prompt, seed=base_seed + i, num_steps=num_steps,
                activations=(SliderActivation(slider_id, scale),)), adapters=adapters)
            values[i, j] = oracle.encode_images(res.image[None]).cpu().numpy()[0][: len(factor_names)]
    report = MetricReport(
        name="factor-correlation",
        sample_count=num_seeds * len(scales),
        encoder_id=oracle.descriptor().name,
        params={"slider_id": slider_id, "scales": scales, "num_seeds": num_seeds, "base_seed": base_seed},
    )
    for f, factor in enumerate(factor_names):
        pooled, pooled_degenerate = rank_correlation(
            np.tile(scales, num_seeds), values[:, :, f].reshape(-1))
        trajectory, trajectory_degenerate = rank_correlation(scales, values[:, :, f].mean(axis=0))
        per_seed = []
        for i in range(num_seeds):
            rho, degenerate = rank_correlation(scales, values[i, :, f])
            per_seed.append(0.0 if degenerate else abs(rho))
        report.values[f"{factor}_rho"] = pooled
        report.values[f"{factor}_trajectory_rho"] = trajectory
        report.values[f"{factor}_per_seed_rho"] = float(np.mean(per_seed))
        report.flags[f"{factor}_degenerate"] = bool(pooled_degenerate and trajectory_degenerate)
    return report


def diversity_protocol(
    backend: DiffusionBackend,
    adapters: Mapping[str, LowRankAdapter],
    encoder: Encoder,
    prompt: str,
    num_probes: int = 24,
    k: int = 3,
    scale_magnitude: float = 1.0,
    seed: int = 0,
    base_seed: int = 20_000,
    num_steps: int | None = None,
    guidance_scale: float = 1.0,
    null_prompt: str = "",
    n_boot: int = 1000,
) -> MetricReport:
    """Sparse random slider compositions vs the plain prompt, same seeds.

    Reports pairwise diversity of both sets, their ratio, and the text
    alignment drop the sliders cost (needs a text-capable encoder), each
    with a percentile bootstrap interval.
    """
    gen = torch.Generator().manual_seed(seed)
    base_rows, slider_rows = [], []
    common = dict(num_steps=num_steps, guidance_scale=guidance_scale, null_prompt=null_prompt)
    ids = sorted(adapters)
    for i in range(num_probes):
        probe_seed = base_seed + i
        base = generate(backend, GenerationRequest(prompt=prompt, seed=probe_seed, **common))
        base_rows.append(encoder.encode_images(base.image[None]).cpu().numpy()[0])
        acts = sparse_random_activation(ids, k=min(k, len(ids)), scale_magnitude=scale_magnitude, generator=gen)
        probe = generate(backend, GenerationRequest(prompt=prompt, seed=probe_seed, activations=acts, **common),
                         adapters=adapters)
        slider_rows.append(encoder.encode_images(probe.image[None]).cpu().numpy()[0])

    base_rows = np.asarray(base_rows)
    slider_rows = np.asarray(slider_rows)
    base_div = pairwise_diversity(base_rows)
    slider_div = pairwise_diversity(slider_rows)
    report = MetricReport(
        name="diversity-protocol",
        sample_count=num_probes,
        encoder_id=encoder.descriptor().name,
        params={"k": k, "scale_magnitude": scale_magnitude, "seed": seed,
                "base_seed": base_seed, "num_probes": num_probes},
    )
    report.values["base_diversity"] = base_div
    report.values["slider_diversity"] = slider_div
    report.values["diversity_ratio"] = slider_div / base_div if base_div > 0 else float("inf")
    rng = np.random.default_rng(seed)
    if num_probes >= 2 and n_boot > 0:
        for label, rows in (("base_diversity", base_rows), ("slider_diversity", slider_rows)):
            stats = [pairwise_diversity(rows[rng.integers(0, len(rows), len(rows))]) for _ in range(n_boot)]
            report.intervals[label] = (float(np.quantile(stats, 0.025)), float(np.quantile(stats, 0.975)))
    if encoder.supports_text:
        anchor = encoder.encode_text([prompt]).cpu().numpy()[0]
        base_cos = _anchor_cosines(base_rows, anchor)
        slider_cos = _anchor_cosines(slider_rows, anchor)
        base_align = float(base_cos.mean())
        slider_align = float(slider_cos.mean())
        report.values["base_alignment"] = base_align
        report.values["slider_alignment"] = slider_align
        report.values["alignment_drop"] = base_align - slider_align
        report.values["alignment_drop_relative"] = (
            (base_align - slider_align) / abs(base_align) if abs(base_align) > _EPS else 0.0
        )
        if n_boot > 0:
            for label, cos in (("base_alignment", base_cos), ("slider_alignment", slider_cos)):
                report.intervals[label] = bootstrap_ci(cos, n_boot=n_boot, seed=seed)
    return report


def label_sliders(
    backend: DiffusionBackend,
    adapters: Mapping[str, LowRankAdapter],
    prompt: str,
    captioner: Callable[[torch.Tensor, torch.Tensor], str],
    seeds: Sequence[int] = (0,),
    scale: float = 1.0,
    num_steps: int | None = None,
) -> dict[str, str]:
    """Name each slider from a (negative batch, positive batch) captioner.

    Captioner failures degrade to the literal label "unlabeled" so a
    flaky labeling service cannot take down a pipeline run.
    """
    labels = {}
    for adapter_id in sorted(adapters):
        neg_imgs, pos_imgs = [], []
        for seed in seeds:
            for sign, sink in ((-scale, neg_imgs), (scale, pos_imgs)):
                res = generate(backend, GenerationRequest(
                    prompt=prompt, seed=seed, num_steps=num_steps,
                    activations=(SliderActivation(adapter_id, sign),)), adapters=adapters)
                sink.append(res.image)
        try:
            labels[adapter_id] = str(captioner(torch.stack(neg_imgs), torch.stack(pos_imgs)))
        except Exception:
            labels[adapter_id] = "unlabeled"
    return labels


def factor_shift_captioner(neg: torch.Tensor, pos: torch.Tensor) -> str:
    """Toy-world captioner: names the factor a slider moves the most."""
    from . import toyworld

    est_neg = toyworld.estimate_factors(neg).mean(dim=0)
    est_pos = toyworld.estimate_factors(pos).mean(dim=0)
    shift = (est_pos - est_neg).numpy()
    idx = int(np.argmax(np.abs(shift)))
    arrow = "increase" if shift[idx] > 0 else "decrease"
    return f"{toyworld.FACTOR_NAMES[idx]} {arrow}"
