"""Cohort cluster analysis and embedding-vs-signal distance correlation.

Cohort separation is measured by repeatedly subsampling both cohorts,
scoring silhouette with cohort identity as the cluster label, and reporting
a confidence interval over the repeats, against shuffled-cohort baselines.
Distance correlation checks that pairwise geometry in embedding space
carries over to decoder-generated signal space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .metrics import dtw_multichannel, pearson, silhouette, welch_t
from .seeding import array_key, derive_rng


@dataclass(frozen=True)
class CohortCIResult:
    mean_score: float
    ci_lo: float
    ci_hi: float
    per_repeat_scores: np.ndarray
    cohort_sizes: tuple[int, int]
    n_per_cohort: int
    seed: int

    def overlaps(self, other: "CohortCIResult") -> bool:
        return self.ci_lo <= other.ci_hi and other.ci_lo <= self.ci_hi

    def to_dict(self) -> dict:
        return {
            "mean_score": self.mean_score,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "repeats": len(self.per_repeat_scores),
            "cohort_sizes": list(self.cohort_sizes),
            "n_per_cohort": self.n_per_cohort,
            "seed": self.seed,
        }


def _subsample(arr: np.ndarray, n: int, seed: int, repeat: int) -> np.ndarray:
    # Stream keyed by the cohort's content, so swapping argument order draws
    # the same subsets and the analysis is exactly symmetric.
    rng = derive_rng(seed, "cohort-sample", repeat, array_key(arr))
    idx = rng.choice(arr.shape[0], size=n, replace=False)
    return arr[idx]


def cohort_silhouette_ci(
    emb_a: np.ndarray,
    emb_b: np.ndarray,
    n_per_cohort: int = 2500,
    repeats: int = 100,
    seed: int = 0,
    ci: str = "normal",
) -> CohortCIResult:
    """Mean silhouette of cohort identity over `repeats` subsample draws.

    Each repeat draws n_per_cohort embeddings without replacement from each
    cohort. ci="normal" gives mean +/- 1.96 * SD/sqrt(repeats); "bootstrap"
    gives the 2.5/97.5 percentile interval of resampled repeat means.
    """
    emb_a = np.asarray(emb_a, dtype=float)
    emb_b = np.asarray(emb_b, dtype=float)
    for name, arr in (("first", emb_a), ("second", emb_b)):
        if arr.ndim != 2:
            raise DataError(f"{name} cohort must be [n, dim]")
        if arr.shape[0] < n_per_cohort:
            raise DataError(
                f"{name} cohort has {arr.shape[0]} embeddings, fewer than "
                f"n_per_cohort={n_per_cohort}; pass a smaller n_per_cohort"
            )
    if repeats < 2:
        raise DataError("repeats must be >= 2 to form a confidence interval")
    # Canonical cohort order (by content key) makes the computation exactly
    # symmetric under swapping the arguments, down to the last bit.
    first, second = (emb_a, emb_b) if array_key(emb_a) <= array_key(emb_b) else (emb_b, emb_a)
    labels = np.concatenate([np.zeros(n_per_cohort, dtype=int), np.ones(n_per_cohort, dtype=int)])
    scores = np.empty(repeats)
    for r in range(repeats):
        sample = np.concatenate([_subsample(first, n_per_cohort, seed, r), _subsample(second, n_per_cohort, seed, r)])
        scores[r] = silhouette(sample, labels).mean_score
    mean = float(scores.mean())
    if ci == "normal":
        half = 1.96 * scores.std(ddof=1) / np.sqrt(repeats)
        lo, hi = mean - half, mean + half
    elif ci == "bootstrap":
        rng = derive_rng(seed, "cohort-bootstrap")
        boots = np.array([scores[rng.integers(0, repeats, repeats)].mean() for _ in range(1000)])
        lo, hi = (float(q) for q in np.percentile(boots, [2.5, 97.5]))
    else:
        raise DataError(f"unknown CI estimator '{ci}'")
    return CohortCIResult(mean, float(lo), float(hi), scores, (emb_a.shape[0], emb_b.shape[0]), n_per_cohort, seed)


def shuffled_baseline(
    emb_a: np.ndarray,
    emb_b: np.ndarray,
    n_per_cohort: int = 2500,
    repeats: int = 100,
    n_shuffles: int = 20,
    seed: int = 0,
    ci: str = "normal",
) -> list[CohortCIResult]:
    """The same CI analysis on pseudo-cohorts: pooled embeddings randomly
    re-partitioned into the original cohort sizes, once per shuffle."""
    emb_a = np.asarray(emb_a, dtype=float)
    emb_b = np.asarray(emb_b, dtype=float)
    pooled = np.concatenate([emb_a, emb_b], axis=0)
    results = []
    for s in range(n_shuffles):
        perm = derive_rng(seed, "shuffle", s).permutation(pooled.shape[0])
        pseudo_a = pooled[perm[: emb_a.shape[0]]]
        pseudo_b = pooled[perm[emb_a.shape[0] :]]
        results.append(
            cohort_silhouette_ci(pseudo_a, pseudo_b, n_per_cohort, repeats, seed=seed + s + 1, ci=ci)
        )
    return results


def cohort_ttest(true_result: CohortCIResult, shuffled_results: list[CohortCIResult]) -> list[tuple[float, float, float]]:
    """Welch's t-test of the true cohort's repeat scores against each
    shuffle's repeat scores; one (t, dof, p) per shuffle."""
    return [welch_t(true_result.per_repeat_scores, r.per_repeat_scores) for r in shuffled_results]


@dataclass(frozen=True)
class CorrelationReport:
    rho: float
    n_pairs: int
    metric: str
    scatter: list[tuple[int, int, float, float]] = field(default_factory=list)  # (i, j, emb_dist, sig_dist)

    def to_dict(self) -> dict:
        return {"rho": self.rho, "n_pairs": self.n_pairs, "metric": self.metric, "scatter_pairs": len(self.scatter)}


def pairwise_euclidean_condensed(x: np.ndarray) -> np.ndarray:
    """Upper-triangle pairwise Euclidean distances of [n, dim] rows."""
    n = x.shape[0]
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    iu = np.triu_indices(n, k=1)
    return np.sqrt(d2[iu])


def distance_correlation(
    model,
    epochs,
    metric: str = "euclidean",
    n_samples: int = 100,
    max_pairs: int = 2000,
    seed: int = 0,
    dtw_radius: int | None = None,
) -> CorrelationReport:
    """Pearson correlation between pairwise distances in pooled-embedding
    space and in generated-signal space over a random epoch sample.

    Embedding distances are always Euclidean over the pooled vectors; signal
    distances are Euclidean over the flattened generated signals or summed
    per-channel DTW. The correlation uses ALL pairs; the scatter export is
    capped at max_pairs randomly chosen pairs.
    """
    from .generate import full_decode_batch
    from .model import embed_epochs

    if metric not in ("euclidean", "dtw"):
        raise DataError(f"unknown signal metric '{metric}'")
    if n_samples < 2:
        raise DataError("need at least 2 sampled epochs")
    data = np.stack([e.data if hasattr(e, "data") else np.asarray(e) for e in epochs])
    if n_samples > data.shape[0]:
        raise DataError(f"n_samples={n_samples} exceeds available epochs ({data.shape[0]})")
    pick = derive_rng(seed, "corr-sample").choice(data.shape[0], size=n_samples, replace=False)
    data = data[np.sort(pick)]

    embeddings, _ = embed_epochs(model, data)
    generated = full_decode_batch(model, data)

    emb_d = pairwise_euclidean_condensed(embeddings.astype(np.float64))
    if metric == "euclidean":
        sig_d = pairwise_euclidean_condensed(generated.reshape(n_samples, -1).astype(np.float64))
    else:
        iu = np.triu_indices(n_samples, k=1)
        sig_d = np.array(
            [dtw_multichannel(generated[i], generated[j], radius=dtw_radius) for i, j in zip(*iu)]
        )
    rho = pearson(emb_d, sig_d)

    iu = np.triu_indices(n_samples, k=1)
    n_pairs = len(emb_d)
    take = min(max_pairs, n_pairs)
    chosen = derive_rng(seed, "corr-scatter").choice(n_pairs, size=take, replace=False)
    scatter = [(int(iu[0][k]), int(iu[1][k]), float(emb_d[k]), float(sig_d[k])) for k in np.sort(chosen)]
    return CorrelationReport(rho=rho, n_pairs=n_pairs, metric=metric, scatter=scatter)
