"""Self-contained statistical and signal metrics.

Everything here is a pure function on numpy arrays: classification scores
(F1, AUROC, confusion matrices), Pearson correlation, Welch's t-test,
silhouette scores, mean squared error, and dynamic time warping with an
exact dynamic program plus a coarse-to-fine approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError


# ---------------------------------------------------------------------------
# classification metrics
# ---------------------------------------------------------------------------

def _check_equal_length(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true)
    b = np.asarray(y_pred)
    if a.size == 0:
        raise DataError("empty inputs")
    if a.shape[0] != b.shape[0]:
        raise DataError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def _binary_f1(y_true: np.ndarray, y_pred: np.ndarray, positive) -> float:
    tp = np.sum((y_true == positive) & (y_pred == positive))
    fp = np.sum((y_true != positive) & (y_pred == positive))
    fn = np.sum((y_true == positive) & (y_pred != positive))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def f1(y_true, y_pred, mode: str = "binary") -> float:
    """F1 score: harmonic precision/recall mean (binary) or support-weighted
    mean of per-class F1 (weighted). Zero denominators contribute F1 = 0."""
    y_true, y_pred = _check_equal_length(y_true, y_pred)
    if mode == "binary":
        values = set(np.unique(y_true)) | set(np.unique(y_pred))
        if not values <= {0, 1}:
            raise DataError(f"binary F1 requires labels in {{0, 1}}, got {sorted(values)}")
        return _binary_f1(y_true, y_pred, 1)
    if mode == "weighted":
        classes = np.union1d(np.unique(y_true), np.unique(y_pred))
        support = np.array([np.sum(y_true == c) for c in classes], dtype=float)
        if support.sum() == 0:
            return 0.0
        scores = np.array([_binary_f1(y_true, y_pred, c) for c in classes])
        return float(np.sum(scores * support) / support.sum())
    raise DataError(f"unknown F1 mode '{mode}'")


def _binary_auroc(labels: np.ndarray, scores: np.ndarray) -> float:
    # Mann-Whitney with midranks; ties get 1/2 credit.
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise NumericError("AUROC undefined: only one class present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=float)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(np.sum(ranks[labels == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auroc(y_true, scores, mode: str = "binary") -> float:
    """Rank-based AUROC. mode="binary" takes 1-D scores for the positive
    class; mode="weighted_ovr" takes an [n, K] score matrix and returns the
    support-weighted mean of per-class one-vs-rest AUCs."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=float)
    if y_true.size == 0:
        raise DataError("empty inputs")
    if mode == "binary":
        if scores.ndim != 1 or scores.shape[0] != y_true.shape[0]:
            raise DataError("binary AUROC needs 1-D scores aligned with labels")
        labels = y_true.astype(int)
        if not set(np.unique(labels)) <= {0, 1}:
            raise DataError("binary AUROC requires labels in {0, 1}")
        return float(_binary_auroc(labels, scores))
    if mode == "weighted_ovr":
        if scores.ndim != 2 or scores.shape[0] != y_true.shape[0]:
            raise DataError("weighted_ovr AUROC needs an [n, K] score matrix")
        classes = np.unique(y_true)
        if len(classes) < 2:
            raise NumericError("AUROC undefined: fewer than 2 classes present")
        total = 0.0
        weight_sum = 0.0
        for c in classes:
            c = int(c)
            if c < 0 or c >= scores.shape[1]:
                raise DataError(f"class {c} has no score column (scores have {scores.shape[1]} columns)")
            labels = (y_true == c).astype(int)
            support = float(labels.sum())
            total += support * _binary_auroc(labels, scores[:, c])
            weight_sum += support
        return float(total / weight_sum)
    raise DataError(f"unknown AUROC mode '{mode}'")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows = true class, columns = predicted class."""

    counts: np.ndarray
    row_normalized: np.ndarray
    zero_rows: tuple[int, ...]

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


def confusion(y_true, y_pred, n_classes: int) -> ConfusionMatrix:
    """Count matrix plus row-normalized fractions; empty rows stay zero and
    are flagged in zero_rows."""
    y_true, y_pred = _check_equal_length(y_true, y_pred)
    y_true = y_true.astype(int)
    y_pred = y_pred.astype(int)
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise DataError(f"{name} has labels outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    row_sums = counts.sum(axis=1, keepdims=True)
    zero = row_sums[:, 0] == 0
    safe = np.where(row_sums == 0, 1, row_sums)
    normalized = counts / safe
    return ConfusionMatrix(counts, normalized, tuple(int(i) for i in np.flatnonzero(zero)))


# ---------------------------------------------------------------------------
# correlation and tests
# ---------------------------------------------------------------------------

def pearson(x, y) -> float:
    """Product-moment correlation; undefined (NumericError) when either side
    has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"pearson needs equal-length 1-D inputs, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise DataError("pearson needs >= 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc))
    sy = np.sqrt(np.sum(yc * yc))
    if sx == 0.0 or sy == 0.0:
        raise NumericError("pearson undefined: zero variance input")
    return float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta function (modified Lentz).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front) if ln_front > -745.0 else 0.0
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def welch_t(sample_a, sample_b) -> tuple[float, float, float]:
    """Welch's unequal-variance t-test.

    Returns (t, Welch-Satterthwaite dof, two-sided p). The p-value comes from
    the regularized incomplete beta form of the t CDF; values below the
    representable range underflow to 0.0 (rendered as "< 1e-300" in reports).
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise DataError("welch_t needs >= 2 values per sample")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericError("welch_t: non-finite input")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise NumericError("welch_t undefined: both samples have zero variance")
    sa, sb = va / len(a), vb / len(b)
    t = (a.mean() - b.mean()) / math.sqrt(sa + sb)
    dof = (sa + sb) ** 2 / (sa**2 / (len(a) - 1) + sb**2 / (len(b) - 1))
    if t == 0.0:
        return 0.0, float(dof), 1.0
    p = betainc_reg(dof / 2.0, 0.5, dof / (dof + t * t))
    return float(t), float(dof), float(min(max(p, 0.0), 1.0))


def format_p_value(p: float) -> str:
    """Report representation; underflowed p-values print as '< 1e-300'."""
    if p == 0.0:
        return "< 1e-300"
    return format(p, ".6g")


def mse(a, b) -> float:
    """Mean squared elementwise difference."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------------------
# silhouette
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SilhouetteResult:
    mean_score: float
    scores: np.ndarray  # per point, each in [-1, 1]


def _pairwise_euclidean(x: np.ndarray, block: int = 1024) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    n = x.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        g = x[start:stop] @ x.T
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * g
        np.maximum(d2, 0.0, out=d2)
        out[start:stop] = np.sqrt(d2)
    return out


def silhouette(points, cluster_labels, metric: str = "euclidean") -> SilhouetteResult:
    """Per-point silhouette s = (b - a) / max(a, b).

    a is the mean distance to the point's own cluster (self excluded) and b
    the smallest mean distance to any other cluster. Singleton clusters score
    0 by convention.
    """
    x = np.asarray(points, dtype=float)
    labels = np.asarray(cluster_labels)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise DataError("points must be [n, dim] aligned with labels")
    if metric != "euclidean":
        raise DataError(f"unsupported distance '{metric}'")
    classes, idx = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise NumericError("silhouette needs >= 2 clusters")
    n, k = x.shape[0], len(classes)
    dist = _pairwise_euclidean(x)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), idx] = 1.0
    cluster_sizes = onehot.sum(axis=0)
    sums = dist @ onehot  # sums[i, c] = total distance from i to cluster c
    own_size = cluster_sizes[idx]
    scores = np.zeros(n)
    multi = own_size > 1
    a = np.zeros(n)
    a[multi] = sums[np.arange(n), idx][multi] / (own_size[multi] - 1.0)
    mean_other = sums / np.maximum(cluster_sizes[None, :], 1.0)
    mean_other[np.arange(n), idx] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    valid = multi & (denom > 0)
    scores[valid] = (b[valid] - a[valid]) / denom[valid]
    return SilhouetteResult(float(scores.mean()), scores)


# ---------------------------------------------------------------------------
# dynamic time warping
# ---------------------------------------------------------------------------

def _local_cost_matrix(a: np.ndarray, b: np.ndarray, cost: str) -> np.ndarray:
    diff = np.abs(a[:, None] - b[None, :])
    if cost == "abs":
        return diff
    if cost == "squared":
        return diff * diff
    raise DataError(f"unknown DTW local cost '{cost}'")


def _dtw_matrix_numpy(c: np.ndarray) -> np.ndarray:
    """Full DP table, filled along anti-diagonals (vectorized fallback)."""
    m, n = c.shape
    d = np.full((m, n), np.inf)
    d[0, 0] = c[0, 0]
    for k in range(1, m + n - 1):
        lo = max(0, k - (n - 1))
        hi = min(m - 1, k)
        ii = np.arange(lo, hi + 1)
        jj = k - ii
        up = np.where(ii >= 1, d[ii - 1, jj], np.inf)
        left = np.where(jj >= 1, d[ii, jj - 1], np.inf)
        diag = np.where((ii >= 1) & (jj >= 1), d[ii - 1, jj - 1], np.inf)
        d[ii, jj] = c[ii, jj] + np.minimum(np.minimum(up, left), diag)
    return d


def _dtw_matrix_scalar(c: np.ndarray) -> np.ndarray:
    m, n = c.shape
    d = np.full((m, n), np.inf)
    d[0, 0] = c[0, 0]
    for i in range(m):
        for j in range(n):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and d[i - 1, j] < best:
                best = d[i - 1, j]
            if j > 0 and d[i, j - 1] < best:
                best = d[i, j - 1]
            if i > 0 and j > 0 and d[i - 1, j - 1] < best:
                best = d[i - 1, j - 1]
            d[i, j] = c[i, j] + best
    return d


try:  # jitted kernel when numba is around; bit-identical to the fallback
    from numba import njit as _njit

    _dtw_matrix = _njit(cache=True)(_dtw_matrix_scalar)
except ImportError:  # pragma: no cover - exercised only without numba
    _dtw_matrix = _dtw_matrix_numpy


def _backtrack(d: np.ndarray) -> list[tuple[int, int]]:
    i, j = d.shape[0] - 1, d.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        options = []
        if i > 0 and j > 0:
            options.append((d[i - 1, j - 1], i - 1, j - 1))
        if i > 0:
            options.append((d[i - 1, j], i - 1, j))
        if j > 0:
            options.append((d[i, j - 1], i, j - 1))
        _, i, j = min(options)
        path.append((i, j))
    path.reverse()
    return path


def _dtw_windowed(a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray, cost: str):
    """DP restricted to per-row column ranges [lo[i], hi[i]]."""
    m, n = len(a), len(b)
    prev = None
    prev_lo = 0
    rows = []
    for i in range(m):
        width = hi[i] - lo[i] + 1
        row = np.full(width, np.inf)
        ci = _local_cost_matrix(a[i : i + 1], b[lo[i] : hi[i] + 1], cost)[0]
        for w in range(width):
            j = lo[i] + w
            best = np.inf
            if i == 0 and j == 0:
                row[w] = ci[w]
                continue
            if w > 0 and row[w - 1] < best:
                best = row[w - 1]
            if prev is not None:
                pw = j - prev_lo
                if 0 <= pw < len(prev) and prev[pw] < best:
                    best = prev[pw]
                if 0 <= pw - 1 < len(prev) and prev[pw - 1] < best:
                    best = prev[pw - 1]
            row[w] = ci[w] + best
        rows.append((lo[i], row))
        prev, prev_lo = row, lo[i]
    final = rows[-1][1][n - 1 - rows[-1][0]]
    # Greedy backtrack over the stored rows.
    i, j = m - 1, n - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        candidates = []
        row_lo, row = rows[i]
        if i > 0:
            plo, prow = rows[i - 1]
            if plo <= j <= plo + len(prow) - 1:
                candidates.append((prow[j - plo], i - 1, j))
            if plo <= j - 1 <= plo + len(prow) - 1:
                candidates.append((prow[j - 1 - plo], i - 1, j - 1))
        if j - 1 >= row_lo:
            candidates.append((row[j - 1 - row_lo], i, j - 1))
        _, i, j = min(candidates)
        path.append((i, j))
    path.reverse()
    return float(final), path


def _halve(x: np.ndarray) -> np.ndarray:
    even = len(x) // 2 * 2
    pairs = x[:even].reshape(-1, 2).mean(axis=1)
    if len(x) % 2:
        return np.concatenate([pairs, x[-1:]])
    return pairs


def _expand_window(path, m: int, n: int, radius: int):
    lo = np.full(m, n, dtype=int)
    hi = np.full(m, -1, dtype=int)
    for ci, cj in path:
        for i in (2 * ci, 2 * ci + 1):
            if i < m:
                lo[i] = min(lo[i], 2 * cj)
                hi[i] = max(hi[i], min(2 * cj + 1, n - 1))
    # Fill rows the projected path skipped (odd-length tails).
    for i in range(m):
        if hi[i] < 0:
            lo[i] = lo[i - 1] if i > 0 else 0
            hi[i] = hi[i - 1] if i > 0 else 0
    # Dilate by the radius in both axes.
    dlo = np.array([lo[max(0, i - radius) : i + radius + 1].min() for i in range(m)]) - radius
    dhi = np.array([hi[max(0, i - radius) : i + radius + 1].max() for i in range(m)]) + radius
    dlo = np.clip(dlo, 0, n - 1)
    dhi = np.clip(dhi, 0, n - 1)
    # Monotone envelopes keep the DP connected.
    for i in range(1, m):
        dlo[i] = max(dlo[i], dlo[i - 1])
        dhi[i] = max(dhi[i], dhi[i - 1])
    dhi[-1] = n - 1
    dlo[0] = 0
    return dlo, dhi


def _fastdtw(a: np.ndarray, b: np.ndarray, radius: int, cost: str):
    if len(a) <= radius + 2 or len(b) <= radius + 2:
        d = _dtw_matrix(_local_cost_matrix(a, b, cost))
        return float(d[-1, -1]), _backtrack(d)
    _, coarse_path = _fastdtw(_halve(a), _halve(b), radius, cost)
    lo, hi = _expand_window(coarse_path, len(a), len(b), radius)
    return _dtw_windowed(a, b, lo, hi, cost)


def dtw(a, b, radius: int | None = None, cost: str = "abs") -> float:
    """Dynamic time warping distance with steps {match, insert, delete}.

    radius=None runs the exact O(len(a) * len(b)) dynamic program. An integer
    radius switches to the coarse-to-fine approximation, which upper-bounds
    the exact distance and matches it once radius >= max(len(a), len(b)).
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise DataError("dtw requires nonempty sequences")
    if radius is None:
        return float(_dtw_matrix(_local_cost_matrix(a, b, cost))[-1, -1])
    if radius < 0:
        raise DataError("dtw radius must be nonnegative")
    value, _ = _fastdtw(a, b, int(radius), cost)
    return value


def dtw_multichannel(a: np.ndarray, b: np.ndarray, radius: int | None = None, cost: str = "abs") -> float:
    """Sum of per-channel DTW distances for [channels, samples] arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DataError(f"multichannel dtw needs matching [C, T] arrays, got {a.shape} and {b.shape}")
    return float(sum(dtw(a[c], b[c], radius=radius, cost=cost) for c in range(a.shape[0])))
