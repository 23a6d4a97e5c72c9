"""Evaluation tools: k-means on coefficients, pair-counting indices,
classical MDS and the geolocation goodness-of-fit comparison.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import sphere
from .model import model_geo_loglik


@dataclass
class Clustering:
    """Cluster ids, relabelled to ``0..k-1`` in order of first appearance."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels).ravel()
        _, first, inv = np.unique(lab, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        self.labels = order[inv].astype(np.int64)

    @property
    def n_clusters(self):
        return int(self.labels.max(initial=-1)) + 1

    def __len__(self):
        return len(self.labels)


def _as_labels(a):
    return a.labels if isinstance(a, Clustering) else Clustering(a).labels


# -- k-means ---------------------------------------------------------------

def _sq_dist(X, centers):
    d = (np.sum(X**2, axis=1)[:, None] - 2.0 * X @ centers.T
         + np.sum(centers**2, axis=1)[None, :])
    return np.maximum(d, 0.0)


def _plus_plus(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = _sq_dist(X, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        j = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[j])
        d2 = np.minimum(d2, _sq_dist(X, X[j][None])[:, 0])
    return np.array(centers)


def kmeans_cost(X, labels, centers):
    X = np.asarray(X, dtype=float)
    return float(np.sum((X - centers[labels]) ** 2))


def kmeans(points, k, seed=0, max_iters=300, return_info=False):
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is reseeded to the point farthest from its current
    centre. Deterministic for a given ``seed``.

    Returns a :class:`Clustering`; with ``return_info`` also the centres
    and the cost after every iteration.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    rng = np.random.default_rng(seed)
    centers = _plus_plus(X, k, rng)
    costs = []
    labels = np.argmin(_sq_dist(X, centers), axis=1)
    for _ in range(max_iters):
        new = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
            else:
                d = np.min(_sq_dist(X, new), axis=1)
                new[j] = X[np.argmax(d)]
        d = _sq_dist(X, new)
        new_labels = np.argmin(d, axis=1)
        centers = new
        costs.append(kmeans_cost(X, new_labels, centers))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    labels = new_labels
    # an empty cluster at exit: hand it the farthest point
    for j in range(k):
        if not np.any(labels == j):
            far = np.argmax(np.sum((X - centers[labels]) ** 2, axis=1))
            labels[far] = j
            centers[j] = X[far]
    out = Clustering(labels)
    if return_info:
        # follow the relabelling
        ordered = np.empty_like(centers)
        ordered[out.labels] = centers[labels]
        return out, ordered, costs
    return out


# -- pair-counting indices ---------------------------------------------------

def _pair_counts(a, b):
    """``(sum_ij C(n_ij,2), sum_i C(a_i,2), sum_j C(b_j,2), C(n,2))`` as ints."""
    a, b = _as_labels(a), _as_labels(b)
    if len(a) != len(b):
        raise ValueError(f"clusterings differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    table = np.zeros((a.max(initial=-1) + 1, b.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)

    def c2(x):
        return sum(int(v) * (int(v) - 1) // 2 for v in np.ravel(x))

    return c2(table), c2(table.sum(axis=1)), c2(table.sum(axis=0)), n * (n - 1) // 2


def rand_index(a, b) -> float:
    """Fraction of point pairs on which two partitions agree."""
    nij, ai, bj, total = _pair_counts(a, b)
    if total == 0:
        return 1.0
    agree = total + 2 * nij - ai - bj
    return agree / total


def adjusted_rand_index(a, b) -> float:
    """Rand index corrected for chance under the permutation model.

    When both partitions put all pairs together (or both separate all
    points) the formula is 0/0; that case is defined as 1.
    """
    nij, ai, bj, total = _pair_counts(a, b)
    if total == 0:
        return 1.0
    # (nij - ai bj / T) / ((ai + bj) / 2 - ai bj / T), scaled by 2T to stay in integers
    num = 2 * (nij * total - ai * bj)
    den = (ai + bj) * total - 2 * ai * bj
    if den == 0:
        return 1.0
    return num / den


# -- classical MDS -----------------------------------------------------------

@dataclass
class MdsResult:
    coords: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool


def classical_mds(points, dims=2, tol=1e-10) -> MdsResult:
    """Torgerson scaling of the squared Euclidean distances between rows.

    Coordinates are centred. Dimensions with non-positive (up to ``tol``
    relative) eigenvalues are zeroed and ``degenerate`` is set.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if n < 2:
        raise ValueError("need at least two points")
    sq = np.sum(X**2, axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ D2 @ J
    B = 0.5 * (B + B.T)
    w, V = np.linalg.eigh(B)
    order = np.argsort(w)[::-1][:dims]
    w, V = w[order], V[:, order]
    scale = max(1.0, abs(w[0])) if len(w) else 1.0
    keep = w > tol * scale
    coords = np.zeros((n, dims))
    coords[:, :len(w)][:, keep] = V[:, keep] * np.sqrt(w[keep])
    coords -= coords.mean(axis=0)
    return MdsResult(coords, w, bool(np.sum(keep) < dims))


def write_mds_csv(path, ids, coords, labels):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["hashtag", "x", "y", "cluster"])
        for i, (x, y), lab in zip(ids, coords[:, :2], labels):
            w.writerow([i, repr(float(x)), repr(float(y)), int(lab)])


# -- goodness of fit -----------------------------------------------------------

@dataclass
class GofRow:
    event: int
    n_hashtags: int
    fused_mean: float
    fused_ci: tuple
    baseline_mean: float
    baseline_ci: tuple


def _mean_ci(v):
    v = np.asarray(v, dtype=float)
    m = float(v.mean())
    if len(v) < 2:
        return m, (m, m)
    half = 1.96 * float(v.std(ddof=1)) / np.sqrt(len(v))
    return m, (float(m - half), float(m + half))


def baseline_geo_loglik(geo_sum, n_geo):
    """Per-hashtag log-likelihood under its own single-population vMF fit."""
    out = np.full(len(n_geo), np.nan)
    for i in np.flatnonzero(np.asarray(n_geo) >= 2):
        p = sphere.vmf_fit_resultant(geo_sum[i], n_geo[i])
        out[i] = n_geo[i] * sphere.vmf_log_norm_const(p.kappa) + p.kappa * geo_sum[i] @ p.mean
    return out


def goodness_of_fit(state, data, labels=None):
    """Per-event mean geolocation log-likelihood of the fused model and of
    independent per-hashtag vMF fits, with normal-approximation 95% CIs.

    Hashtags are grouped by ``labels`` (default: argmax coefficient).
    Likelihoods are divided by ``N_i`` so hashtags of different sizes are
    comparable. Hashtags with fewer than two geotags are excluded; their
    number is returned alongside the rows.
    """
    if labels is None:
        labels = np.argmax(state.C, axis=0)
    labels = np.asarray(labels)
    n = data.n_geo.astype(float)
    ok = data.n_geo >= 2
    fused = model_geo_loglik(state, data)
    base = baseline_geo_loglik(data.geo_sum, data.n_geo)
    rows = []
    for k in range(state.K):
        sel = ok & (labels == k)
        if not sel.any():
            continue
        fm, fci = _mean_ci(fused[sel] / n[sel])
        bm, bci = _mean_ci(base[sel] / n[sel])
        rows.append(GofRow(k, int(sel.sum()), fm, fci, bm, bci))
    return rows, int((~ok).sum())


def write_gof_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["event", "n_hashtags", "fused_mean", "fused_lo", "fused_hi",
                    "baseline_mean", "baseline_lo", "baseline_hi"])
        for r in rows:
            w.writerow([r.event, r.n_hashtags, repr(r.fused_mean), repr(r.fused_ci[0]),
                        repr(r.fused_ci[1]), repr(r.baseline_mean), repr(r.baseline_ci[0]),
                        repr(r.baseline_ci[1])])
