"""Containers and model-level quantities of the multimodal event model.

A hashtag ``i`` carries word counts ``h_i`` (total ``M_i``) and the
sufficient statistic of its geotags, the vector sum ``geo_sum_i`` of
``N_i`` unit vectors. ``K`` events mix through nonnegative coefficients
``c_i`` into the natural parameters of both modalities.

The per-hashtag bound points ``psi_i`` are kept in factored form
``psi_i = X_anchor^T c_anchor_i`` (the values they were set to by the last
multinomial M-step), so nothing of size ``P x D`` is ever stored.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import scipy.sparse as sp

from . import sphere, text

EPS_C = 1e-10
FORMAT_VERSION = 1


@dataclass
class HashtagRecord:
    id: str
    counts: text.WordCounts
    geo_sum: np.ndarray
    n_geo: int

    def __post_init__(self):
        self.geo_sum = np.asarray(self.geo_sum, dtype=float)
        if self.counts.total < 1:
            raise ValueError(f"hashtag {self.id!r} has no words")
        if self.n_geo < 0 or np.linalg.norm(self.geo_sum) > self.n_geo * (1 + 1e-9) + 1e-12:
            raise ValueError(f"hashtag {self.id!r}: |geo_sum| exceeds n_geo")


@dataclass
class Dataset:
    """``P`` hashtags over a dictionary of ``D`` words (pivot = last word).

    ``raw_geo`` optionally keeps each hashtag's geotags as an ``(N_i, 3)``
    array; only goodness-of-fit evaluation needs them.
    """

    ids: list
    words: list
    counts: sp.csr_matrix
    geo_sum: np.ndarray
    n_geo: np.ndarray
    raw_geo: list | None = None
    _log_coef: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.ids = list(self.ids)
        self.words = list(self.words)
        self.counts = sp.csr_matrix(self.counts, dtype=np.int64)
        self.counts.sort_indices()
        self.geo_sum = np.asarray(self.geo_sum, dtype=float).reshape(-1, 3)
        self.n_geo = np.asarray(self.n_geo, dtype=np.int64)
        P, D = self.counts.shape
        if P < 1:
            raise ValueError("dataset needs at least one hashtag")
        if D < 2:
            raise ValueError("dictionary needs at least two words")
        if len(self.words) != D or len(set(self.words)) != D:
            raise ValueError("words must be unique and match the count matrix")
        if len(self.ids) != P or len(self.geo_sum) != P or len(self.n_geo) != P:
            raise ValueError("per-hashtag arrays disagree in length")
        if np.any(self.M < 1):
            raise ValueError("every hashtag needs at least one word")
        if self.counts.nnz and self.counts.data.min() < 0:
            raise ValueError("negative word count")
        if np.any(np.linalg.norm(self.geo_sum, axis=1) > self.n_geo * (1 + 1e-9) + 1e-12):
            raise ValueError("|geo_sum| exceeds the number of geotags")
        if self.raw_geo is not None and len(self.raw_geo) != P:
            raise ValueError("raw_geo must have one entry per hashtag")

    @property
    def P(self):
        return self.counts.shape[0]

    @property
    def D(self):
        return self.counts.shape[1]

    @property
    def M(self):
        return np.asarray(self.counts.sum(axis=1)).ravel()

    @property
    def log_coef(self):
        """Cached ``log(M_i! / prod_d h_id!)``."""
        if self._log_coef is None:
            from scipy.special import gammaln
            c = self.counts
            per_entry = np.add.reduceat(gammaln(c.data + 1.0), c.indptr[:-1]) if c.nnz else 0
            per_entry = np.where(np.diff(c.indptr) > 0, per_entry, 0.0)
            self._log_coef = gammaln(self.M + 1.0) - per_entry
        return self._log_coef

    def record(self, i) -> HashtagRecord:
        row = self.counts[i]
        return HashtagRecord(self.ids[i], text.WordCounts(row.indices, row.data, self.D),
                             self.geo_sum[i], int(self.n_geo[i]))

    @classmethod
    def from_records(cls, records, words, raw_geo=None):
        rows, cols, vals = [], [], []
        for i, r in enumerate(records):
            rows.extend([i] * len(r.counts.indices))
            cols.extend(r.counts.indices)
            vals.extend(r.counts.counts)
        counts = sp.csr_matrix((vals, (rows, cols)), shape=(len(records), len(words)))
        return cls([r.id for r in records], words, counts,
                   np.array([r.geo_sum for r in records]).reshape(-1, 3),
                   [r.n_geo for r in records], raw_geo)

    def subset(self, index, refilter=True):
        """Dataset restricted to the hashtags in ``index``.

        With ``refilter`` the dictionary is re-derived from the words still
        present, ordered by (frequency desc, word asc).
        """
        index = np.asarray(index, dtype=np.int64)
        counts = self.counts[index]
        words = self.words
        if refilter:
            freq = np.asarray(counts.sum(axis=0)).ravel()
            keep = [j for j in np.flatnonzero(freq)]
            keep.sort(key=lambda j: (-freq[j], words[j]))
            counts = counts[:, keep]
            words = [words[j] for j in keep]
        raw = None if self.raw_geo is None else [self.raw_geo[i] for i in index]
        return Dataset([self.ids[i] for i in index], words, counts,
                       self.geo_sum[index], self.n_geo[index], raw)

    # -- serialisation -----------------------------------------------------
    def to_json(self):
        c = self.counts
        tags = []
        for i in range(self.P):
            lo, hi = c.indptr[i], c.indptr[i + 1]
            entry = {"id": self.ids[i], "words": c.indices[lo:hi].tolist(),
                     "counts": c.data[lo:hi].tolist(),
                     "geo_sum": self.geo_sum[i].tolist(), "n_geo": int(self.n_geo[i])}
            if self.raw_geo is not None:
                entry["geotags"] = np.asarray(self.raw_geo[i]).reshape(-1, 3).tolist()
            tags.append(entry)
        return {"format": "mmevents-dataset", "version": FORMAT_VERSION,
                "words": self.words, "hashtags": tags}

    @classmethod
    def from_json(cls, obj):
        _check_format(obj, "mmevents-dataset")
        tags = obj["hashtags"]
        rows = np.repeat(np.arange(len(tags)), [len(t["words"]) for t in tags])
        cols = np.concatenate([np.asarray(t["words"], dtype=np.int64) for t in tags]) if tags else []
        vals = np.concatenate([np.asarray(t["counts"], dtype=np.int64) for t in tags]) if tags else []
        counts = sp.csr_matrix((vals, (rows, cols)), shape=(len(tags), len(obj["words"])))
        raw = None
        if tags and all("geotags" in t for t in tags):
            raw = [np.asarray(t["geotags"], dtype=float).reshape(-1, 3) for t in tags]
        return cls([t["id"] for t in tags], obj["words"], counts,
                   np.array([t["geo_sum"] for t in tags], dtype=float).reshape(-1, 3),
                   [t["n_geo"] for t in tags], raw)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


def _check_format(obj, name):
    if obj.get("format") != name:
        raise ValueError(f"not a {name} file")
    if obj.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported {name} version {obj.get('version')}")


@dataclass
class ModelState:
    """All fitted quantities of the event model.

    Shapes: ``C`` (K, P); ``beta``, ``b`` (K, 3); ``s``, ``r`` (K,);
    ``X`` (K, D-1); ``F_inv``, ``Delta`` (K, K); ``kappa`` (P,);
    ``psi_X`` (K, D-1) and ``psi_C`` (K, P) encode the bound points.
    """

    C: np.ndarray
    beta: np.ndarray
    s: np.ndarray
    b: np.ndarray
    r: np.ndarray
    X: np.ndarray
    F_inv: np.ndarray
    Delta: np.ndarray
    kappa: np.ndarray
    psi_X: np.ndarray
    psi_C: np.ndarray

    _FIELDS = ("C", "beta", "s", "b", "r", "X", "F_inv", "Delta", "kappa", "psi_X", "psi_C")

    @property
    def K(self):
        return self.C.shape[0]

    @property
    def P(self):
        return self.C.shape[1]

    @property
    def D(self):
        return self.X.shape[1] + 1

    def weights(self):
        """Coefficients normalised to sum one per hashtag, shape (P, K)."""
        tot = np.maximum(self.C.sum(axis=0), EPS_C)
        return (self.C / tot).T

    def psi(self, index=slice(None)):
        """Bound points of the selected hashtags, shape (n, D-1)."""
        return self.psi_C[:, index].T @ self.psi_X

    def copy(self):
        return ModelState(*(getattr(self, f).copy() for f in self._FIELDS))

    def to_json(self):
        out = {"format": "mmevents-model", "version": FORMAT_VERSION,
               "K": self.K, "P": self.P, "D": self.D}
        for f in self._FIELDS:
            out[f] = getattr(self, f).tolist()
        return out

    @classmethod
    def from_json(cls, obj):
        _check_format(obj, "mmevents-model")
        K, P, D = obj["K"], obj["P"], obj["D"]
        shapes = {"C": (K, P), "beta": (K, 3), "s": (K,), "b": (K, 3), "r": (K,),
                  "X": (K, D - 1), "F_inv": (K, K), "Delta": (K, K), "kappa": (P,),
                  "psi_X": (K, D - 1), "psi_C": (K, P)}
        return cls(*(np.array(obj[f], dtype=float).reshape(shapes[f]) for f in cls._FIELDS))

    def dumps(self):
        return json.dumps(self.to_json())

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


# -- bound pass ----------------------------------------------------------

def bound_blocks(state, data, chunk=256, parallel=False):
    """Yield ``(rows, z, bound_const)`` for consecutive blocks of hashtags.

    ``z`` holds ``z_i = h_i,head - M_i p_psi_i + M_i A psi_i`` for the rows
    of the block (dense, shape (n, D-1)); ``bound_const`` is ``c_psi_i``, the
    constant of the quadratic lse bound at ``psi_i``. Blocks are yielded in
    order unless ``parallel`` is set, in which case they are computed on a
    thread pool and yielded as they finish.
    """
    P = data.P
    starts = range(0, P, chunk)
    anchored = np.any(state.psi_X)
    M = data.M.astype(float)

    def work(lo):
        rows = slice(lo, min(lo + chunk, P))
        h = data.counts[rows].toarray()[:, :-1].astype(float)
        m = M[rows][:, None]
        if anchored:
            psi = state.psi(rows)
            g, cpsi = text.bohning_bound_coeffs(psi)
            z = h - m * g
        else:
            D = data.D
            z = h - m / D
            cpsi = np.full(h.shape[0], np.log(D))
        return rows, z, cpsi

    if not parallel:
        for lo in starts:
            yield work(lo)
    else:
        with ThreadPoolExecutor() as pool:
            yield from pool.map(work, starts)


@dataclass
class BoundStats:
    """Per-hashtag ``X z_i`` (P, K) and ``sum_i M_i c_psi_i`` at the current bound."""

    Xz: np.ndarray
    bound_const: float


def bound_stats(state, data, X=None, chunk=256, parallel=False) -> BoundStats:
    X = state.X if X is None else X
    Xz = np.empty((data.P, state.K))
    total = 0.0
    M = data.M
    for rows, z, cpsi in bound_blocks(state, data, chunk, parallel):
        Xz[rows] = z @ X.T
        total += float(M[rows] @ cpsi)
    return BoundStats(Xz, total)


# -- objective -----------------------------------------------------------

def vmf_objective(state, data):
    """Expected vMF lower bound with the posterior means plugged in."""
    kw = state.kappa[:, None] * data.geo_sum
    S = state.weights().T @ kw + state.s[:, None] * state.beta
    return (float(np.sum(S * state.b))
            + float(np.sum(sphere.vmf_log_norm_const(state.s)))
            + float(data.n_geo @ sphere.vmf_log_norm_const(state.kappa)))


def coefficient_hessian(state, D):
    """``G`` such that the per-hashtag QP Hessian is ``Gamma_i = M_i G``."""
    x1 = state.X.sum(axis=1)
    G = ((D - 1) ** 2 / (2.0 * D) * state.F_inv - (D - 1) / (2.0 * D) * state.Delta
         + 0.5 * state.X @ state.X.T - np.outer(x1, x1) / (2.0 * D))
    return 0.5 * (G + G.T)


def multinomial_trace_term(state, data, stats: BoundStats):
    """``-Tr[S (Phi + phi phi^T)] / 2 + phi^T sum_i M_i C_i A h~_i``.

    ``S = sum_i M_i C_i A C_i^T + I``; evaluated through ``(F_inv, Delta, X)``.
    """
    D = data.D
    G = coefficient_hessian(state, D)
    C = state.C
    quad = float(np.sum(data.M * np.einsum("kp,kl,lp->p", C, G, C)))
    prior = (D - 1) * (np.trace(state.F_inv) - np.trace(state.Delta)) + np.sum(state.X**2)
    lin = float(np.sum(C.T * stats.Xz))
    return -0.5 * (quad + prior) + lin


def posterior_entropy(state, D):
    """``log|Phi| / 2 + K(D-1)/2``: entropy of the word-score posterior
    without its ``2 pi`` constant, which cancels against the prior's.

    ``Phi`` has the eigen-blocks ``F^-1`` (multiplicity ``D-2``) and
    ``F^-1 - (D-1) Delta`` (once).
    """
    K = state.K
    s1, ld1 = np.linalg.slogdet(state.F_inv)
    s2, ld2 = np.linalg.slogdet(state.F_inv - (D - 1) * state.Delta)
    if s1 <= 0 or s2 <= 0:
        return -np.inf
    return 0.5 * ((D - 2) * ld1 + ld2) + 0.5 * K * (D - 1)


def multinomial_objective(state, data, stats: BoundStats):
    """Expected quadratic-bound lower bound on the text log joint.

    Adds to :func:`multinomial_trace_term` the posterior entropy (so that
    the multinomial E-step maximises the total), the bound constants
    ``-sum_i M_i c_psi_i`` and the multinomial coefficients. The last two do
    not affect any update but make values comparable across re-anchoring.
    """
    return (multinomial_trace_term(state, data, stats) + posterior_entropy(state, data.D)
            - stats.bound_const + float(np.sum(data.log_coef)))


def surrogate_objective(state, data, stats: BoundStats | None = None):
    if stats is None:
        stats = bound_stats(state, data)
    return float(vmf_objective(state, data) + multinomial_objective(state, data, stats))


def model_geo_loglik(state, data):
    """Per-hashtag geotag log-likelihood under the fitted mixed vMF.

    Uses the mean direction ``B c_i / |B c_i|``; hashtags whose mixed
    direction vanishes get the uniform density.
    """
    mixed = state.C.T @ state.b
    norm = np.linalg.norm(mixed, axis=1)
    ok = norm > 1e-300
    alpha = np.where(ok[:, None], mixed / np.where(ok, norm, 1.0)[:, None], 0.0)
    kappa = np.where(ok, state.kappa, 0.0)
    return (data.n_geo * sphere.vmf_log_norm_const(kappa)
            + kappa * np.sum(data.geo_sum * alpha, axis=1))


# -- synthetic data ------------------------------------------------------

@dataclass
class SyntheticSpec:
    K: int = 3
    P: int = 200
    D: int = 50
    M: int = 200
    N: int = 50
    directions: np.ndarray | None = None
    word_scores: np.ndarray | None = None
    min_angle: float = 60.0
    kappa_range: tuple = (50.0, 50.0)
    active: int = 1
    coeff_range: tuple = (0.5, 1.5)
    sigma_u: float = 1.0
    seed: int = 0
    keep_raw: bool = True

    def __post_init__(self):
        if not (1 <= self.K <= self.P):
            raise ValueError("need 1 <= K <= P")
        if self.D < 2 or self.M < 1 or self.N < 0:
            raise ValueError("need D >= 2, M >= 1, N >= 0")
        if not (1 <= self.active <= self.K):
            raise ValueError("active must lie in [1, K]")
        if self.word_scores is not None and np.shape(self.word_scores) != (self.K, self.D):
            raise ValueError("word_scores must have shape (K, D)")


@dataclass
class GroundTruth:
    """Generating latents, in the dataset's word order.

    ``U`` (K, D) are the word scores, ``V`` (K, 3) the event directions,
    ``C`` (K, P) the coefficients and ``labels`` the dominant event.
    """

    U: np.ndarray
    V: np.ndarray
    C: np.ndarray
    kappa: np.ndarray
    labels: np.ndarray
    resampled: int = 0

    def to_json(self):
        return {"format": "mmevents-truth", "version": FORMAT_VERSION,
                "U": self.U.tolist(), "V": self.V.tolist(), "C": self.C.tolist(),
                "kappa": self.kappa.tolist(), "labels": self.labels.tolist(),
                "resampled": self.resampled}

    @classmethod
    def from_json(cls, obj):
        _check_format(obj, "mmevents-truth")
        return cls(np.array(obj["U"]), np.array(obj["V"]), np.array(obj["C"]),
                   np.array(obj["kappa"]), np.array(obj["labels"], dtype=int),
                   obj.get("resampled", 0))


def random_directions(K, min_angle, rng, max_tries=10000):
    """``K`` random unit vectors with pairwise angles of at least ``min_angle`` degrees."""
    cos_max = np.cos(np.radians(min_angle))
    for _ in range(max_tries):
        V = sphere.normalize(rng.standard_normal((K, 3)))
        G = V @ V.T
        np.fill_diagonal(G, -1.0)
        if G.max() <= cos_max:
            return V
    raise ValueError(f"could not place {K} directions {min_angle} degrees apart")


def generate_synthetic(spec: SyntheticSpec, chunk=256):
    """Sample a dataset from the generative model.

    Word scores are i.i.d. ``N(0, sigma_u^2)`` unless fixed by
    ``spec.word_scores``; each hashtag draws
    ``spec.active`` events with coefficients uniform on ``coeff_range``,
    then ``N`` geotags from ``vMF(Vc/|Vc|, kappa_i)`` and ``M`` words from
    ``Mult(softmax(U^T c))``. The dictionary is reordered by corpus
    frequency so that the pivot is the rarest word.
    """
    rng = np.random.default_rng(spec.seed)
    K, P, D = spec.K, spec.P, spec.D
    V = (sphere.normalize(np.asarray(spec.directions, dtype=float)).reshape(K, 3)
         if spec.directions is not None else random_directions(K, spec.min_angle, rng))
    U = spec.sigma_u * rng.standard_normal((K, D))
    if spec.word_scores is not None:
        U = np.array(spec.word_scores, dtype=float)
    C = np.zeros((K, P))
    resampled = 0
    for i in range(P):
        while True:
            act = rng.choice(K, size=spec.active, replace=False)
            C[:, i] = 0.0
            C[act, i] = rng.uniform(*spec.coeff_range, size=spec.active)
            if np.linalg.norm(V.T @ C[:, i]) > 1e-12:
                break
            resampled += 1
    kappa = rng.uniform(*spec.kappa_range, size=P)

    geo_sum = np.zeros((P, 3))
    raw = [] if spec.keep_raw else None
    for i in range(P):
        if spec.N:
            mean = sphere.normalize(V.T @ C[:, i])
            w = sphere.vmf_sample(sphere.VmfParams(mean, kappa[i]), spec.N, rng)
            geo_sum[i] = w.sum(axis=0)
        else:
            w = np.zeros((0, 3))
        if raw is not None:
            raw.append(w)

    blocks = []
    for lo in range(0, P, chunk):
        eta = C[:, lo:lo + chunk].T @ U
        eta -= eta.max(axis=1, keepdims=True)
        p = np.exp(eta)
        p /= p.sum(axis=1, keepdims=True)
        blocks.append(sp.csr_matrix(rng.multinomial(spec.M, p)))
    counts = sp.vstack(blocks).tocsr()

    freq = np.asarray(counts.sum(axis=0)).ravel()
    names = [f"w{j:05d}" for j in range(D)]
    order = sorted(range(D), key=lambda j: (-freq[j], names[j]))
    counts = counts[:, order]
    words = [names[j] for j in order]
    U = U[:, order]

    data = Dataset([f"h{i:05d}" for i in range(P)], words, counts, geo_sum,
                   np.full(P, spec.N), raw)
    truth = GroundTruth(U, V, C, kappa, np.argmax(C, axis=0), resampled)
    return data, truth


def nested_spec(n_coarse=3, n_fine=2, coarse_angle=90.0, fine_angle=25.0,
                fine_scale=0.6, seed=0, **kw):
    """Spec of a two-scale event structure.

    ``n_coarse`` well separated coarse events each split into ``n_fine``
    fine events whose directions lie ``fine_angle`` degrees apart around
    the coarse direction, and whose word scores are the coarse scores plus
    an independent part of relative size ``fine_scale``. Returns
    ``(spec, coarse_of_fine)``.
    """
    rng = np.random.default_rng(seed)
    D = kw.get("D", 50)
    sigma = kw.get("sigma_u", 1.0)
    coarse = random_directions(n_coarse, coarse_angle, rng)
    dirs, scores, parent = [], [], []
    base_u = sigma * rng.standard_normal((n_coarse, D))
    half = np.radians(fine_angle) / 2.0
    for g, v in enumerate(coarse):
        e1, e2 = sphere._orthonormal_frame(v)
        for f in range(n_fine):
            phi = 2.0 * np.pi * f / n_fine
            t = np.cos(phi) * e1 + np.sin(phi) * e2
            dirs.append(np.cos(half) * v + np.sin(half) * t)
            scores.append(base_u[g] + fine_scale * sigma * rng.standard_normal(D))
            parent.append(g)
    K = n_coarse * n_fine
    spec = SyntheticSpec(K=K, directions=np.array(dirs), word_scores=np.array(scores),
                         seed=seed, **kw)
    return spec, np.array(parent)


def match_events(true_dirs, fitted_dirs):
    """Best permutation aligning fitted to true directions.

    Exhaustive over ``K!`` orderings, minimising the largest angle. Returns
    ``(perm, angles_deg)`` where fitted event ``perm[k]`` matches true ``k``.
    """
    T = sphere.normalize(np.asarray(true_dirs))
    Fd = sphere.normalize(np.asarray(fitted_dirs))
    ang = np.degrees(np.arccos(np.clip(T @ Fd.T, -1.0, 1.0)))
    K = len(T)
    best, best_cost = None, np.inf
    for perm in permutations(range(len(Fd)), K):
        cost = (max(ang[k, perm[k]] for k in range(K)), sum(ang[k, perm[k]] for k in range(K)))
        if best is None or cost < best_cost:
            best, best_cost = perm, cost
    return np.array(best), np.array([ang[k, best[k]] for k in range(K)])
