"""Generalised EM for the multimodal event model.

One sweep runs, in order: the vMF E-step (posterior event directions),
the vMF M-step (hashtag and prior concentrations, prior means), the
multinomial E-step (Gaussian posterior of the word scores), the
multinomial M-step (bound points) and the coefficient update, which solves
one small nonnegative QP per hashtag.

The word-score posterior covariance is never formed. With ``S`` the
posterior precision, its inverse is ``I (x) F^-1 - 11^T (x) Delta`` and only
the ``K x K`` factors are kept.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import qp, sphere
from .model import (EPS_C, ModelState, bound_blocks, bound_stats,
                    coefficient_hessian, surrogate_objective)

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when the fit produces non-finite values; carries the last state."""

    def __init__(self, msg, state=None, trace=None):
        super().__init__(msg)
        self.state = state
        self.trace = trace


@dataclass
class FitConfig:
    K: int
    max_iters: int = 200
    rel_tol: float = 1e-6
    qp_tol: float = 1e-8
    qp_max_iters: int = 500
    seed: int = 0
    deterministic: bool = True
    kappa_solver: str = "banerjee"
    chunk_size: int = 256
    init_lloyd_iters: int = 10
    init_coeffs: str = "geo"
    geo_term: str = "normalized"
    coeff_step: str = "gem"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not (self.rel_tol > 0 and self.qp_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.kappa_solver not in ("banerjee", "bisection"):
            raise ValueError(f"unknown kappa solver {self.kappa_solver!r}")
        for name, allowed in (("init_coeffs", ("geo", "random")),
                              ("geo_term", ("normalized", "raw")), ("coeff_step", ("gem", "qp"))):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")


STEPS = ("vmf_e", "vmf_m", "mult_e", "mult_m", "coeffs")


@dataclass
class FitTrace:
    objective: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    qp_iterations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    warning_counts: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self):
        return len(self.objective)

    def warn(self, msg):
        self.warnings.append(msg)
        log.warning(msg)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "objective", *(f"t_{s}" for s in STEPS),
                        "qp_iterations", "warnings"])
            for t in range(self.n_iter):
                w.writerow([t + 1, repr(self.objective[t]),
                            *(f"{self.timings[t][s]:.6f}" for s in STEPS),
                            self.qp_iterations[t], self.warning_counts[t]])


def _kappa_estimator(cfg):
    if cfg.kappa_solver == "bisection":
        return lambda t: sphere.solve_kappa_bisection(t, tol=1e-10)
    return sphere.estimate_kappa_banerjee


# -- initialisation --------------------------------------------------------

def _seed_directions(points, weights_vec, K, rng, lloyd_iters):
    """k-means++ seeding on unit vectors, refined by spherical Lloyd steps.

    Centroids are ``normalize(sum of member resultants)``, so with ``K = 1``
    the result is the normalised global resultant.
    """
    n = len(points)
    dirs = sphere.normalize(points)
    centers = [dirs[rng.integers(n)]]
    for _ in range(1, K):
        d2 = np.min([np.sum((dirs - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        j = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(dirs[j])
    centers = np.array(centers)
    for _ in range(lloyd_iters):
        lab = np.argmax(dirs @ centers.T, axis=1)
        new = centers.copy()
        for k in range(K):
            s = weights_vec[lab == k].sum(axis=0)
            if np.linalg.norm(s) > 0:
                new[k] = s / np.linalg.norm(s)
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def init_state(data, cfg: FitConfig) -> ModelState:
    """Initial parameters for :func:`fit`.

    Prior means come from k-means++ seeding on the hashtags' mean geotag
    directions; prior concentrations are 1; hashtag concentrations are the
    single-population estimates (0 with fewer than two geotags); bound
    points are 0. Coefficients are uniform draws normalised to sum one; with
    ``cfg.init_coeffs == "geo"`` hashtags with geotags instead start from
    their soft assignment to the seeded directions.
    """
    K, P, D = cfg.K, data.P, data.D
    if P < K:
        raise ValueError(f"need at least K={K} hashtags, got {P}")
    rng = np.random.default_rng(cfg.seed)
    has_geo = data.n_geo > 0
    if has_geo.sum() >= K:
        beta = _seed_directions(data.geo_sum[has_geo] / data.n_geo[has_geo, None],
                                data.geo_sum[has_geo], K, rng, cfg.init_lloyd_iters)
    else:
        beta = sphere.normalize(rng.standard_normal((K, 3)))
    kappa = np.zeros(P)
    for i in np.flatnonzero(data.n_geo >= 2):
        kappa[i] = sphere.vmf_fit_resultant(data.geo_sum[i], data.n_geo[i]).kappa
    C = rng.uniform(0.0, 1.0, size=(K, P))
    C /= C.sum(axis=0)
    if cfg.init_coeffs == "geo":
        # responsibilities of the seeded directions; random draw kept for
        # hashtags without geotags
        mean_dir = data.geo_sum[has_geo] / np.linalg.norm(data.geo_sum[has_geo], axis=1, keepdims=True).clip(1e-300)
        logits = np.maximum(kappa[has_geo], 1.0)[:, None] * (mean_dir @ beta.T)
        logits -= logits.max(axis=1, keepdims=True)
        resp = np.exp(logits)
        C[:, has_geo] = (resp / resp.sum(axis=1, keepdims=True)).T
    return ModelState(C=C, beta=beta, s=np.ones(K), b=beta.copy(), r=np.zeros(K),
                      X=np.zeros((K, D - 1)), F_inv=np.eye(K), Delta=np.zeros((K, K)),
                      kappa=kappa, psi_X=np.zeros((K, D - 1)), psi_C=np.zeros((K, P)))


# -- vMF steps -----------------------------------------------------------

def vmf_e_step(state, data, trace=None):
    """Posterior mean directions ``b_k`` and concentrations ``r_k``."""
    S = state.weights().T @ (state.kappa[:, None] * data.geo_sum) + state.s[:, None] * state.beta
    r = np.linalg.norm(S, axis=1)
    for k in range(state.K):
        if r[k] > 0:
            state.b[k] = S[k] / r[k]
        elif trace is not None:
            trace.warn(f"event {k}: zero posterior resultant, direction kept")
    state.r = r


def vmf_m_step(state, data, cfg: FitConfig | None = None):
    """Update ``kappa_i``, ``s_k`` and ``beta_k`` from the fresh posterior."""
    est = _kappa_estimator(cfg) if cfg is not None else sphere.estimate_kappa_banerjee
    has = data.n_geo > 0
    mixed = state.weights()[has] @ state.b
    tau = np.sum(data.geo_sum[has] * mixed, axis=1) / data.n_geo[has]
    state.kappa[has] = est(np.clip(tau, 0.0, sphere.TAU_MAX))
    state.s = np.atleast_1d(est(np.clip(np.sum(state.beta * state.b, axis=1), 0.0, sphere.TAU_MAX)))
    state.beta = state.b.copy()


# -- multinomial steps ---------------------------------------------------

def posterior_factors(C, M, D, trace=None):
    """``(F_inv, Delta)`` of the word-score posterior covariance."""
    K = C.shape[0]
    G0 = (C * M) @ C.T
    F = 0.5 * G0 + np.eye(K)
    F_inv = np.linalg.inv(F)
    F_inv = 0.5 * (F_inv + F_inv.T)
    E = G0 / (2.0 * D)
    W = F / (D - 1) - E
    try:
        WinvE = np.linalg.solve(W, E)
    except np.linalg.LinAlgError:
        if trace is not None:
            trace.warn("singular inner matrix in covariance factorization; regularized")
        WinvE = np.linalg.solve(W + 1e-10 * np.eye(K), E)
    CYCt = -E - E @ WinvE
    Delta = F_inv @ CYCt @ F_inv
    return F_inv, 0.5 * (Delta + Delta.T)


def mult_e_step(state, data, cfg: FitConfig | None = None, trace=None):
    """Update the word-score posterior ``(F_inv, Delta, X)``.

    ``X = F^-1 C Z - Delta C Z 11^T``, where row ``i`` of ``Z`` is ``z_i``
    at the current bound point. ``C Z`` is accumulated block by block.
    """
    chunk = cfg.chunk_size if cfg else 256
    parallel = cfg is not None and not cfg.deterministic
    D = data.D
    state.F_inv, state.Delta = posterior_factors(state.C, data.M.astype(float), D, trace)
    CZ = np.zeros((state.K, D - 1))
    for rows, z, _ in bound_blocks(state, data, chunk, parallel):
        CZ += state.C[:, rows] @ z
    state.X = state.F_inv @ CZ - (state.Delta @ CZ.sum(axis=1))[:, None]


def mult_m_step(state):
    """Re-anchor the bound points at ``psi_i = X^T c_i``."""
    state.psi_X = state.X.copy()
    state.psi_C = state.C.copy()


# -- coefficients --------------------------------------------------------

def geo_linear_term(state, data, cfg=None):
    """Geotag part of every hashtag's QP linear term, shape (P, K)."""
    lin = (state.kappa[:, None] * data.geo_sum) @ state.b.T
    if cfg is None or cfg.geo_term == "normalized":
        lin /= np.maximum(state.C.sum(axis=0), EPS_C)[:, None]
    return lin


def coeff_subproblem(i, state, data, cfg=None):
    """``(Gamma_i, gamma_i)`` of hashtag ``i``'s coefficient QP."""
    from .text import transformed_obs
    h = data.counts[i].toarray().ravel().astype(float)
    _, z = transformed_obs(h, state.psi(i).ravel())
    Gamma = data.M[i] * coefficient_hessian(state, data.D)
    geo = state.kappa[i] * (state.b @ data.geo_sum[i])
    if cfg is None or cfg.geo_term == "normalized":
        geo = geo / max(state.C[:, i].sum(), EPS_C)
    gamma = geo + state.X @ z
    return Gamma, gamma


def coefficient_objective(C, state, data, G, Xz, geo):
    """Per-hashtag part of the surrogate that depends on ``c_i``.

    ``C`` is (P, K). The geotag term uses ``c_i / sum(c_i)`` and is
    therefore invariant to rescaling ``c_i``.
    """
    quad = np.einsum("pk,kl,pl->p", C, G, C)
    tot = np.maximum(C.sum(axis=1), EPS_C)
    return -0.5 * data.M * quad + np.sum(C * Xz, axis=1) + np.sum(C * geo, axis=1) / tot


def _rescale(C, G, Xz, M):
    """Move each row of ``C`` to the best scale along its own ray.

    Only the multinomial part depends on the scale; its optimum along
    ``t * pi`` is ``t = pi^T X z / (M pi^T G pi)``, floored at ``T_MIN``.
    """
    tot = C.sum(axis=1)
    ok = tot > 0
    pi = np.where(ok[:, None], C / np.where(ok, tot, 1.0)[:, None], 0.0)
    curv = M * np.einsum("pk,kl,pl->p", pi, G, pi)
    lin = np.sum(pi * Xz, axis=1)
    t = np.where(curv > 0, np.maximum(lin, 0.0) / np.where(curv > 0, curv, 1.0), tot)
    return pi * np.maximum(t, T_MIN)[:, None]


T_MIN = 1e-6


def update_coefficients(state, data, cfg: FitConfig | None = None, trace=None):
    """Coefficient update; returns the bound statistics and total QP iterations.

    Every hashtag's QP ``max -c^T Gamma_i c / 2 + c^T gamma_i, c >= 0`` is
    solved. All ``Gamma_i`` are multiples ``M_i G`` of one matrix, so each
    program is solved in the equivalent form ``(G, gamma_i / M_i)``.

    With ``cfg.coeff_step == "gem"`` (default) the QP solution only proposes
    a direction: candidates (QP solution and previous iterate, each moved to
    its best scale, and the previous iterate itself) are compared on the
    exact per-hashtag objective and the best is kept, so the step never
    decreases the surrogate. ``"qp"`` takes the QP solution as is.
    """
    tol = cfg.qp_tol if cfg else 1e-8
    max_iter = cfg.qp_max_iters if cfg else 500
    chunk = cfg.chunk_size if cfg else 256
    parallel = cfg is not None and not cfg.deterministic
    mode = cfg.coeff_step if cfg else "gem"
    stats = bound_stats(state, data, chunk=chunk, parallel=parallel)
    M = data.M.astype(float)
    gammas = geo_linear_term(state, data, cfg) + stats.Xz
    G = coefficient_hessian(state, data.D)
    prev = state.C.T
    newC, results = qp.solve_shared(G, gammas / M[:, None], tol=tol, max_iter=max_iter,
                                    x0=prev)
    iters = 0
    for i, res in enumerate(results):
        iters += res.iterations
        if not res.converged:
            newC[i] = prev[i]
            if trace is not None:
                trace.warn(f"hashtag {data.ids[i]}: QP not converged "
                           f"(residual {res.residual:.3g}), coefficients kept")
    if mode == "gem":
        geo = (state.kappa[:, None] * data.geo_sum) @ state.b.T
        cands = [prev, _rescale(prev, G, stats.Xz, M), _rescale(newC, G, stats.Xz, M)]
        scores = np.array([coefficient_objective(c, state, data, G, stats.Xz, geo)
                           for c in cands])
        best = np.argmax(scores, axis=0)
        newC = np.choose(best[:, None], cands)
    state.C = np.ascontiguousarray(newC.T)
    return stats, iters


# -- main loop -----------------------------------------------------------

def fit(data, cfg: FitConfig, state: ModelState | None = None):
    """Run the GEM sweeps until the relative objective change drops below
    ``cfg.rel_tol`` or ``cfg.max_iters`` sweeps have been made.

    Returns ``(state, trace)``.
    """
    if state is None:
        state = init_state(data, cfg)
    trace = FitTrace()
    prev = None
    for it in range(cfg.max_iters):
        n_warn = len(trace.warnings)
        times = {}
        t = time.perf_counter()
        vmf_e_step(state, data, trace)
        times["vmf_e"] = time.perf_counter() - t
        t = time.perf_counter()
        vmf_m_step(state, data, cfg)
        times["vmf_m"] = time.perf_counter() - t
        t = time.perf_counter()
        mult_e_step(state, data, cfg, trace)
        times["mult_e"] = time.perf_counter() - t
        t = time.perf_counter()
        mult_m_step(state)
        times["mult_m"] = time.perf_counter() - t
        t = time.perf_counter()
        stats, qp_iters = update_coefficients(state, data, cfg, trace)
        times["coeffs"] = time.perf_counter() - t

        obj = surrogate_objective(state, data, stats)
        if not np.isfinite(obj) or not all(np.all(np.isfinite(getattr(state, f)))
                                          for f in ModelState._FIELDS):
            raise NumericalError(f"non-finite objective or state at iteration {it + 1}",
                                 state, trace)
        if prev is not None and obj < prev - 1e-6 * abs(prev):
            trace.warn(f"iteration {it + 1}: objective decreased by {prev - obj:.6g}")
        trace.objective.append(obj)
        trace.timings.append(times)
        trace.qp_iterations.append(qp_iters)
        trace.warning_counts.append(len(trace.warnings) - n_warn)
        if prev is not None and abs(obj - prev) / (1.0 + abs(prev)) < cfg.rel_tol:
            trace.converged = True
            break
        prev = obj
    return state, trace
