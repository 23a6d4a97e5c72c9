"""Nonnegativity-constrained concave quadratic maximisation.

Solves::

    max_c  -c^T G c / 2 + c^T g    subject to  c >= 0

with ``G`` symmetric positive semidefinite, by alternating a projected
gradient (Cauchy) step, which identifies the active set, with an exact
Newton step on the free variables. For the small ``K`` of the event model
this terminates in a handful of iterations. The returned point is certified
by :func:`kkt_residual`: convergence means a residual of at most ``tol``
times the magnitude of the terms involved (``|gamma|``, ``|Gamma| |c|`` and
``|c|``, each floored at 1), so unit-scale programs meet ``tol`` absolutely.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C_MAX = 1e6


@dataclass
class QuadProgram:
    Gamma: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if G.shape != (len(g), len(g)):
            raise ValueError(f"shape mismatch: Gamma {G.shape}, gamma {g.shape}")
        scale = max(1.0, np.abs(G).max(initial=0.0))
        if np.abs(G - G.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("Gamma is not symmetric")
        G = 0.5 * (G + G.T)
        w, V = np.linalg.eigh(G)
        if w.min(initial=0.0) < -1e-10 * scale:
            raise ValueError(f"Gamma is not PSD (min eigenvalue {w.min():.3g})")
        if w.min(initial=0.0) < 0:
            G = (V * np.maximum(w, 0.0)) @ V.T
            G = 0.5 * (G + G.T)
        self.Gamma = G
        self.gamma = g

    def objective(self, c):
        c = np.asarray(c, dtype=float)
        return -0.5 * np.einsum("...i,ij,...j->...", c, self.Gamma, c) + c @ self.gamma


@dataclass
class QPResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual: float
    capped: bool = False


def kkt_residual(p: QuadProgram, c) -> float:
    """Largest violation of the KKT conditions at ``c``.

    Combines primal infeasibility ``max(0, -c_k)``, dual infeasibility
    ``max(0, -(Gc - g)_k)`` and complementarity ``|c_k (Gc - g)_k|``.
    """
    return _kkt(p.Gamma, p.gamma, np.asarray(c, dtype=float))


def _scale(G, g, c):
    """Magnitude of the terms entering the gradient, at least 1."""
    return max(1.0, np.abs(g).max(initial=0.0),
               np.abs(G).max(initial=0.0) * np.abs(c).max(initial=0.0))


def _kkt(G, g, c):
    grad = G @ c - g
    return float(max(np.max(np.maximum(0.0, -c), initial=0.0),
                     np.max(np.maximum(0.0, -grad), initial=0.0),
                     np.max(np.abs(c * grad), initial=0.0)))


class _Solver:
    """Active-set solver for a fixed Hessian, caching reduced factorizations."""

    def __init__(self, G, tol, max_iter):
        self.G = G
        self.K = len(G)
        self.tol = tol
        self.max_iter = max_iter
        self._cache = {}

    def _reduced(self, free):
        key = free.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            Gff = self.G[np.ix_(free, free)]
            w, V = np.linalg.eigh(Gff)
            cutoff = 1e-12 * max(1.0, np.abs(w).max(initial=0.0))
            nonsingular = w > cutoff
            hit = (V, w, nonsingular)
            self._cache[key] = hit
        return hit

    def _f(self, x, g):
        return 0.5 * x @ self.G @ x - g @ x

    def solve(self, g, x0=None) -> QPResult:
        G, K = self.G, self.K
        x = np.zeros(K) if x0 is None else np.maximum(np.asarray(x0, dtype=float), 0.0)
        capped = False
        best, best_res = x.copy(), np.inf
        for it in range(1, self.max_iter + 1):
            grad = G @ x - g
            res = _kkt(G, g, x)
            if res < best_res:
                best, best_res = x.copy(), res
            if res <= self.tol * _scale(G, g, x) * max(1.0, np.abs(x).max(initial=0.0)):
                return QPResult(x, True, it - 1, res, capped)
            fx = self._f(x, g)

            # projected gradient step with Armijo backtracking
            curv = grad @ G @ grad
            t = (grad @ grad) / curv if curv > 1e-300 else 1.0
            for _ in range(60):
                xt = np.maximum(x - t * grad, 0.0)
                if self._f(xt, g) <= fx + 1e-4 * grad @ (xt - x):
                    break
                t *= 0.5
            else:
                xt = x
            x = xt

            # Newton step on the free variables
            grad = G @ x - g
            free = (x > 0) | (grad < 0)
            if not free.any():
                continue
            V, w, ok = self._reduced(free)
            rhs = g[free]
            coef = V.T @ rhs
            y = V[:, ok] @ (coef[ok] / w[ok])
            null_part = V[:, ~ok] @ coef[~ok]
            if np.linalg.norm(null_part) > 1e-10 * max(1.0, np.linalg.norm(rhs)):
                # zero curvature with a positive slope: unbounded, cap it
                d = np.zeros(K)
                d[free] = null_part
                x = np.minimum(np.maximum(x + C_MAX * d / np.abs(d).max(), 0.0), C_MAX)
                capped = True
                return QPResult(x, False, it, _kkt(G, g, x), capped)
            step = np.zeros(K)
            step[free] = y - x[free]
            xn = x + step
            if np.all(xn >= 0):
                x = xn
            else:
                neg = step < 0
                alpha = np.min(-x[neg] / step[neg]) if neg.any() else 1.0
                alpha = min(max(alpha, 0.0), 1.0)
                xa = np.maximum(x + alpha * step, 0.0)
                xp = np.maximum(xn, 0.0)
                x = xp if self._f(xp, g) < self._f(xa, g) else xa
            if np.any(x > C_MAX):
                x = np.minimum(x, C_MAX)
                capped = True
        res = _kkt(G, g, x)
        if res < best_res:
            best, best_res = x, res
        ok = best_res <= self.tol * _scale(G, g, best) * max(1.0, np.abs(best).max(initial=0.0))
        return QPResult(best, ok, self.max_iter, best_res, capped)


def solve(p: QuadProgram, tol=1e-8, max_iter=500, x0=None) -> QPResult:
    """Maximise ``-c^T Gamma c / 2 + c^T gamma`` over ``c >= 0``.

    ``x0`` warm-starts the iteration. If ``max_iter`` is exhausted the best
    iterate is returned with ``converged=False``.
    """
    return _Solver(p.Gamma, tol, max_iter).solve(p.gamma, x0)


def solve_shared(Gamma, gammas, tol=1e-8, max_iter=500, x0=None):
    """Solve many programs sharing one Hessian.

    ``gammas`` has shape ``(n, K)``; returns ``(X, results)`` with the
    solutions stacked row-wise.
    """
    prog = QuadProgram(Gamma, np.zeros(len(Gamma)))
    solver = _Solver(prog.Gamma, tol, max_iter)
    gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
    out = np.empty_like(gammas)
    results = []
    for j, g in enumerate(gammas):
        r = solver.solve(g, None if x0 is None else x0[j])
        out[j] = r.x
        results.append(r)
    return out, results
