"""Multinomial modality: log-sum-exp, softmax and the Bohning bound.

Natural parameters are expressed relative to a pivot word (the last
dictionary entry), so a vector ``eta`` of length ``D - 1`` describes a
distribution over ``D`` words with ``eta_D = 0``.

The Bohning curvature matrix ``A = (I - 11^T / D) / 2`` and its inverse
``2 (I + 11^T)`` are only ever applied, never formed. All functions act on
the last axis so blocks of hashtags can be processed at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass
class WordCounts:
    """Sparse bag of words over a dictionary of size ``size``."""

    indices: np.ndarray
    counts: np.ndarray
    size: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.indices.shape != self.counts.shape:
            raise ValueError("indices and counts differ in length")
        if np.any(self.counts < 1):
            raise ValueError("stored counts must be positive")
        if np.any(self.indices < 0) or np.any(self.indices >= self.size):
            raise ValueError("word index out of range")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("duplicate word index")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def dense(self) -> np.ndarray:
        h = np.zeros(self.size)
        h[self.indices] = self.counts
        return h

    @classmethod
    def from_dense(cls, h):
        h = np.asarray(h)
        idx = np.flatnonzero(h)
        return cls(idx, h[idx].astype(np.int64), len(h))


def _dict_size(eta):
    return np.shape(eta)[-1] + 1


def lse(eta):
    """``log(1 + sum exp(eta))`` along the last axis, overflow-safe."""
    eta = np.asarray(eta, dtype=float)
    m = np.maximum(0.0, eta.max(axis=-1, initial=0.0))
    s = np.exp(-m) + np.exp(eta - m[..., None]).sum(axis=-1)
    return m + np.log(s)


def softmax_probs(eta):
    """Probabilities of all ``D`` words, pivot last."""
    eta = np.asarray(eta, dtype=float)
    l = lse(eta)[..., None]
    head = np.exp(eta - l)
    return np.concatenate([head, np.exp(-l)], axis=-1)


def head_probs(eta):
    """Softmax probabilities of the ``D - 1`` non-pivot words."""
    eta = np.asarray(eta, dtype=float)
    return np.exp(eta - lse(eta)[..., None])


def bohning_A_apply(v):
    """``A v`` with ``A = (I - 11^T / D) / 2``, along the last axis."""
    v = np.asarray(v, dtype=float)
    D = _dict_size(v)
    return 0.5 * v - v.sum(axis=-1, keepdims=True) / (2.0 * D)


def bohning_A_inverse_apply(v):
    """``A^{-1} v = 2 (v + (sum v) 1)``, along the last axis."""
    v = np.asarray(v, dtype=float)
    return 2.0 * (v + v.sum(axis=-1, keepdims=True))


def bohning_bound_coeffs(psi):
    """Linear and constant terms of the quadratic lse bound anchored at ``psi``.

    Returns ``(g, c)`` such that for every ``eta``::

        lse(eta) <= eta^T A eta / 2 + g^T eta + c

    with equality at ``eta = psi``.
    """
    psi = np.asarray(psi, dtype=float)
    p = head_probs(psi)
    Apsi = bohning_A_apply(psi)
    g = p - Apsi
    c = lse(psi) + 0.5 * (psi * Apsi).sum(axis=-1) - (psi * p).sum(axis=-1)
    return g, c


def transformed_obs(h, psi):
    """Bound-transformed observation ``h_tilde`` and ``z = M A h_tilde``.

    ``h`` holds the counts of all ``D`` words (dense array or
    :class:`WordCounts`); ``psi`` is the expansion point of length ``D - 1``.
    ``z`` is computed as ``h_head - M p_psi + M A psi`` so that ``A^{-1}``
    is never needed for it.
    """
    if isinstance(h, WordCounts):
        h = h.dense()
    h = np.asarray(h, dtype=float)
    psi = np.asarray(psi, dtype=float)
    M = h.sum(axis=-1, keepdims=True)
    if np.any(M <= 0):
        raise ValueError("hashtag has no words (M = 0)")
    head = h[..., :-1]
    p = head_probs(psi)
    h_tilde = bohning_A_inverse_apply(head / M - p) + psi
    z = head - M * p + M * bohning_A_apply(psi)
    return h_tilde, z


def log_multinomial_coef(h):
    """``log(M! / prod h_d!)`` along the last axis."""
    h = np.asarray(h, dtype=float)
    return gammaln(h.sum(axis=-1) + 1.0) - gammaln(h + 1.0).sum(axis=-1)


def multinomial_log_pmf(h, eta):
    """Log multinomial probability of counts ``h`` (length ``D``) at ``eta``."""
    if isinstance(h, WordCounts):
        h = h.dense()
    h = np.asarray(h, dtype=float)
    eta = np.asarray(eta, dtype=float)
    logp_head = eta - lse(eta)[..., None]
    logp_pivot = -lse(eta)
    with np.errstate(invalid="ignore"):
        ll = (np.where(h[..., :-1] > 0, h[..., :-1] * logp_head, 0.0).sum(axis=-1)
              + np.where(h[..., -1] > 0, h[..., -1] * logp_pivot, 0.0))
    return log_multinomial_coef(h) + ll
