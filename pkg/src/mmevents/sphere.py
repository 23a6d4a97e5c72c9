"""Three-dimensional von Mises-Fisher primitives.

Geotags are mapped to the unit sphere with the fixed convention::

    x = cos(lat) cos(lon),  y = cos(lat) sin(lon),  z = sin(lat)

Everything here is specialised to the 3-D case, where the normalising
constant and the marginal of ``w . mu`` have closed forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_4PI = np.log(4.0 * np.pi)
LOG_2PI = np.log(2.0 * np.pi)

# Largest admissible mean resultant length; tau = 1 is a pole of every
# concentration estimator and finite data can hit it exactly.
TAU_MAX = 1.0 - 1e-8

_DEFAULT_MEAN = np.array([0.0, 0.0, 1.0])


def normalize(v, axis=-1):
    """Scale ``v`` to unit norm along ``axis``."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cannot normalize a zero vector")
    return v / n


@dataclass(frozen=True)
class GeoCoordinate:
    """Latitude in [-90, 90] and longitude in (-180, 180], in degrees."""

    latitude: float
    longitude: float

    def __post_init__(self):
        lat, lon = float(self.latitude), float(self.longitude)
        if not (-90.0 <= lat <= 90.0) or not np.isfinite(lat):
            raise ValueError(f"latitude out of range: {lat}")
        if not (-180.0 <= lon <= 180.0) or not np.isfinite(lon):
            raise ValueError(f"longitude out of range: {lon}")
        if lon == -180.0:
            lon = 180.0
        object.__setattr__(self, "latitude", lat)
        object.__setattr__(self, "longitude", lon)


@dataclass
class VmfParams:
    """Mean direction and concentration of a 3-D vMF distribution.

    ``degenerate`` is set by estimators that could not determine a mean
    direction (zero resultant); the mean is then an arbitrary fixed axis.
    """

    mean: np.ndarray
    kappa: float
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.mean = normalize(self.mean)
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")
        self.kappa = float(self.kappa)


def geo_to_cartesian(lat, lon):
    """Convert degrees latitude/longitude to unit vectors.

    Accepts scalars or broadcastable arrays; returns shape ``(..., 3)``.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(~np.isfinite(lat)) or np.any(np.abs(lat) > 90.0):
        raise ValueError("latitude must lie in [-90, 90]")
    if np.any(~np.isfinite(lon)) or np.any(np.abs(lon) > 180.0):
        raise ValueError("longitude must lie in [-180, 180]")
    phi = np.radians(lat)
    lam = np.radians(lon)
    cphi = np.cos(phi)
    return np.stack([cphi * np.cos(lam), cphi * np.sin(lam), np.sin(phi)], axis=-1)


def cartesian_to_geo(v) -> GeoCoordinate:
    """Inverse of :func:`geo_to_cartesian` for a single unit vector.

    At the poles the longitude is reported as 0.
    """
    x, y, z = normalize(v)
    lat = np.degrees(np.arcsin(np.clip(z, -1.0, 1.0)))
    if np.hypot(x, y) < 1e-15:
        lon = 0.0
    else:
        lon = np.degrees(np.arctan2(y, x))
    return GeoCoordinate(float(lat), float(lon))


def vmf_log_norm_const(kappa):
    """Log of the 3-D vMF normaliser ``C(k) = k / (2 pi (e^k - e^-k))``.

    Vectorised. ``kappa = 0`` gives the uniform density ``1 / (4 pi)``.
    """
    k = np.asarray(kappa, dtype=float)
    if np.any(~(k >= 0)):
        raise ValueError("kappa must be nonnegative")
    out = np.empty_like(k)
    small = k < 1.0
    ks = k[small]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ks > 0, ks / np.sinh(ks), 1.0)
    out[small] = np.log(ratio) - LOG_4PI
    kl = k[~small]
    out[~small] = np.log(kl) - LOG_2PI - kl - np.log1p(-np.exp(-2.0 * kl))
    return out if out.ndim else float(out)


def vmf_log_pdf(w, params: VmfParams):
    """Log density of unit vector(s) ``w`` (shape ``(..., 3)``)."""
    w = np.asarray(w, dtype=float)
    return vmf_log_norm_const(params.kappa) + params.kappa * (w @ params.mean)


def mean_resultant(kappa):
    """Expected ``w . mu`` under vMF(mu, kappa): ``coth(k) - 1/k``. Vectorised."""
    k = np.asarray(kappa, dtype=float)
    out = np.empty_like(k)
    tiny = k < 1e-3
    kt = k[tiny]
    # series: k/3 - k^3/45 + 2k^5/945
    out[tiny] = kt / 3.0 - kt**3 / 45.0 + 2.0 * kt**5 / 945.0
    kb = k[~tiny]
    out[~tiny] = 1.0 / np.tanh(kb) - 1.0 / kb
    return out if out.ndim else float(out)


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau >= 0)) or np.any(tau >= 1.0):
        raise ValueError("tau must lie in [0, 1)")
    return tau


def estimate_kappa_banerjee(tau):
    """Closed-form concentration estimate ``max(0, (3t - t^3) / (1 - t^2))``.

    Vectorised over ``tau``; callers clamp ``tau`` to ``[0, TAU_MAX]``.
    """
    tau = _check_tau(tau)
    k = np.maximum(0.0, (3.0 * tau - tau**3) / (1.0 - tau**2))
    return k if k.ndim else float(k)


def solve_kappa_bisection(tau, tol=1e-10, max_iter=400):
    """Solve ``coth(k) - 1/k = tau`` for ``k`` by bisection.

    The left-hand side is continuous and strictly increasing from 0 to 1,
    so the root is unique. The bracket is grown geometrically until it
    contains the root. Vectorised over ``tau``.
    """
    tau = _check_tau(tau)
    scalar = tau.ndim == 0
    tau = np.atleast_1d(tau)
    out = np.zeros_like(tau)
    for j, t in enumerate(tau):
        if t == 0.0:
            continue
        lo, hi = 0.0, 1.0
        while mean_resultant(hi) < t:
            lo, hi = hi, 2.0 * hi
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            f = mean_resultant(mid) - t
            if abs(f) <= tol:
                break
            if f < 0:
                lo = mid
            else:
                hi = mid
        else:
            raise ArithmeticError(f"bisection did not converge for tau={t}")
        out[j] = mid
    return float(out[0]) if scalar else out


def _orthonormal_frame(mu):
    """Two unit vectors completing ``mu`` to a right-handed orthonormal basis."""
    a = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = normalize(np.cross(mu, a))
    e2 = np.cross(mu, e1)
    return e1, e2


def vmf_sample(params: VmfParams, n: int, rng=None):
    """Draw ``n`` i.i.d. samples from a 3-D vMF distribution.

    Uses the inverse CDF of the marginal of ``t = w . mu``, whose density is
    proportional to ``exp(kappa t)`` on [-1, 1], plus a uniform angle in the
    tangent plane. ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(rng)
    k = params.kappa
    u = 1.0 - rng.random(n)  # (0, 1]
    if k < 1e-8:
        t = 2.0 * u - 1.0
    else:
        t = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * k)) / k
    t = np.clip(t, -1.0, 1.0)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    e1, e2 = _orthonormal_frame(params.mean)
    rho = np.sqrt(np.maximum(0.0, 1.0 - t * t))[:, None]
    w = (t[:, None] * params.mean
         + rho * (np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2))
    return normalize(w)


def vmf_mle(samples) -> VmfParams:
    """Fit a single vMF population to unit vectors of shape ``(n, 3)``.

    The mean is the normalised resultant; the concentration comes from the
    closed-form estimator applied to the clamped mean resultant length.
    An exactly cancelling resultant yields ``kappa = 0`` and a flagged,
    arbitrary mean.
    """
    w = np.asarray(samples, dtype=float).reshape(-1, 3)
    if len(w) < 2:
        raise ValueError("need at least two samples")
    return vmf_fit_resultant(w.sum(axis=0), len(w))


def vmf_fit_resultant(resultant, n) -> VmfParams:
    """:func:`vmf_mle` from the sufficient statistics (vector sum, count)."""
    resultant = np.asarray(resultant, dtype=float)
    norm = np.linalg.norm(resultant)
    if norm <= 1e-12 * n:
        return VmfParams(_DEFAULT_MEAN.copy(), 0.0, degenerate=True)
    tau = min(norm / n, TAU_MAX)
    return VmfParams(resultant / norm, estimate_kappa_banerjee(tau))
