"""Log-domain Bessel functions and the vMF log-normalizer.

Everything here works on ``log I_v(x)`` directly; unnormalized Bessel values
overflow double precision long before the dimensions we care about (M=512,
kappa=50 gives log C around 868).

Two evaluation branches are used for ``log I_v``:

* a power series of positive terms summed with log-sum-exp, accurate for any
  ``x`` but with a cost that grows linearly in ``x``;
* the Debye uniform asymptotic expansion (Hankel's large-argument expansion
  for ``v = 0``), cheap and accurate once ``x`` is large relative to the
  truncation.

The switchover point is picked per order by scanning a grid and taking the
argument where both branches agree best.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import gammaln, logsumexp

__all__ = [
    "DomainError",
    "FitError",
    "log_bessel_i",
    "bessel_ratio",
    "mean_resultant_length",
    "seam_point",
    "log_c_exact",
    "log_c_uniform",
    "ExactNormalizer",
    "QuadraticNormalizerFit",
    "fit_log_c_quadratic",
    "log_c_approx",
    "PUBLISHED_PRESETS",
    "published_preset",
    "get_normalizer",
]

MAX_ORDER = 512
_DEBYE_TERMS = 12
_HANKEL_TERMS = 14
_SEAM_GRID = np.concatenate([np.arange(4.0, 60.0, 1.0), np.arange(60.0, 501.0, 5.0)])


class DomainError(ValueError):
    """Argument outside the supported domain of a special function."""


class FitError(ValueError):
    """Least-squares fit could not be formed."""


def _check_order(order: float) -> float:
    order = float(order)
    if order < 0 or not float(2 * order).is_integer():
        raise DomainError(f"order must be a nonnegative half-integer, got {order}")
    if order > MAX_ORDER:
        raise DomainError(f"order {order} exceeds supported maximum {MAX_ORDER}")
    return order


def _as_nonneg(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("argument must be nonnegative")
    return x


# ---------------------------------------------------------------------------
# series branch


def _log_series_scaled(order: float, x: np.ndarray) -> np.ndarray:
    """``log(I_v(x) / (x/2)**v)`` by direct summation of the power series."""
    x = np.atleast_1d(x)
    out = np.full(x.shape, -gammaln(order + 1.0))
    pos = x > 0
    if not np.any(pos):
        return out
    xp = x[pos]
    xmax = float(xp.max())
    kpeak = 0.5 * (math.sqrt(order * order + xmax * xmax) - order)
    nterms = int(kpeak + 15.0 * math.sqrt(kpeak + 1.0) + 40)
    k = np.arange(nterms, dtype=np.float64)
    log_q = 2.0 * np.log(0.5 * xp)
    terms = (
        k[None, :] * log_q[:, None]
        - gammaln(k + 1.0)[None, :]
        - gammaln(k + order + 1.0)[None, :]
    )
    out[pos] = logsumexp(terms, axis=1)
    return out


def _log_bessel_series(order: float, x: np.ndarray) -> np.ndarray:
    x = np.atleast_1d(x)
    with np.errstate(divide="ignore"):
        lead = np.where(x > 0, order * np.log(0.5 * np.where(x > 0, x, 1.0)), 0.0)
    out = lead + _log_series_scaled(order, x)
    if order > 0:
        out = np.where(x > 0, out, -np.inf)
    return out


# ---------------------------------------------------------------------------
# asymptotic branch


@functools.lru_cache(maxsize=None)
def _debye_polys(nterms: int = _DEBYE_TERMS) -> tuple[Polynomial, ...]:
    polys = [Polynomial([1.0])]
    p2 = Polynomial([0.0, 0.0, 1.0])
    weight = Polynomial([1.0, 0.0, -5.0])
    for _ in range(nterms - 1):
        u = polys[-1]
        nxt = 0.5 * p2 * (1 - p2) * u.deriv() + 0.125 * (weight * u).integ()
        polys.append(nxt)
    return tuple(polys)


@functools.lru_cache(maxsize=None)
def _hankel_coeffs(order: float, nterms: int = _HANKEL_TERMS) -> np.ndarray:
    mu = 4.0 * order * order
    coeffs = [1.0]
    for k in range(1, nterms):
        coeffs.append(-coeffs[-1] * (mu - (2 * k - 1) ** 2) / (k * 8.0))
    return np.array(coeffs)


def _log_bessel_asymptotic(order: float, x: np.ndarray) -> np.ndarray:
    x = np.atleast_1d(x).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        if order == 0:
            c = _hankel_coeffs(0.0)
            inv = 1.0 / x
            series = np.polynomial.polynomial.polyval(inv, c)
            return x - 0.5 * np.log(2 * np.pi * x) + np.log(series)
        v = order
        z = x / v
        root = np.sqrt(1.0 + z * z)
        p = 1.0 / root
        eta = root + np.log(z / (1.0 + root))
        total = np.zeros_like(x)
        for k, u in enumerate(_debye_polys()):
            total = total + u(p) / v**k
        return v * eta - 0.5 * np.log(2 * np.pi * v) - 0.5 * np.log(root) + np.log(total)


@functools.lru_cache(maxsize=None)
def _seam(order: float) -> tuple[float, float]:
    grid = _SEAM_GRID
    series = _log_bessel_series(order, grid)
    asym = _log_bessel_asymptotic(order, grid)
    disc = np.abs(series - asym) / np.maximum(1.0, np.abs(series))
    # argmin, preferring the smallest argument among near-ties of the minimum
    best = disc.min()
    idx = int(np.flatnonzero(disc <= max(best, 1e-15) * 1.0000001)[0])
    return float(grid[idx]), float(disc[idx])


def seam_point(order: float) -> tuple[float, float]:
    """Switchover argument and the branch discrepancy measured there."""
    return _seam(_check_order(order))


def _log_bessel(order: float, x: np.ndarray) -> np.ndarray:
    xs, _ = _seam(order)
    x = np.atleast_1d(x)
    out = np.empty(x.shape)
    lo = x < xs
    if np.any(lo):
        out[lo] = _log_bessel_series(order, x[lo])
    if np.any(~lo):
        out[~lo] = _log_bessel_asymptotic(order, x[~lo])
    return out


def _shape_out(x_in, values: np.ndarray):
    if np.ndim(x_in) == 0:
        return float(values.reshape(-1)[0])
    return values.reshape(np.shape(x_in))


def log_bessel_i(order: float, x):
    """Natural log of the modified Bessel function of the first kind.

    ``order`` must be a nonnegative half-integer (M/2 - 1 for an integer
    dimension M >= 2). Returns ``-inf`` at ``x = 0`` for positive orders.
    """
    order = _check_order(order)
    xa = _as_nonneg(x)
    return _shape_out(x, _log_bessel(order, xa.reshape(-1)))


def _log_scaled(order: float, x: np.ndarray) -> np.ndarray:
    """``log(I_v(x) / (x/2)**v)``, finite at the origin."""
    xs, _ = _seam(order)
    out = np.empty(x.shape)
    lo = x < xs
    if np.any(lo):
        out[lo] = _log_series_scaled(order, x[lo])
    hi = ~lo
    if np.any(hi):
        out[hi] = _log_bessel_asymptotic(order, x[hi]) - order * np.log(0.5 * x[hi])
    return out


def bessel_ratio(order: float, x):
    """``I_{v+1}(x) / I_v(x)`` evaluated in log space."""
    order = _check_order(order)
    xa = _as_nonneg(x).reshape(-1)
    with np.errstate(divide="ignore"):
        lr = _log_scaled(order + 1.0, xa) - _log_scaled(order, xa)
        val = np.where(xa > 0, 0.5 * xa * np.exp(lr), 0.0)
    return _shape_out(x, val)


def mean_resultant_length(dim: int, kappa):
    """``A_M(kappa) = I_{M/2}(kappa) / I_{M/2-1}(kappa)``."""
    dim = _check_dim(dim)
    return bessel_ratio(dim / 2.0 - 1.0, kappa)


# ---------------------------------------------------------------------------
# normalizer


def _check_dim(dim) -> int:
    if int(dim) != dim or dim < 2:
        raise DomainError(f"dimension must be an integer >= 2, got {dim}")
    if dim / 2.0 - 1.0 > MAX_ORDER - 1:
        raise DomainError(f"dimension {dim} too large")
    return int(dim)


def log_c_uniform(dim: int) -> float:
    """Log density of the uniform distribution on S^(M-1)."""
    dim = _check_dim(dim)
    return float(gammaln(dim / 2.0) - math.log(2.0) - (dim / 2.0) * math.log(math.pi))


def log_c_exact(dim: int, kappa):
    """Exact ``log C_M(kappa)`` of the vMF density.

    Uses the scaled series near the origin so that ``kappa -> 0`` connects
    smoothly to the uniform-sphere value.
    """
    dim = _check_dim(dim)
    order = dim / 2.0 - 1.0
    ka = _as_nonneg(kappa).reshape(-1)
    # (v log k - v log(k/2)) = v log 2
    val = order * math.log(2.0) - (dim / 2.0) * math.log(2 * math.pi) - _log_scaled(order, ka)
    return _shape_out(kappa, val)


class ExactNormalizer:
    """Exact log-normalizer with its first two derivatives in kappa."""

    backend = "exact"

    def __init__(self, dim: int):
        self.dim = _check_dim(dim)

    def log_c(self, kappa):
        return log_c_exact(self.dim, kappa)

    def dlog_c(self, kappa):
        # d/dk log C_M(k) = -A_M(k)
        return -np.asarray(mean_resultant_length(self.dim, kappa))

    def d2log_c(self, kappa):
        k = np.asarray(kappa, dtype=np.float64)
        a = np.asarray(mean_resultant_length(self.dim, k))
        with np.errstate(divide="ignore", invalid="ignore"):
            da = np.where(k > 1e-8, 1.0 - a * a - (self.dim - 1) * a / np.where(k > 0, k, 1.0), 1.0 / self.dim)
        return -da

    def __repr__(self) -> str:
        return f"ExactNormalizer(dim={self.dim})"


@dataclass(frozen=True)
class QuadraticNormalizerFit:
    """``log C_M(kappa) ~ a + b kappa + c kappa**2`` on ``kappa_range``."""

    dim: int
    a: float
    b: float
    c: float
    kappa_range: tuple[float, float]
    mse_rel: float = float("nan")
    name: str = "fit"

    backend = "approx"

    def log_c(self, kappa):
        k = np.asarray(kappa, dtype=np.float64)
        val = self.a + self.b * k + self.c * k * k
        return float(val) if np.ndim(kappa) == 0 else val

    def dlog_c(self, kappa):
        return self.b + 2.0 * self.c * np.asarray(kappa, dtype=np.float64)

    def d2log_c(self, kappa):
        return np.full(np.shape(kappa), 2.0 * self.c)

    def extrapolates(self, kappa):
        k = np.asarray(kappa, dtype=np.float64)
        lo, hi = self.kappa_range
        return (k < lo) | (k > hi)

    def is_decreasing(self) -> bool:
        lo, hi = self.kappa_range
        return bool(self.c < 0 and self.dlog_c(lo) < 0 and self.dlog_c(hi) < 0)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "kmin": self.kappa_range[0],
            "kmax": self.kappa_range[1],
            "mse_rel": self.mse_rel,
        }


def relative_mse(fit: QuadraticNormalizerFit, kappa_grid) -> float:
    """Mean squared error against the exact evaluator, over mean squared truth."""
    k = np.asarray(kappa_grid, dtype=np.float64)
    exact = log_c_exact(fit.dim, k)
    return float(np.mean((fit.log_c(k) - exact) ** 2) / np.mean(exact**2))


def fit_log_c_quadratic(dim: int, kappa_grid) -> QuadraticNormalizerFit:
    """Ordinary least-squares quadratic fit of the exact log-normalizer."""
    dim = _check_dim(dim)
    k = np.asarray(kappa_grid, dtype=np.float64).reshape(-1)
    if np.unique(k).size < 3:
        raise FitError("need at least 3 distinct kappa values for a quadratic fit")
    y = log_c_exact(dim, k)
    design = np.stack([np.ones_like(k), k, k * k], axis=1)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 3:
        raise FitError("rank-deficient design matrix")
    fit = QuadraticNormalizerFit(
        dim, float(coef[0]), float(coef[1]), float(coef[2]), (float(k.min()), float(k.max()))
    )
    fit = QuadraticNormalizerFit(
        fit.dim, fit.a, fit.b, fit.c, fit.kappa_range, relative_mse(fit, k)
    )
    if not fit.is_decreasing():
        warnings.warn(
            f"quadratic fit for M={dim} is not strictly decreasing on {fit.kappa_range}",
            RuntimeWarning,
            stacklevel=2,
        )
    return fit


def log_c_approx(fit: QuadraticNormalizerFit, kappa, with_flag: bool = False):
    """Evaluate a quadratic fit; optionally also return an extrapolation mask."""
    val = fit.log_c(kappa)
    if with_flag:
        return val, fit.extrapolates(kappa)
    return val


PUBLISHED_PRESETS = {
    "paper-128": QuadraticNormalizerFit(128, 127.0, -0.01909, -0.003355, (10.0, 50.0), name="paper-128"),
    "paper-512": QuadraticNormalizerFit(512, 868.0, -0.0002662, -0.0009685, (10.0, 50.0), name="paper-512"),
}

DEFAULT_FIT_GRID = np.arange(10.0, 51.0)


def published_preset(name: str) -> QuadraticNormalizerFit:
    try:
        return PUBLISHED_PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PUBLISHED_PRESETS)}") from None


@functools.lru_cache(maxsize=None)
def _default_fit(dim: int) -> QuadraticNormalizerFit:
    return fit_log_c_quadratic(dim, DEFAULT_FIT_GRID)


@functools.lru_cache(maxsize=None)
def get_normalizer(dim: int, backend: str = "exact"):
    """Normalizer for ``dim``: ``exact``, ``approx`` (own fit on 10..50) or a preset name."""
    if backend == "exact":
        return ExactNormalizer(dim)
    if backend == "approx":
        return _default_fit(int(dim))
    fit = published_preset(backend)
    if fit.dim != dim:
        raise DomainError(f"preset {backend} is for M={fit.dim}, not M={dim}")
    return fit
