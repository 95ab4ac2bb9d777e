"""Hypersphere geometry, vMF / nivMF densities and vMF samplers.

Densities come in two layers. The ``*_logpdf`` functions take raw arrays
(or autodiff ``Var``) and broadcast over leading axes; they are what the
metrics and losses build on. The ``*_log_density`` functions take the
parameter dataclasses and check their inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .specfn import get_normalizer

__all__ = [
    "DegenerateEmbeddingError",
    "DimensionMismatchError",
    "EPS_NORM",
    "unit_vector",
    "VmfParams",
    "NivmfParams",
    "EmbeddingDecomposition",
    "cosine_similarity",
    "decompose",
    "normalize",
    "vmf_logpdf",
    "nivmf_logpdf",
    "vmf_log_density",
    "nivmf_log_density",
    "householder_to",
    "sample_w_inverse_cdf",
    "sample_w_wood",
    "sample_tangent",
    "compose_samples",
    "sample_vmf",
    "sample_nivmf_approx",
    "random_rotation",
    "save_samples_csv",
    "load_samples_csv",
    "params_to_json",
    "params_from_json",
]

EPS_NORM = 1e-8
UNIT_TOL = 1e-6


class DegenerateEmbeddingError(ValueError):
    """Embedding norm too small to define a direction."""


class DimensionMismatchError(ValueError):
    pass


def unit_vector(coords) -> np.ndarray:
    """Validate and return ``coords`` as a float array on the unit sphere."""
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("a unit vector needs at least 2 coordinates")
    if abs(np.linalg.norm(x) - 1.0) > UNIT_TOL:
        raise ValueError(f"not unit norm: |x| = {np.linalg.norm(x)}")
    return x


@dataclass(frozen=True)
class VmfParams:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "mu", unit_vector(self.mu))
        if not self.kappa >= 0:
            raise ValueError("kappa must be >= 0")
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def natural(self) -> np.ndarray:
        return self.kappa * self.mu


@dataclass(frozen=True)
class NivmfParams:
    mu: np.ndarray
    kappa_diag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", unit_vector(self.mu))
        k = np.asarray(self.kappa_diag, dtype=np.float64)
        if k.shape != self.mu.shape:
            raise DimensionMismatchError("kappa_diag must match mu in length")
        if np.any(~(k > 0)):
            raise ValueError("every per-dimension concentration must be > 0")
        object.__setattr__(self, "kappa_diag", k)

    @property
    def dim(self) -> int:
        return self.mu.size

    def transformed(self) -> VmfParams:
        """The vMF on the stretched sphere: direction K mu/|K mu|, concentration |K mu|."""
        km = self.kappa_diag * self.mu
        n = np.linalg.norm(km)
        return VmfParams(km / n, n)


@dataclass(frozen=True)
class EmbeddingDecomposition:
    raw: np.ndarray
    mu: np.ndarray = field(repr=False)
    kappa: float

    @property
    def dim(self) -> int:
        return self.raw.size

    def as_vmf(self) -> VmfParams:
        return VmfParams(self.mu, self.kappa)


def normalize(z, axis=-1):
    return z / ad.norm(z, axis=axis, keepdims=True)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two nonzero vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def decompose(z) -> EmbeddingDecomposition:
    """Split an unnormalized embedding into vMF direction and concentration."""
    z = np.asarray(z, dtype=np.float64)
    n = float(np.linalg.norm(z))
    if n <= EPS_NORM:
        raise DegenerateEmbeddingError(f"embedding norm {n:g} is below {EPS_NORM:g}")
    return EmbeddingDecomposition(z, z / n, n)


# ---------------------------------------------------------------------------
# log densities on raw arrays


def vmf_logpdf(mu, kappa, x, normalizer):
    """``log C_M(kappa) + kappa * mu.x`` broadcasting over leading axes."""
    return ad.log_c(kappa, normalizer) + kappa * ad.sum_(mu * x, axis=-1)


def nivmf_logpdf(mu, kdiag, x, normalizer, log_kdiag=None):
    """Non-isotropic vMF log density with the diagonal concentration ``kdiag``.

    ``log C_M(|K mu|) + log D(K) + |K mu| s(K x, K mu)`` where
    ``log D(K) = sum(log k) - log |K mu|``. Pass ``log_kdiag`` when it is
    already available (log-parameterized proxies) to save a log.
    """
    km = kdiag * mu
    kx = kdiag * x
    nkm = ad.norm(km, axis=-1)
    nkx = ad.norm(kx, axis=-1)
    if log_kdiag is None:
        log_kdiag = ad.log(kdiag)
    log_d = ad.sum_(log_kdiag, axis=-1) - ad.log(nkm)
    # |K mu| * s(Kx, K mu) = (Kx . K mu) / |Kx|
    return ad.log_c(nkm, normalizer) + log_d + ad.sum_(kx * km, axis=-1) / nkx


def _check_x(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise DimensionMismatchError(f"point dimension {x.shape[-1]} != {dim}")
    return x


def vmf_log_density(p: VmfParams, x, normalizer: str = "exact"):
    x = _check_x(x, p.dim)
    out = vmf_logpdf(p.mu, p.kappa, x, get_normalizer(p.dim, normalizer))
    return float(out) if np.ndim(out) == 0 else out


def nivmf_log_density(p: NivmfParams, x, normalizer: str = "exact"):
    x = _check_x(x, p.dim)
    out = nivmf_logpdf(p.mu, p.kappa_diag, x, get_normalizer(p.dim, normalizer))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# sampling


def householder_to(mu, y):
    """Apply the reflection that maps ``e_1`` onto ``mu`` to points ``y``.

    ``mu`` has shape (..., M) and broadcasts against ``y`` (..., M). The map is
    ``y - 2 u (u.y) / (u.u)`` with ``u = e_1 - mu``; where ``mu`` already equals
    ``e_1`` the identity is used.
    """
    mu_v = ad.value(mu)
    dim = mu_v.shape[-1]
    e1 = np.zeros(dim)
    e1[0] = 1.0
    u = e1 - mu
    uu = ad.sum_(u * u, axis=-1, keepdims=True)
    degenerate = ad.value(uu) < 1e-24
    if np.all(degenerate):
        return y
    safe_uu = uu + degenerate * 1.0
    coef = 2.0 * ad.sum_(u * y, axis=-1, keepdims=True) / safe_uu
    return y - (1.0 - degenerate) * coef * u


def sample_w_inverse_cdf(kappa, u):
    """Exact inverse CDF of the mean-axis coordinate of a vMF on S^2.

    ``w = 1 + log(u + (1-u) exp(-2 kappa)) / kappa`` rewritten with log1p/expm1
    so small concentrations stay accurate. Differentiable in ``kappa``.
    """
    kv = np.asarray(ad.value(kappa), dtype=np.float64)
    if np.any(kv < 1e-10):
        if ad.is_var(kappa):
            raise ValueError("inverse-CDF gradient undefined at kappa = 0")
        kv_b = np.broadcast_to(kv, np.shape(u))
        small = kv_b < 1e-10
        big = np.where(small, 1.0, kv_b)
        w = 1.0 + np.log1p((1.0 - u) * np.expm1(-2.0 * big)) / big
        return np.where(small, 2.0 * u - 1.0, w)
    return 1.0 + ad.log1p((1.0 - u) * ad.expm1(-2.0 * kappa)) / kappa


def sample_w_wood(dim: int, kappa, rng: np.random.Generator, size=None) -> np.ndarray:
    """Rejection sampler (Wood 1994) for the mean-axis coordinate ``w``.

    ``kappa`` may be an array; the output has shape ``size`` (defaulting to
    ``np.shape(kappa)``) with ``kappa`` broadcast against it.
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    shape = np.shape(kappa) if size is None else tuple(np.atleast_1d(size))
    k = np.broadcast_to(kappa, shape).reshape(-1)
    m1 = dim - 1.0
    b = m1 / (2.0 * k + np.sqrt(4.0 * k * k + m1 * m1))
    x0 = (1.0 - b) / (1.0 + b)
    c = k * x0 + m1 * np.log(1.0 - x0 * x0)
    w = np.empty(k.size)
    todo = np.arange(k.size)
    while todo.size:
        z = rng.beta(m1 / 2.0, m1 / 2.0, size=todo.size)
        bt = b[todo]
        cand = (1.0 - (1.0 + bt) * z) / (1.0 - (1.0 - bt) * z)
        logu = np.log(rng.random(todo.size))
        ok = k[todo] * cand + m1 * np.log(1.0 - x0[todo] * cand) - c[todo] >= logu
        w[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return w.reshape(shape)


def sample_tangent(dim: int, rng: np.random.Generator, size) -> np.ndarray:
    """Uniform unit vectors in the (M-1)-dim tangent space of e_1."""
    shape = tuple(np.atleast_1d(size))
    v = rng.standard_normal(shape + (dim - 1,))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def compose_samples(mu, w, v):
    """Tangent-normal composition ``(w, sqrt(1-w^2) v)`` rotated onto ``mu``.

    ``mu`` (..., M), ``w`` (..., N), ``v`` (..., N, M-1); returns (..., N, M).
    """
    w_e = ad.reshape(w, np.shape(ad.value(w)) + (1,)) if ad.is_var(w) else np.asarray(w)[..., None]
    radial = ad.sqrt(ad.clip(1.0 - w_e * w_e, 0.0, 1.0))
    y = ad.concat_last([w_e, radial * v])
    mu_e = ad.reshape(mu, np.shape(ad.value(mu))[:-1] + (1, np.shape(ad.value(mu))[-1])) if ad.is_var(mu) else np.asarray(mu)[..., None, :]
    return householder_to(mu_e, y)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_vmf(p: VmfParams, n: int, seed=0) -> np.ndarray:
    """Draw ``n`` i.i.d. vMF samples, shape (n, M). Deterministic given ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    if p.dim == 3:
        w = sample_w_inverse_cdf(p.kappa, rng.random(n))
    else:
        w = sample_w_wood(p.dim, p.kappa, rng, size=n)
    v = sample_tangent(p.dim, rng, n)
    return compose_samples(p.mu, w, v)


def sample_nivmf_approx(p: NivmfParams, n: int, seed=0) -> np.ndarray:
    """Sample through the change of variables ``x = K^-1 y / |K^-1 y|``, ``y ~ vMF(K mu/|K mu|, |K mu|)``."""
    y = sample_vmf(p.transformed(), n, seed)
    x = y / p.kappa_diag
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def random_rotation(dim: int, seed=0) -> np.ndarray:
    """Haar-random orthogonal matrix."""
    rng = _rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# files


def save_samples_csv(path, samples) -> None:
    samples = np.atleast_2d(samples)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"x{i}" for i in range(samples.shape[1])])
        for row in samples:
            wr.writerow([repr(float(v)) for v in row])


def load_samples_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def params_to_json(p) -> str:
    if isinstance(p, VmfParams):
        doc = {"mu": p.mu.tolist(), "kappa": p.kappa}
    elif isinstance(p, NivmfParams):
        doc = {"mu": p.mu.tolist(), "kappa_diag": p.kappa_diag.tolist()}
    else:
        raise TypeError(type(p))
    return json.dumps(doc)


def params_from_json(text):
    doc = json.loads(Path(text).read_text() if isinstance(text, Path) else text)
    if "kappa_diag" in doc:
        return NivmfParams(np.array(doc["mu"]), np.array(doc["kappa_diag"]))
    return VmfParams(np.array(doc["mu"]), doc["kappa"])
