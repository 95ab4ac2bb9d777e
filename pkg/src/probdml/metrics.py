"""Proxy-to-sample distances.

Distribution-to-point: cosine, squared L2 on natural parameters, nivMF
negative log-likelihood. Distribution-to-distribution: Monte-Carlo expected
likelihood against a nivMF proxy, and closed forms for vMF proxies
(expected likelihood, Bhattacharyya, KL).

The ``*_distance`` functions work on raw arrays or autodiff ``Var`` and
broadcast over leading axes, so the loss code can evaluate a (batch, class)
grid in one call. ``d_*`` wrap them for single parameter objects.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .directional import (
    DimensionMismatchError,
    EmbeddingDecomposition,
    NivmfParams,
    VmfParams,
    cosine_similarity,
    nivmf_logpdf,
    sample_vmf,
)
from .specfn import get_normalizer


class Metric(str, enum.Enum):
    COS = "cos"
    L2 = "l2"
    NIVMF_POINT = "nivmf_point"
    EL_NIVMF = "el_nivmf"
    EL_VMF = "el_vmf"
    B_VMF = "b_vmf"
    KL_VMF = "kl_vmf"

    @property
    def proxy_kappa(self) -> str:
        """Concentration shape the proxies need: ``none``, ``scalar`` or ``vector``."""
        if self is Metric.COS:
            return "none"
        if self in (Metric.NIVMF_POINT, Metric.EL_NIVMF):
            return "vector"
        return "scalar"


@dataclass(frozen=True)
class MetricKind:
    tag: Metric
    mc_samples: int = 5
    normalizer_backend: str = "exact"

    def __post_init__(self):
        object.__setattr__(self, "tag", Metric(self.tag))
        if self.tag is Metric.EL_NIVMF and self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1 for EL_NIVMF")


def _sim(mu_a, mu_b):
    return ad.clip(ad.sum_(mu_a * mu_b, axis=-1), -1.0, 1.0)


# ---------------------------------------------------------------------------
# array-level distances


def cos_distance(mu_p, mu_z):
    return -_sim(mu_p, mu_z)


def l2_distance(kappa_p, mu_p, kappa_z, mu_z):
    """``kp^2 + kz^2 - 2 kp kz s`` (law of cosines for |nu_p - nu_z|^2)."""
    s = _sim(mu_p, mu_z)
    return kappa_p * kappa_p + kappa_z * kappa_z - 2.0 * kappa_p * kappa_z * s


def nivmf_point_distance(mu_p, kdiag, mu_z, normalizer, log_kdiag=None):
    return -nivmf_logpdf(mu_p, kdiag, mu_z, normalizer, log_kdiag=log_kdiag)


def _sum_norm(kappa_p, mu_p, kappa_z, mu_z):
    s = _sim(mu_p, mu_z)
    sq = kappa_p * kappa_p + kappa_z * kappa_z + 2.0 * kappa_p * kappa_z * s
    return ad.sqrt(ad.clip(sq, 0.0, np.inf))


def el_vmf_distance(kappa_p, mu_p, kappa_z, mu_z, normalizer):
    """``log C(|nu_z + nu_p|) - log C(kz) - log C(kp)``."""
    n0 = _sum_norm(kappa_p, mu_p, kappa_z, mu_z)
    return ad.log_c(n0, normalizer) - ad.log_c(kappa_z, normalizer) - ad.log_c(kappa_p, normalizer)


def b_vmf_distance(kappa_p, mu_p, kappa_z, mu_z, normalizer):
    """``log C(|nu_z + nu_p|/2) - log C(kz)/2 - log C(kp)/2``."""
    n0 = _sum_norm(kappa_p, mu_p, kappa_z, mu_z)
    return (
        ad.log_c(0.5 * n0, normalizer)
        - 0.5 * ad.log_c(kappa_z, normalizer)
        - 0.5 * ad.log_c(kappa_p, normalizer)
    )


def kl_vmf_distance(kappa_p, mu_p, kappa_z, mu_z, normalizer):
    """KL(sample || proxy) between two vMFs.

    ``log C(kz) - log C(kp) + A(kz) (kz - kp s)`` with the mean resultant
    length ``A = -d log C / d kappa`` taken from the same normalizer backend.
    """
    s = _sim(mu_p, mu_z)
    a_z = -ad.dlog_c(kappa_z, normalizer)
    return ad.log_c(kappa_z, normalizer) - ad.log_c(kappa_p, normalizer) + a_z * (kappa_z - kappa_p * s)


def kl_vmf_distance_unit_mean(kappa_p, mu_p, kappa_z, mu_z, normalizer):
    """Variant that replaces E[z] by the mode ``mu_z`` (drops the A(kz) factor).

    Kept for comparison only: it is not a KL divergence and can go negative.
    """
    s = _sim(mu_p, mu_z)
    return ad.log_c(kappa_z, normalizer) - ad.log_c(kappa_p, normalizer) + kappa_z - kappa_p * s


def el_nivmf_distance(mu_p, kdiag, samples, normalizer, log_kdiag=None, log_n: bool = True):
    """Monte-Carlo expected likelihood ``-log mean_i rho(z_i)`` in log space.

    ``samples`` has shape (..., N, M); proxy arrays broadcast against the
    leading axes. With ``log_n=False`` the ``+ log N`` shift is omitted.
    """
    mu_e = _expand_n(mu_p)
    k_e = _expand_n(kdiag)
    lk_e = None if log_kdiag is None else _expand_n(log_kdiag)
    logls = nivmf_logpdf(mu_e, k_e, samples, normalizer, log_kdiag=lk_e)
    n = np.shape(ad.value(samples))[-2]
    out = -ad.logsumexp(logls, axis=-1)
    return out + math.log(n) if log_n else out


def _expand_n(a):
    shape = np.shape(ad.value(a))
    return ad.reshape(a, shape[:-1] + (1, shape[-1]))


# ---------------------------------------------------------------------------
# parameter-level wrappers


def _dims(*objs):
    dims = {o.dim if hasattr(o, "dim") else np.size(o) for o in objs}
    if len(dims) != 1:
        raise DimensionMismatchError(f"dimension mismatch: {sorted(dims)}")
    return dims.pop()


def d_cos(proxy_mu, sample: EmbeddingDecomposition) -> float:
    _dims(np.asarray(proxy_mu), sample)
    return -cosine_similarity(proxy_mu, sample.mu)


def d_l2(proxy: VmfParams, sample: EmbeddingDecomposition) -> float:
    _dims(proxy, sample)
    return float(l2_distance(proxy.kappa, proxy.mu, sample.kappa, sample.mu))


def d_nivmf_point(proxy: NivmfParams, sample: EmbeddingDecomposition, backend: str = "exact") -> float:
    m = _dims(proxy, sample)
    return float(nivmf_point_distance(proxy.mu, proxy.kappa_diag, sample.mu, get_normalizer(m, backend)))


def d_el_nivmf(
    proxy: NivmfParams,
    sample: EmbeddingDecomposition,
    n: int = 5,
    seed=0,
    backend: str = "exact",
) -> float:
    m = _dims(proxy, sample)
    if n < 1:
        raise ValueError("n must be >= 1")
    zs = sample_vmf(sample.as_vmf(), n, seed)
    return float(el_nivmf_distance(proxy.mu, proxy.kappa_diag, zs, get_normalizer(m, backend)))


def d_el_vmf(proxy: VmfParams, sample: EmbeddingDecomposition, backend: str = "exact") -> float:
    m = _dims(proxy, sample)
    return float(el_vmf_distance(proxy.kappa, proxy.mu, sample.kappa, sample.mu, get_normalizer(m, backend)))


def d_b_vmf(proxy: VmfParams, sample: EmbeddingDecomposition, backend: str = "exact") -> float:
    m = _dims(proxy, sample)
    return float(b_vmf_distance(proxy.kappa, proxy.mu, sample.kappa, sample.mu, get_normalizer(m, backend)))


def d_kl_vmf(proxy: VmfParams, sample: EmbeddingDecomposition, backend: str = "exact") -> float:
    m = _dims(proxy, sample)
    return float(kl_vmf_distance(proxy.kappa, proxy.mu, sample.kappa, sample.mu, get_normalizer(m, backend)))


def d_kl_vmf_unit_mean(proxy: VmfParams, sample: EmbeddingDecomposition, backend: str = "exact") -> float:
    m = _dims(proxy, sample)
    return float(
        kl_vmf_distance_unit_mean(proxy.kappa, proxy.mu, sample.kappa, sample.mu, get_normalizer(m, backend))
    )


def distance(metric: Metric | str, proxy, sample: EmbeddingDecomposition, backend="exact", n=5, seed=0) -> float:
    """Dispatch on ``metric``; ``proxy`` is a VmfParams, NivmfParams or direction as appropriate."""
    metric = Metric(metric)
    if metric is Metric.COS:
        mu = proxy.mu if hasattr(proxy, "mu") else proxy
        return d_cos(mu, sample)
    if metric is Metric.L2:
        return d_l2(proxy, sample)
    if metric is Metric.NIVMF_POINT:
        return d_nivmf_point(proxy, sample, backend)
    if metric is Metric.EL_NIVMF:
        return d_el_nivmf(proxy, sample, n=n, seed=seed, backend=backend)
    fn = {Metric.EL_VMF: d_el_vmf, Metric.B_VMF: d_b_vmf, Metric.KL_VMF: d_kl_vmf}[metric]
    return fn(proxy, sample, backend)


def distance_surface(
    metric: Metric | str,
    kappa_p: float,
    kappa_z_values,
    angles,
    dim: int = 3,
    backend: str = "exact",
    mc_samples: int = 1000,
    seed: int = 0,
):
    """Distance of a sample at angle ``theta`` (radians) and norm ``kappa_z`` to a proxy at e_1.

    nivMF metrics use the isotropic proxy ``K = kappa_p I``. Returns rows
    ``(angle, kappa_z, distance)``.
    """
    metric = Metric(metric)
    mu_p = np.zeros(dim)
    mu_p[0] = 1.0
    if metric.proxy_kappa == "vector":
        proxy = NivmfParams(mu_p, np.full(dim, float(kappa_p)))
    else:
        proxy = VmfParams(mu_p, kappa_p)
    rows = []
    for theta in np.asarray(angles, dtype=np.float64):
        mu_z = np.zeros(dim)
        mu_z[0], mu_z[1] = np.cos(theta), np.sin(theta)
        for kz in np.asarray(kappa_z_values, dtype=np.float64):
            sample = EmbeddingDecomposition(kz * mu_z, mu_z, float(kz))
            d = distance(metric, proxy, sample, backend=backend, n=mc_samples, seed=seed)
            rows.append((float(theta), float(kz), d))
    return rows


def write_surface_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["angle", "kappa_z", "distance"])
        for r in rows:
            wr.writerow([repr(v) for v in r])
