"""NCA++ losses over proxy banks, their analytic gradients and training traces.

All losses are negative log-softmax over the logits ``-d(proxy_c, sample) / t``;
perfect separation sends them to 0. The batched loss is written once on top of
the autodiff primitives, so :func:`loss_gradients` is exact reverse mode
through normalization, the normalizer, the metric and (for EL_NIVMF) the
reparameterized sampler.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from . import autodiff as ad
from .directional import (
    DegenerateEmbeddingError,
    EPS_NORM,
    compose_samples,
    nivmf_logpdf,
    sample_tangent,
    sample_w_inverse_cdf,
    sample_w_wood,
)
from .metrics import (
    Metric,
    MetricKind,
    b_vmf_distance,
    cos_distance,
    el_vmf_distance,
    kl_vmf_distance,
    l2_distance,
    nivmf_point_distance,
)
from .specfn import get_normalizer


class ParameterizationError(ValueError):
    """Proxy concentration shape does not fit the selected metric."""


class UnsupportedGradientError(RuntimeError):
    """Gradient through the rejection sampler was requested."""


PLACEMENTS = ("inside", "outside")
SAMPLER_GRADS = ("auto", "exact", "stop")


@dataclass(frozen=True)
class LossConfig:
    """Loss hyper-parameters.

    ``temperature_placement`` only matters for EL_NIVMF: ``inside`` divides the
    per-sample log-likelihoods by ``t`` before the log-sum-exp, ``outside``
    divides the finished distance. ``sampler_grad`` picks the gradient path
    through the drawn samples: ``auto`` differentiates the exact M=3 sampler
    and otherwise holds the rejection-sampled coordinate fixed while keeping
    the rotation onto the sample direction; ``exact`` refuses anything but
    M=3; ``stop`` treats samples as constants.
    """

    metric: MetricKind = field(default_factory=lambda: MetricKind(Metric.COS))
    temperature: float = 1.0
    omega: float = 0.0
    temperature_placement: str = "inside"
    include_log_n: bool = True
    sampler_grad: str = "auto"

    def __post_init__(self):
        if isinstance(self.metric, (str, Metric)):
            object.__setattr__(self, "metric", MetricKind(Metric(self.metric)))
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        if self.temperature_placement not in PLACEMENTS:
            raise ValueError(f"temperature_placement must be one of {PLACEMENTS}")
        if self.sampler_grad not in SAMPLER_GRADS:
            raise ValueError(f"sampler_grad must be one of {SAMPLER_GRADS}")

    @property
    def mc_samples(self) -> int:
        return self.metric.mc_samples


@dataclass
class ProxyBank:
    """``C`` proxies stored unconstrained.

    ``direction`` (C, M) is renormalized on use; ``log_kappa`` is (C,) for
    scalar concentrations, (C, M) for per-dimension ones, or None.
    ``log_temperature`` is an optional learnable temperature.
    """

    direction: np.ndarray
    log_kappa: np.ndarray | None = None
    log_temperature: float | None = None

    def __post_init__(self):
        self.direction = np.array(self.direction, dtype=np.float64)
        if self.direction.ndim != 2:
            raise ValueError("direction must be (C, M)")
        if np.any(np.linalg.norm(self.direction, axis=1) <= EPS_NORM):
            raise DegenerateEmbeddingError("zero proxy direction")
        if self.log_kappa is not None:
            self.log_kappa = np.array(self.log_kappa, dtype=np.float64)
            if self.log_kappa.shape not in ((self.count,), (self.count, self.dim)):
                raise ParameterizationError(f"log_kappa shape {self.log_kappa.shape} does not fit (C, M)")

    @classmethod
    def init(cls, count: int, dim: int, kappa: str = "vector", kappa_init: float = 50.0, seed=0, temperature=None):
        rng = np.random.default_rng(seed)
        d = rng.standard_normal((count, dim))
        lk = None
        if kappa == "scalar":
            lk = np.full(count, math.log(kappa_init))
        elif kappa == "vector":
            lk = np.full((count, dim), math.log(kappa_init))
        elif kappa != "none":
            raise ValueError("kappa must be none, scalar or vector")
        lt = None if temperature is None else math.log(temperature)
        return cls(d, lk, lt)

    @classmethod
    def for_metric(cls, metric, count: int, dim: int, **kw):
        return cls.init(count, dim, kappa=MetricKind(Metric(metric)).tag.proxy_kappa, **kw)

    @property
    def count(self) -> int:
        return self.direction.shape[0]

    @property
    def dim(self) -> int:
        return self.direction.shape[1]

    @property
    def kappa_kind(self) -> str:
        if self.log_kappa is None:
            return "none"
        return "scalar" if self.log_kappa.ndim == 1 else "vector"

    @property
    def mu(self) -> np.ndarray:
        return self.direction / np.linalg.norm(self.direction, axis=1, keepdims=True)

    @property
    def kappa(self):
        return None if self.log_kappa is None else np.exp(self.log_kappa)

    def params(self) -> dict:
        out = {"direction": self.direction}
        if self.log_kappa is not None:
            out["log_kappa"] = self.log_kappa
        if self.log_temperature is not None:
            out["log_temperature"] = np.float64(self.log_temperature)
        return out

    def with_params(self, params: dict) -> "ProxyBank":
        lt = params.get("log_temperature", self.log_temperature)
        return ProxyBank(
            params["direction"], params.get("log_kappa", self.log_kappa), None if lt is None else float(lt)
        )

    def copy(self) -> "ProxyBank":
        return self.with_params({k: np.array(v) for k, v in self.params().items()})


# ---------------------------------------------------------------------------
# plain softmax losses and analytic gradients


def nca_softmax_loss(distances, target: int, t: float = 1.0) -> float:
    """``d*/t + logsumexp(-d/t)``: minus the log softmax probability of the target."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty distance vector")
    if not 0 <= target < d.size:
        raise IndexError("target out of range")
    return float(ad.softmax_nll((-d / t)[None, :], [target])[0])


def proxy_nca_pp(proxy_mu, z, target: int, t: float = 1.0) -> float:
    """Standard ProxyNCA++ on L2-normalized proxies and embedding."""
    p = np.asarray(proxy_mu, dtype=np.float64)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    z = np.asarray(z, dtype=np.float64)
    z = z / np.linalg.norm(z)
    logits = p @ z / t
    return float(logsumexp(logits) - logits[target])


def _softmax_neg(distances, t):
    return softmax(-np.asarray(distances, dtype=np.float64) / t)


def analytic_grad_cos(distances, target: int, t: float, proxy_index: int) -> float:
    """dL/ds_p for the cosine metric, with ``distances = -s``."""
    sm = _softmax_neg(distances, t)[proxy_index]
    return (sm - 1.0) / t if proxy_index == target else sm / t


def analytic_grad_l2(kappa_p, kappa_z, similarities, target: int, t: float, proxy_index: int, distances=None) -> float:
    """dL/ds_p for the L2 metric: the cosine form scaled by ``2 kappa_p kappa_z``.

    By default the softmax uses the L2 distances implied by the arguments;
    pass ``distances`` to hold the softmax inputs fixed.
    """
    kp = np.broadcast_to(np.asarray(kappa_p, dtype=np.float64), np.shape(similarities))
    s = np.asarray(similarities, dtype=np.float64)
    if distances is None:
        distances = kp * kp + kappa_z * kappa_z - 2.0 * kp * kappa_z * s
    sm = _softmax_neg(distances, t)[proxy_index]
    scale = 2.0 * kp[proxy_index] * kappa_z / t
    return scale * (sm - 1.0) if proxy_index == target else scale * sm


def joint_loss(prob_loss, aux_loss, omega: float):
    return prob_loss + omega * aux_loss


# ---------------------------------------------------------------------------
# batched loss on the tape


def check_parameterization(bank: ProxyBank, metric) -> None:
    need = MetricKind(Metric(metric.tag if isinstance(metric, MetricKind) else metric)).tag.proxy_kappa
    if need != "none" and bank.kappa_kind != need:
        raise ParameterizationError(f"metric needs {need} proxy concentrations, bank has {bank.kappa_kind}")


def _split_sample(z):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    kz = np.linalg.norm(z2, axis=1)
    if np.any(kz <= EPS_NORM):
        raise DegenerateEmbeddingError("embedding norm below threshold")
    return z2 / kz[:, None], kz, single


def draw_noise(dim: int, kappa_z, n: int, seed):
    """Seeded sampler noise for a batch: (w or uniform u, tangent directions)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kz = np.asarray(kappa_z, dtype=np.float64)
    b = kz.shape[0]
    if dim == 3:
        first = rng.random((b, n))
    else:
        first = sample_w_wood(dim, kz[:, None], rng, size=(b, n))
    v = sample_tangent(dim, rng, (b, n))
    return first, v


def _samples(mu_z, kappa_z, noise, dim, mode):
    first, v = noise
    if mode == "stop":
        mu_z, kappa_z = ad.value(mu_z), ad.value(kappa_z)
    if dim == 3:
        w = sample_w_inverse_cdf(ad.reshape(kappa_z, (-1, 1)), first)
    else:
        if mode == "exact" and (ad.is_var(kappa_z) or ad.is_var(mu_z)):
            raise UnsupportedGradientError("exact sampler gradients exist only for M = 3")
        w = first
    return compose_samples(mu_z, w, v)


def batch_logits(params: dict, mu_z, kappa_z, cfg: LossConfig, noise=None):
    """Logits ``(B, C)`` that enter the softmax; ``params`` as in :meth:`ProxyBank.params`."""
    metric = cfg.metric.tag
    d_raw = params["direction"]
    mu_p = d_raw / ad.norm(d_raw, axis=-1, keepdims=True)
    lt = params.get("log_temperature")
    t = cfg.temperature if lt is None else ad.exp(lt)
    dim = np.shape(ad.value(d_raw))[-1]
    norm = None if metric is Metric.COS or metric is Metric.L2 else get_normalizer(dim, cfg.metric.normalizer_backend)
    mz = ad.reshape(mu_z, (-1, 1, dim))
    mp = ad.reshape(mu_p, (1, -1, dim))
    if metric is Metric.COS:
        return -cos_distance(mp, mz) / t
    kz = ad.reshape(kappa_z, (-1, 1))
    lk = params["log_kappa"]
    if metric.proxy_kappa == "scalar":
        kp = ad.reshape(ad.exp(lk), (1, -1))
        fn = {
            Metric.L2: lambda: l2_distance(kp, mp, kz, mz),
            Metric.EL_VMF: lambda: el_vmf_distance(kp, mp, kz, mz, norm),
            Metric.B_VMF: lambda: b_vmf_distance(kp, mp, kz, mz, norm),
            Metric.KL_VMF: lambda: kl_vmf_distance(kp, mp, kz, mz, norm),
        }[metric]
        return -fn() / t
    kd = ad.exp(lk)
    if metric is Metric.NIVMF_POINT:
        return -nivmf_point_distance(mp, ad.reshape(kd, (1, -1, dim)), mz, norm, ad.reshape(lk, (1, -1, dim))) / t

    # EL_NIVMF: one sample set per batch element, shared by all proxies
    if noise is None:
        raise ValueError("EL_NIVMF needs sampler noise")
    zs = _samples(mu_z, kappa_z, noise, dim, cfg.sampler_grad)  # (B, N, M)
    n = np.shape(ad.value(zs))[-2]
    zs4 = ad.reshape(zs, (-1, 1, n, dim))
    logls = nivmf_logpdf(
        ad.reshape(mu_p, (1, -1, 1, dim)),
        ad.reshape(kd, (1, -1, 1, dim)),
        zs4,
        norm,
        log_kdiag=ad.reshape(lk, (1, -1, 1, dim)),
    )  # (B, C, N)
    shift = math.log(n) if cfg.include_log_n else 0.0
    if cfg.temperature_placement == "inside":
        return ad.logsumexp(logls / t, axis=-1) - shift
    return (ad.logsumexp(logls, axis=-1) - shift) / t


def _nll(logits, targets):
    return ad.softmax_nll(logits, targets)


def _aux_logits(params, mu_z, cfg):
    aux_cfg = LossConfig(MetricKind(Metric.COS), cfg.temperature)
    return batch_logits(params, mu_z, None, aux_cfg)


def _total(params, mu_z, kappa_z, targets, cfg, noise):
    losses = _nll(batch_logits(params, mu_z, kappa_z, cfg, noise), targets)
    prob = ad.sum_(losses) / float(len(targets))
    if cfg.omega > 0:
        aux = ad.sum_(_nll(_aux_logits(params, mu_z, cfg), targets)) / float(len(targets))
    else:
        aux = 0.0
    return joint_loss(prob, aux, cfg.omega), prob, aux


def _prepare(bank, z, targets, cfg, seed):
    check_parameterization(bank, cfg.metric)
    mu_z, kz, single = _split_sample(z)
    if mu_z.shape[1] != bank.dim:
        raise ValueError(f"embedding dim {mu_z.shape[1]} != proxy dim {bank.dim}")
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape[0] != mu_z.shape[0]:
        raise ValueError("one target per embedding required")
    if np.any((t < 0) | (t >= bank.count)):
        raise IndexError("target out of range")
    noise = None
    if cfg.metric.tag is Metric.EL_NIVMF:
        noise = draw_noise(bank.dim, kz, cfg.mc_samples, seed)
    return mu_z, kz, t, single, noise


def prob_nca_loss(bank: ProxyBank, z, target, cfg: LossConfig, seed=0) -> float:
    """Mean probabilistic NCA++ loss of embedding(s) ``z`` (M,) or (B, M) against the bank.

    With ``cfg.omega > 0`` the cosine NCA++ term on the same proxy directions
    is added (joint loss). Use :func:`loss_terms` to get both parts.
    """
    return loss_terms(bank, z, target, cfg, seed)[0]


def loss_terms(bank: ProxyBank, z, target, cfg: LossConfig, seed=0):
    """``(joint, probabilistic, auxiliary)`` loss values."""
    mu_z, kz, t, _, noise = _prepare(bank, z, target, cfg, seed)
    total, prob, aux = _total(bank.params(), mu_z, kz, t, cfg, noise)
    return float(total), float(prob), float(aux)


def per_class_distances(bank: ProxyBank, z, cfg: LossConfig, seed=0) -> np.ndarray:
    """``-t * logits``: the per-class distances the softmax sees, shape (B, C)."""
    mu_z, kz, _, _, noise = _prepare(bank, np.atleast_2d(z), np.zeros(np.atleast_2d(z).shape[0], int), cfg, seed)
    logits = batch_logits(bank.params(), mu_z, kz, cfg, noise)
    t = cfg.temperature if bank.log_temperature is None else math.exp(bank.log_temperature)
    return -t * np.asarray(logits)


@dataclass
class LossGradients:
    loss: float
    prob_loss: float
    aux_loss: float
    params: dict  # gradients keyed like ProxyBank.params()
    z: np.ndarray
    mu_z: np.ndarray  # gradient w.r.t. the unit direction input
    kappa_z: np.ndarray

    @property
    def direction(self):
        return self.params["direction"]

    @property
    def log_kappa(self):
        return self.params.get("log_kappa")


def loss_gradients(bank: ProxyBank, z, target, cfg: LossConfig, seed=0) -> LossGradients:
    """Loss value and reverse-mode gradients for every proxy parameter and for ``z``.

    The embedding enters as its direction and norm; ``kappa_z`` holds the
    gradient w.r.t. the norm and ``z`` the chain-ruled gradient w.r.t. the raw
    vector.
    """
    mu_np, kz_np, t, single, noise = _prepare(bank, z, target, cfg, seed)
    pv = {k: ad.Var(v) for k, v in bank.params().items()}
    mu_v, kz_v = ad.Var(mu_np), ad.Var(kz_np)
    total, prob, aux = _total(pv, mu_v, kz_v, t, cfg, noise)
    ad.backward(total)

    def g(v):
        return np.zeros(v.shape) if v.grad is None else v.grad

    g_mu, g_k = g(mu_v), g(kz_v)
    tangent = g_mu - np.sum(g_mu * mu_np, axis=1, keepdims=True) * mu_np
    g_z = tangent / kz_np[:, None] + g_k[:, None] * mu_np
    if single:
        g_z, g_mu, g_k = g_z[0], g_mu[0], g_k[0]
    return LossGradients(
        float(ad.value(total)),
        float(ad.value(prob)),
        float(ad.value(aux)),
        {k: g(v) for k, v in pv.items()},
        g_z,
        g_mu,
        np.asarray(g_k),
    )


# ---------------------------------------------------------------------------
# traces


TRACE_FIELDS = ("step", "loss", "aux_loss", "grad_mu_norm", "grad_kappa_norm")


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)

    def record(self, step: int, grads: LossGradients, bank: ProxyBank) -> None:
        """Append one row; concentration gradients are w.r.t. kappa itself, not its log."""
        gm = float(np.mean(np.linalg.norm(grads.direction, axis=1)))
        if grads.log_kappa is None:
            gk = 0.0
        else:
            g_kappa = (grads.log_kappa / bank.kappa).reshape(bank.count, -1)
            gk = float(np.mean(np.linalg.norm(g_kappa, axis=1)))
        self.rows.append((int(step), grads.loss, grads.aux_loss, gm, gk))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(TRACE_FIELDS)
            for r in self.rows:
                wr.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
