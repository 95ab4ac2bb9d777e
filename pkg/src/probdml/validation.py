"""Fast self-check suites run by ``probdml validate``.

Each suite is a list of named checks against closed forms, quadrature on S^2
or structural identities. They are a smoke-level mirror of the test suite
that needs nothing beyond the installed package.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

from . import autodiff as ad
from . import specfn
from .directional import NivmfParams, VmfParams, decompose, nivmf_log_density, sample_vmf, vmf_log_density
from .evaluation import map_at_r, recall_at_k
from .losses import LossConfig, ProxyBank, loss_gradients, nca_softmax_loss, prob_nca_loss
from .metrics import Metric, MetricKind, d_b_vmf, d_el_vmf, d_kl_vmf
from .synthdata import SyntheticSpec, generate
from .trainer import TrainConfig, train


def _e(m, i=0):
    x = np.zeros(m)
    x[i] = 1.0
    return x


def _suite_specfn():
    yield "closed form M=3", abs(specfn.log_c_exact(3, 1.0) - math.log(1 / (4 * math.pi * math.sinh(1.0)))) < 1e-13
    yield "half-order Bessel", abs(specfn.log_bessel_i(0.5, 1.0) - math.log(math.sinh(1) * math.sqrt(2 / math.pi))) < 1e-13
    yield "uniform limit", abs(specfn.log_c_exact(2, 0.0) + math.log(2 * math.pi)) < 1e-14
    ks = np.linspace(1e-3, 200, 501)
    yield "monotone M=512", bool(np.all(np.diff(specfn.log_c_exact(512, ks)) < 0))
    grid = specfn.DEFAULT_FIT_GRID
    for m in (128, 512):
        yield f"fit mse M={m}", specfn.fit_log_c_quadratic(m, grid).mse_rel < 1e-3
        p = specfn.published_preset(f"paper-{m}")
        ex = specfn.log_c_exact(m, grid)
        yield f"preset M={m}", float(np.max(np.abs(p.log_c(grid) - ex) / np.abs(ex))) < 5e-3


def _s2_integral(f_of_w):
    """Integral over S^2 of a function of the polar coordinate only."""
    return 2 * math.pi * quad(f_of_w, -1.0, 1.0, epsabs=0, epsrel=1e-12, limit=200)[0]


def _suite_directional():
    for k in (0.5, 5.0, 50.0):
        p = VmfParams(_e(3, 2), k)
        total = _s2_integral(lambda w: math.exp(vmf_log_density(p, np.array([math.sqrt(1 - w * w), 0.0, w]))))
        yield f"vMF normalized k={k}", abs(total - 1) < 1e-6
    rng = np.random.default_rng(0)
    for m in (3, 16, 128):
        mu = rng.standard_normal(m)
        mu /= np.linalg.norm(mu)
        x = rng.standard_normal((20, m))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        c = 7.0
        diff = nivmf_log_density(NivmfParams(mu, np.full(m, c)), x) - vmf_log_density(VmfParams(mu, c), x)
        yield f"isotropic reduction M={m}", bool(np.all(np.abs(diff - (m - 1) * math.log(c)) < 1e-8))
    for m, k in ((3, 5.0), (8, 20.0), (64, 50.0)):
        s = sample_vmf(VmfParams(_e(m), k), 100_000, seed=1)
        r = np.linalg.norm(s.mean(axis=0))
        yield f"sampler resultant ({m},{k})", abs(r / specfn.mean_resultant_length(m, k) - 1) < 1e-2
    yield "sampler determinism", np.array_equal(sample_vmf(VmfParams(_e(5), 3.0), 50, 7), sample_vmf(VmfParams(_e(5), 3.0), 50, 7))


def _suite_metrics():
    # aligned means: the integrands depend on the polar angle only
    kp, kz = 3.0, 8.0
    p, s = VmfParams(_e(3, 2), kp), decompose(kz * _e(3, 2))

    def lz(w):
        return float(specfn.log_c_exact(3, kz)) + kz * w

    def lp(w):
        return float(specfn.log_c_exact(3, kp)) + kp * w

    el = -math.log(_s2_integral(lambda w: math.exp(lz(w) + lp(w))))
    bh = -math.log(_s2_integral(lambda w: math.exp(0.5 * (lz(w) + lp(w)))))
    kl = _s2_integral(lambda w: math.exp(lz(w)) * (lz(w) - lp(w)))
    yield "EL-vMF quadrature", abs(d_el_vmf(p, s) - el) < 1e-6 * max(1, abs(el))
    yield "B-vMF quadrature", abs(d_b_vmf(p, s) - bh) < 1e-6 * max(1, abs(bh))
    yield "KL-vMF quadrature", abs(d_kl_vmf(p, s) - kl) < 1e-6 * max(1, abs(kl))
    yield "KL self zero", abs(d_kl_vmf(VmfParams(_e(4), 5.0), decompose(5.0 * _e(4)))) < 1e-9
    yield "B self zero", abs(d_b_vmf(VmfParams(_e(4), 5.0), decompose(5.0 * _e(4)))) < 1e-10


def _suite_losses():
    yield "softmax example", abs(nca_softmax_loss([1.0, 2.0, 3.0], 0, 1.0) - 0.40760596444) < 1e-10
    yield "single class", nca_softmax_loss([2.0], 0, 1.0) == 0.0
    rng = np.random.default_rng(2)
    for metric in Metric:
        bank = ProxyBank.for_metric(metric, 3, 3, kappa_init=4.0, seed=3)
        z = rng.normal(size=(2, 3)) * 3
        cfg = LossConfig(MetricKind(metric, mc_samples=4), temperature=0.7)
        g = loss_gradients(bank, z, [0, 2], cfg, seed=1)
        fd = ad.numerical_grad(lambda d: prob_nca_loss(bank.with_params({**bank.params(), "direction": d}), z, [0, 2], cfg, 1), bank.direction)
        yield f"gradient {metric.value}", ad.grad_rel_error([g.direction], fd, floor=1e-6) < 1e-4
    bank = ProxyBank.init(4, 5, kappa="none", seed=0)
    z = rng.normal(size=5)
    cfg = LossConfig(MetricKind(Metric.COS), temperature=0.3)
    pn = bank.mu
    logits = pn @ (z / np.linalg.norm(z)) / 0.3
    ref = float(np.log(np.sum(np.exp(logits))) - logits[1])
    yield "cosine equals ProxyNCA++", abs(prob_nca_loss(bank, z, 1, cfg) - ref) < 1e-12
    g = loss_gradients(bank, z, 1, cfg)
    yield "cosine kappa_z gradient zero", float(g.kappa_z) == 0.0


def _suite_synthdata():
    spec = SyntheticSpec(dim=6, classes=3, per_class=50, alpha=0.4, ambiguity_multiplier=0.3, feature_dim=8, seed=1)
    a, b = generate(spec), generate(spec)
    yield "determinism", np.array_equal(a.features, b.features)
    yield "stratified split", all(a.train[a.labels == c].sum() == 25 for c in range(3))
    yield "lift full rank", np.linalg.matrix_rank(a.lift) == 6


def _suite_evaluation():
    x = np.repeat(np.eye(4), 2, axis=0)
    y = np.repeat(np.arange(4), 2)
    yield "duplicate recall", recall_at_k(x, y, 1) == 1.0
    yield "perfect map", map_at_r(x, y, 10) == 1.0
    yield "cosine scale invariance", recall_at_k(3 * x + 0, y, 1) == recall_at_k(x, y, 1)


def _suite_trainer():
    ds = generate(SyntheticSpec(dim=4, classes=3, per_class=12, feature_dim=6, seed=2))
    cfg = TrainConfig(loss=LossConfig(MetricKind("el_nivmf", 3), temperature=1.0), epochs=2, batch_size=6, encoder="linear")
    a, b = train(ds, cfg), train(ds, cfg)
    yield "determinism", np.array_equal(np.array(a.log), np.array(b.log))
    yield "constraints", bool(np.all(a.bank.kappa > 0) and np.allclose(np.linalg.norm(a.bank.mu, axis=1), 1))
    z = TrainConfig(loss=cfg.loss, epochs=1, batch_size=6, encoder="linear", lr=0.0)
    st = train(ds, z)
    yield "zero lr", np.array_equal(st.bank.direction, train(ds, z).bank.direction)


SUITES = {
    "specfn": _suite_specfn,
    "directional": _suite_directional,
    "metrics": _suite_metrics,
    "losses": _suite_losses,
    "synthdata": _suite_synthdata,
    "evaluation": _suite_evaluation,
    "trainer": _suite_trainer,
}


def run_all(names=None):
    """``{suite: [(check, passed), ...]}``; an exception inside a check counts as a failure."""
    results = {}
    for name in names or SUITES:
        rows = []
        try:
            for check, ok in SUITES[name]():
                rows.append((check, bool(ok)))
        except Exception as exc:  # report and continue with the next suite
            rows.append((f"raised {type(exc).__name__}: {exc}", False))
        results[name] = rows
    return results
