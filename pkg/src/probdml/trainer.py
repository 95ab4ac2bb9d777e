"""Minibatch training of proxy banks and an optional linear encoder.

Optimizer is Adam with decoupled weight decay on the unconstrained storage.
Weight decay applies to the encoder and to proxy directions (which are
renormalized anyway); log-concentrations and the log-temperature are not
decayed, since shrinking them would pull every kappa towards 1.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from .evaluation import map_at_r, recall_at_k
from .losses import LossConfig, LossTrace, ProxyBank, loss_gradients, loss_terms
from .metrics import Metric, MetricKind
from .synthdata import LabeledDataset

ENCODERS = ("identity", "linear")


class NumericalError(RuntimeError):
    """Non-finite loss or gradient; ``snapshot`` holds the offending state."""

    def __init__(self, msg, snapshot):
        super().__init__(msg)
        self.snapshot = snapshot


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-2
    weight_decay: float = 4e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    encoder: str = "identity"
    encoder_init_norm: float = 10.0
    kappa_init: float = 50.0
    learn_temperature: bool = False
    eval_r: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if not self.kappa_init > 0:
            raise ValueError("kappa_init must be > 0")

    @classmethod
    def image_protocol(cls, **kw) -> "TrainConfig":
        """Optimizer values of the image-benchmark protocol (pretrained backbones assumed)."""
        kw.setdefault("lr", 1e-5)
        kw.setdefault("weight_decay", 4e-3)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"]["metric"] = {
            "tag": self.loss.metric.tag.value,
            "mc_samples": self.loss.metric.mc_samples,
            "normalizer_backend": self.loss.metric.normalizer_backend,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        lc = dict(d.pop("loss"))
        lc["metric"] = MetricKind(**lc["metric"])
        return cls(loss=LossConfig(**lc), **d)


@dataclass
class TrainState:
    bank: ProxyBank
    encoder: np.ndarray | None
    moments: dict
    step: int = 0
    log: list = field(default_factory=list)
    trace: LossTrace = field(default_factory=LossTrace)

    def params(self) -> dict:
        p = dict(self.bank.params())
        if self.encoder is not None:
            p["encoder"] = self.encoder
        return p

    def embed(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        return x if self.encoder is None else x @ self.encoder.T

    def snapshot(self) -> dict:
        return {k: np.array(v, copy=True) for k, v in self.params().items()} | {"step": self.step}


def init_state(dataset: LabeledDataset, cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    c = dataset.num_classes
    m = dataset.mu.shape[1]
    kind = cfg.loss.metric.tag.proxy_kappa
    bank = ProxyBank.init(
        c,
        m,
        kappa=kind,
        kappa_init=cfg.kappa_init,
        seed=rng,
        temperature=cfg.loss.temperature if cfg.learn_temperature else None,
    )
    encoder = None
    f = dataset.features.shape[1]
    if cfg.encoder == "linear":
        w = rng.standard_normal((m, f))
        # scale so embeddings of the training features have median norm encoder_init_norm
        med = np.median(np.linalg.norm(dataset.features @ w.T, axis=1))
        encoder = w * (cfg.encoder_init_norm / med)
    elif f != m:
        raise ValueError(f"identity encoder needs features of dim {m}, got {f}")
    st = TrainState(bank, encoder, {})
    st.moments = {k: (np.zeros_like(v, dtype=np.float64), np.zeros_like(v, dtype=np.float64)) for k, v in st.params().items()}
    return st


def _grads(state: TrainState, x, y, cfg: TrainConfig, seed):
    z = state.embed(x)
    g = loss_gradients(state.bank, z, y, cfg.loss, seed)
    out = dict(g.params)
    if state.encoder is not None:
        out["encoder"] = g.z.T @ np.asarray(x, dtype=np.float64)
    return g, out


DECAYED = ("direction", "encoder")


def adam_step(state: TrainState, grads: dict, cfg: TrainConfig) -> None:
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1**state.step, 1.0 - b2**state.step
    new = {}
    for k, p in state.params().items():
        m, v = state.moments[k]
        g = grads[k]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.moments[k] = (m, v)
        upd = (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        if k in DECAYED:
            upd = upd + cfg.weight_decay * p
        new[k] = p - cfg.lr * upd
    state.encoder = new.pop("encoder", None)
    state.bank = state.bank.with_params(new)


def step_seed(cfg: TrainConfig, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, 2, step])


def full_batch_loss(state: TrainState, dataset: LabeledDataset, cfg: TrainConfig, seed=0) -> float:
    return loss_terms(state.bank, state.embed(dataset.features), dataset.labels, cfg.loss, seed)[0]


def evaluate(state: TrainState, dataset: LabeledDataset, r: int = 1000, retrieval: str = "cosine") -> dict:
    z = state.embed(dataset.features)
    return {"recall1": recall_at_k(z, dataset.labels, 1, retrieval), "map": map_at_r(z, dataset.labels, r, retrieval)}


def mean_kappa(bank: ProxyBank) -> float:
    """Mean over proxies of the concentration norm (scalar kappa or |kappa vector|)."""
    k = bank.kappa
    if k is None:
        return float("nan")
    return float(np.mean(np.linalg.norm(k.reshape(bank.count, -1), axis=1)))


def train(dataset: LabeledDataset, cfg: TrainConfig, state: TrainState | None = None, trace: bool = False) -> TrainState:
    """Train on ``dataset.train`` rows, validate on the rest after every epoch.

    The per-epoch log holds ``(epoch, loss, recall1, map, mean_kappa)``, where
    loss is the mean minibatch loss over the epoch.
    """
    tr, val = dataset.train_split(), dataset.test_split()
    if len(val.labels) < 2:
        val = tr
    if np.any((dataset.labels < 0) | (dataset.labels >= dataset.num_classes)):
        raise ValueError("labels outside [0, C)")
    state = init_state(tr, cfg) if state is None else state
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    n = len(tr.labels)
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            g, grads = _grads(state, tr.features[idx], tr.labels[idx], cfg, step_seed(cfg, state.step))
            finite = np.isfinite(g.loss) and all(np.all(np.isfinite(v)) for v in grads.values())
            if not finite:
                snap = state.snapshot() | {"batch": idx.copy(), "epoch": epoch, "loss": g.loss}
                raise NumericalError(f"non-finite loss/gradient at step {state.step}", snap)
            if trace:
                state.trace.record(state.step, g, state.bank)
            adam_step(state, grads, cfg)
            losses.append(g.loss)
        ev = evaluate(state, val, cfg.eval_r)
        state.log.append((epoch, float(np.mean(losses)), ev["recall1"], ev["map"], mean_kappa(state.bank)))
    return state


LOG_FIELDS = ("epoch", "loss", "recall1", "map", "mean_kappa")


def write_log_csv(state: TrainState, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(LOG_FIELDS)
        for row in state.log:
            wr.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def checkpoint_dict(state: TrainState, cfg: TrainConfig) -> dict:
    proxies = []
    mu, kappa = state.bank.mu, state.bank.kappa
    for c in range(state.bank.count):
        entry = {"mu": mu[c].tolist()}
        if state.bank.kappa_kind == "scalar":
            entry["kappa"] = float(kappa[c])
        elif state.bank.kappa_kind == "vector":
            entry["kappa_diag"] = kappa[c].tolist()
        proxies.append(entry)
    out = {
        "config": cfg.to_dict(),
        "proxies": proxies,
        "encoder": None if state.encoder is None else state.encoder.tolist(),
        "step": state.step,
    }
    if state.bank.log_temperature is not None:
        out["temperature"] = math.exp(state.bank.log_temperature)
    return out


def save_checkpoint(state: TrainState, cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(state, cfg), fh, indent=1)


def load_checkpoint(path):
    """``(state, cfg)`` from a checkpoint file; optimizer moments restart at zero."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    cfg = TrainConfig.from_dict(d["config"])
    mu = np.array([p["mu"] for p in d["proxies"]])
    if "kappa_diag" in d["proxies"][0]:
        lk = np.log([p["kappa_diag"] for p in d["proxies"]])
    elif "kappa" in d["proxies"][0]:
        lk = np.log([p["kappa"] for p in d["proxies"]])
    else:
        lk = None
    lt = math.log(d["temperature"]) if "temperature" in d else None
    bank = ProxyBank(mu, lk, lt)
    enc = None if d["encoder"] is None else np.array(d["encoder"])
    st = TrainState(bank, enc, {})
    st.moments = {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in st.params().items()}
    st.step = int(d["step"])
    return st, cfg


def recover_anisotropy(state: TrainState, dataset: LabeledDataset) -> np.ndarray:
    """Per-class Spearman correlation between learned and generator per-dimension kappa.

    NaN marks classes whose generator kappa is constant (no ranking signal).
    Only meaningful when embedding axes coincide with generator axes
    (identity encoder).
    """
    if state.bank.kappa_kind != "vector":
        raise ValueError("anisotropy recovery needs per-dimension proxy concentrations")
    learned, true = state.bank.kappa, dataset.kappa
    out = np.full(state.bank.count, np.nan)
    for c in range(state.bank.count):
        if np.ptp(true[c]) == 0 or np.ptp(learned[c]) == 0:
            continue
        out[c] = spearmanr(learned[c], true[c]).statistic
    return out


def with_metric(cfg: TrainConfig, metric, **loss_kw) -> TrainConfig:
    """Copy of ``cfg`` with a different loss metric (backend and sample count kept)."""
    mk = MetricKind(Metric(metric), cfg.loss.metric.mc_samples, cfg.loss.metric.normalizer_backend)
    return replace(cfg, loss=replace(cfg.loss, metric=mk, **loss_kw))
