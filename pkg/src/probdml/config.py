"""Flat ``key = value`` run configuration with typed keys and a stable hash."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .losses import LossConfig
from .metrics import MetricKind
from .synthdata import SyntheticSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type, default)
SCHEMA = {
    # data
    "dim": (int, 16),
    "classes": (int, 8),
    "per_class": (int, 200),
    "kappa_min": (float, 2.0),
    "kappa_max": (float, 80.0),
    "alpha": (float, 0.2),
    "ambiguity_multiplier": (float, 0.2),
    "feature_dim": (int, 32),  # 0 disables the lift
    "feature_noise": (float, 0.0),
    # loss
    "metric": (str, "el_nivmf"),
    "temperature": (float, 0.3),
    "omega": (float, 0.0),
    "mc_samples": (int, 5),
    "normalizer_backend": (str, "exact"),
    "temperature_placement": (str, "inside"),
    "include_log_n": (_bool, True),
    "sampler_grad": (str, "auto"),
    # training
    "epochs": (int, 60),
    "batch_size": (int, 32),
    "lr": (float, 3e-2),
    "weight_decay": (float, 4e-3),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "encoder": (str, "linear"),
    "encoder_init_norm": (float, 30.0),
    "kappa_init": (float, 10.0),
    "learn_temperature": (_bool, False),
    # evaluation
    "eval_k": (str, "1,2,4,8"),
    "eval_r": (int, 1000),
    "hist_bins": (int, 20),
    # run
    "seed": (int, 0),
    "out": (str, "runs"),
}

# keys that do not change any artifact's content
NON_HASHED = ("out",)


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {k: d for k, (_, d) in SCHEMA.items()}
        if values:
            self.update(values)

    def update(self, values: dict) -> None:
        for k, v in values.items():
            key = k.replace("-", "_")
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key: {k}")
            typ = SCHEMA[key][0]
            try:
                self.values[key] = typ(v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls(parse_kv(Path(path).read_text(encoding="utf-8")))

    def to_text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in SCHEMA)

    def hashed_items(self) -> dict:
        return {k: self.values[k] for k in SCHEMA if k not in NON_HASHED}

    def hash(self) -> str:
        blob = json.dumps(self.hashed_items(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def synthetic_spec(self) -> SyntheticSpec:
        v = self.values
        try:
            return SyntheticSpec(
                dim=v["dim"],
                classes=v["classes"],
                per_class=v["per_class"],
                kappa_min=v["kappa_min"],
                kappa_max=v["kappa_max"],
                alpha=v["alpha"],
                ambiguity_multiplier=v["ambiguity_multiplier"],
                feature_dim=v["feature_dim"] or None,
                feature_noise=v["feature_noise"],
                seed=v["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        v = self.values
        try:
            loss = LossConfig(
                MetricKind(v["metric"], v["mc_samples"], v["normalizer_backend"]),
                temperature=v["temperature"],
                omega=v["omega"],
                temperature_placement=v["temperature_placement"],
                include_log_n=v["include_log_n"],
                sampler_grad=v["sampler_grad"],
            )
            return TrainConfig(
                loss=loss,
                epochs=v["epochs"],
                batch_size=v["batch_size"],
                lr=v["lr"],
                weight_decay=v["weight_decay"],
                beta1=v["beta1"],
                beta2=v["beta2"],
                adam_eps=v["adam_eps"],
                encoder=v["encoder"],
                encoder_init_norm=v["encoder_init_norm"],
                kappa_init=v["kappa_init"],
                learn_temperature=v["learn_temperature"],
                eval_r=v["eval_r"],
                seed=v["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def eval_ks(self) -> tuple:
        try:
            return tuple(int(x) for x in self.values["eval_k"].split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"bad value for eval_k: {self.values['eval_k']!r}") from None


def parse_kv(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out
