"""Labeled synthetic data on the sphere with axis-aligned anisotropic classes.

Each class draws clean points from nivMF(mu_c, K_c) and a fraction ``alpha`` of
"ambiguous" points from nivMF(mu_c, m K_c) with ``m < 1``, using the
change-of-variables sampler. Optionally the points are lifted to R^F by a
fixed random matrix for linear-encoder experiments.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .directional import NivmfParams, sample_nivmf_approx


@dataclass(frozen=True)
class SyntheticSpec:
    dim: int = 16
    classes: int = 8
    per_class: int = 200
    kappa_min: float = 5.0
    kappa_max: float = 100.0
    alpha: float = 0.0
    ambiguity_multiplier: float = 0.2
    feature_dim: int | None = None
    feature_noise: float = 0.0
    seed: int = 0
    directions: tuple | None = None  # optional explicit class means, C rows of length M

    def __post_init__(self):
        if self.dim < 2 or self.classes < 1:
            raise ValueError("need dim >= 2 and classes >= 1")
        if self.per_class < 2:
            raise ValueError("per_class must be >= 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not (0 < self.kappa_min <= self.kappa_max):
            raise ValueError("need 0 < kappa_min <= kappa_max")
        if not 0 < self.ambiguity_multiplier:
            raise ValueError("ambiguity_multiplier must be > 0")
        if self.feature_dim is not None and self.feature_dim < self.dim:
            raise ValueError("feature_dim must be >= dim")
        if self.directions is not None:
            d = np.asarray(self.directions, dtype=np.float64)
            if d.shape != (self.classes, self.dim):
                raise ValueError("directions must be (classes, dim)")
            object.__setattr__(self, "directions", tuple(map(tuple, d.tolist())))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        raw = json.loads(text)
        if raw.get("directions") is not None:
            raw["directions"] = tuple(map(tuple, raw["directions"]))
        return cls(**raw)


@dataclass
class LabeledDataset:
    features: np.ndarray  # (N, F), or (N, M) without a lift
    labels: np.ndarray
    ambiguous: np.ndarray
    train: np.ndarray  # bool mask of the stratified 50/50 split
    points: np.ndarray  # the sphere points before lifting
    mu: np.ndarray  # (C, M) true class means
    kappa: np.ndarray  # (C, M) true concentrations
    lift: np.ndarray | None = None  # (F, M)
    spec: SyntheticSpec | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.labels) != len(self.features):
            raise ValueError("label count does not match feature count")

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]

    def subset(self, mask) -> "LabeledDataset":
        mask = np.asarray(mask)
        return LabeledDataset(
            self.features[mask],
            self.labels[mask],
            self.ambiguous[mask],
            self.train[mask],
            self.points[mask],
            self.mu,
            self.kappa,
            self.lift,
            self.spec,
        )

    def train_split(self) -> "LabeledDataset":
        return self.subset(self.train)

    def test_split(self) -> "LabeledDataset":
        return self.subset(~self.train)


def _class_means(spec: SyntheticSpec, rng) -> np.ndarray:
    if spec.directions is not None:
        d = np.asarray(spec.directions, dtype=np.float64)
        return d / np.linalg.norm(d, axis=1, keepdims=True)
    g = rng.standard_normal((spec.dim, spec.classes))
    if spec.classes <= spec.dim:
        q, _ = np.linalg.qr(g)
        return q.T.copy()
    return (g / np.linalg.norm(g, axis=0)).T.copy()


def random_lift(feature_dim: int, dim: int, rng) -> np.ndarray:
    """Gaussian (F, M) matrix, redrawn until numerically full column rank."""
    while True:
        lift = rng.standard_normal((feature_dim, dim)) / np.sqrt(feature_dim)
        if np.linalg.matrix_rank(lift) == dim:
            return lift


def generate(spec: SyntheticSpec) -> LabeledDataset:
    root = np.random.SeedSequence(spec.seed)
    s_global, s_split, *s_classes = root.spawn(2 + spec.classes)
    rng = np.random.default_rng(s_global)
    mu = _class_means(spec, rng)
    lo, hi = np.log(spec.kappa_min), np.log(spec.kappa_max)
    kappa = np.exp(rng.uniform(lo, hi, (spec.classes, spec.dim)))
    lift = None if spec.feature_dim is None else random_lift(spec.feature_dim, spec.dim, rng)

    n_amb = int(round(spec.alpha * spec.per_class))
    pts, labels, amb = [], [], []
    for c in range(spec.classes):
        crng = np.random.default_rng(s_classes[c])
        n_clean = spec.per_class - n_amb
        if n_clean:
            pts.append(sample_nivmf_approx(NivmfParams(mu[c], kappa[c]), n_clean, crng))
        if n_amb:
            p_amb = NivmfParams(mu[c], spec.ambiguity_multiplier * kappa[c])
            pts.append(sample_nivmf_approx(p_amb, n_amb, crng))
        labels.append(np.full(spec.per_class, c))
        amb.append(np.r_[np.zeros(n_clean, bool), np.ones(n_amb, bool)])
    points = np.concatenate(pts)
    labels = np.concatenate(labels)
    ambiguous = np.concatenate(amb)

    srng = np.random.default_rng(s_split)
    train = np.zeros(len(labels), bool)
    for c in range(spec.classes):
        idx = np.flatnonzero(labels == c)
        train[srng.permutation(idx)[: len(idx) // 2]] = True

    feats = points if lift is None else points @ lift.T
    if spec.feature_noise > 0:
        feats = feats + spec.feature_noise * srng.standard_normal(feats.shape)
    return LabeledDataset(feats, labels, ambiguous, train, points, mu, kappa, lift, spec)


def save_dataset(ds: LabeledDataset, path) -> None:
    """CSV ``label,f0..`` plus ``<stem>.spec.json`` next to it."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["label"] + [f"f{i}" for i in range(ds.features.shape[1])])
        for lab, row in zip(ds.labels, ds.features):
            wr.writerow([int(lab)] + [repr(float(v)) for v in row])
    if ds.spec is not None:
        spec_path(path).write_text(ds.spec.to_json(), encoding="utf-8")


def spec_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".spec.json")


def load_features_csv(path):
    """Labels and features of a dataset CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1:]


def load_dataset(path) -> LabeledDataset:
    """Regenerate from the stored spec and check it against the CSV."""
    spec = SyntheticSpec.from_json(spec_path(path).read_text(encoding="utf-8"))
    ds = generate(spec)
    labels, feats = load_features_csv(path)
    if not (np.array_equal(labels, ds.labels) and np.array_equal(feats, ds.features)):
        raise ValueError("dataset file does not match its spec")
    return ds
