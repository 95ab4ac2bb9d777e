"""Retrieval metrics and embedding-structure diagnostics.

Exact search only. Candidates are ranked by similarity with ties broken by
candidate index (a stable sort), and each query is removed from its own
candidate list.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import mannwhitneyu

RETRIEVALS = ("cosine", "euclidean")


def _check(emb, labels, k=None):
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    if emb.ndim != 2 or emb.shape[0] != labels.shape[0]:
        raise ValueError("embeddings must be (N, M) with one label per row")
    if emb.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if k is not None and not 1 <= k < emb.shape[0]:
        raise ValueError(f"K must be in [1, N-1], got {k}")
    return emb, labels


def ranking(emb, retrieval: str = "cosine") -> np.ndarray:
    """(N, N-1) candidate indices per query, best first, self excluded."""
    if retrieval not in RETRIEVALS:
        raise ValueError(f"retrieval must be one of {RETRIEVALS}")
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[0]
    if retrieval == "cosine":
        u = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        score = -(u @ u.T)
    else:
        sq = np.sum(emb * emb, axis=1)
        score = sq[:, None] + sq[None, :] - 2.0 * emb @ emb.T
    np.fill_diagonal(score, np.inf)
    order = np.argsort(score, axis=1, kind="stable")
    return order[:, : n - 1]


def recall_at_k(emb, labels, k: int = 1, retrieval: str = "cosine") -> float:
    emb, labels = _check(emb, labels, k)
    top = ranking(emb, retrieval)[:, :k]
    hit = np.any(labels[top] == labels[:, None], axis=1)
    return float(np.mean(hit))


def map_at_r(emb, labels, r: int = 1000, retrieval: str = "cosine") -> float:
    """Mean average precision truncated at R, with R capped at each query's relevant count.

    ``AP = (1/R_q) sum_{i<=R_q} P@i * rel_i`` where ``R_q = min(R, #relevant)``.
    Queries without any relevant candidate contribute 0.
    """
    emb, labels = _check(emb, labels)
    if r < 1:
        raise ValueError("R must be >= 1")
    order = ranking(emb, retrieval)
    rel = labels[order] == labels[:, None]
    n_rel = rel.sum(axis=1)
    aps = np.zeros(emb.shape[0])
    for q in range(emb.shape[0]):
        rq = min(r, int(n_rel[q]))
        if rq == 0:
            continue
        hits = rel[q, :rq]
        prec = np.cumsum(hits) / np.arange(1, rq + 1)
        aps[q] = np.sum(prec * hits) / rq
    return float(aps.mean())


@dataclass
class RetrievalReport:
    recall_at: dict
    map_at_r: float
    r: int
    retrieval: str

    def to_json(self) -> str:
        d = asdict(self)
        d["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        return json.dumps(d, indent=2, sort_keys=True)


def retrieval_report(emb, labels, ks=(1, 2, 4, 8), r: int = 1000, retrieval: str = "cosine") -> RetrievalReport:
    n = len(labels)
    ks = [k for k in ks if k < n]
    rec = {int(k): recall_at_k(emb, labels, k, retrieval) for k in ks}
    return RetrievalReport(rec, map_at_r(emb, labels, r, retrieval), int(r), retrieval)


def compare_retrieval(emb, labels, k: int = 1) -> dict:
    """Recall@K under cosine and euclidean retrieval."""
    return {m: recall_at_k(emb, labels, k, m) for m in RETRIEVALS}


def feature_diversity(emb) -> float:
    """Normalized entropy of the singular-value distribution of the centered embeddings.

    1 for a flat spectrum, 0 when a single direction (or nothing) carries all variance.
    """
    x = np.asarray(emb, dtype=np.float64)
    x = x - x.mean(axis=0)
    s = np.linalg.svd(x, compute_uv=False)
    total = s.sum()
    if s.size < 2 or total <= 1e-12 * max(1.0, np.abs(x).max()):
        return 0.0
    p = s / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum() / np.log(s.size))


def cluster_diversity(emb, labels) -> float:
    """Mean over classes of the variance of pairwise intraclass cosine distances."""
    x = np.asarray(emb, dtype=np.float64)
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    labels = np.asarray(labels)
    vals = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            warnings.warn(f"class {c} has a single sample; skipped", stacklevel=2)
            continue
        d = 1.0 - u[idx] @ u[idx].T
        iu = np.triu_indices(idx.size, 1)
        vals.append(np.var(d[iu]))
    return float(np.mean(vals)) if vals else 0.0


def diversity_metrics(emb, labels):
    return feature_diversity(emb), cluster_diversity(emb, labels)


@dataclass
class NormHistogram:
    edges: np.ndarray
    counts: dict  # group -> counts array
    mean_norm: dict
    p_value: float | None  # one-sided rank-sum, first group smaller than second

    def rows(self):
        for g, cnt in self.counts.items():
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], cnt):
                yield g, float(lo), float(hi), int(c)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["group", "lo", "hi", "count"])
            for g, lo, hi, c in self.rows():
                wr.writerow([g, repr(lo), repr(hi), c])


def norm_histogram(raw_embeddings, groups, bins: int = 20, order=None) -> NormHistogram:
    """Histograms of embedding norms per group on shared edges.

    ``groups`` labels each row (e.g. ``"ambiguous"`` / ``"clean"``). With
    exactly two groups (taken in ``order`` if given) a one-sided Mann-Whitney
    test of "first group has smaller norms" is reported.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    norms = np.linalg.norm(np.asarray(raw_embeddings, dtype=np.float64), axis=1)
    groups = np.asarray(groups)
    names = list(order) if order is not None else [g.item() if hasattr(g, "item") else g for g in np.unique(groups)]
    if norms.size:
        lo, hi = float(norms.min()), float(norms.max())
        if hi <= lo:
            hi = lo + 1.0
    else:
        lo, hi = 0.0, 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts, means = {}, {}
    for g in names:
        sel = norms[groups == g]
        counts[g] = np.histogram(sel, bins=edges)[0]
        means[g] = float(sel.mean()) if sel.size else float("nan")
    p = None
    if len(names) == 2:
        a, b = norms[groups == names[0]], norms[groups == names[1]]
        if a.size and b.size:
            p = float(mannwhitneyu(a, b, alternative="less").pvalue)
    return NormHistogram(edges, counts, means, p)


def write_diversity_csv(path, rows) -> None:
    """Rows of ``(name, feature_diversity, cluster_diversity)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["name", "feature_diversity", "cluster_diversity"])
        for name, fd, cd in rows:
            wr.writerow([name, repr(float(fd)), repr(float(cd))])
