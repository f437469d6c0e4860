"""Multi-label evaluation: AUC, AP, F1, P@k / R@k, frequency-bucketed F1."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels

RARE_MAX = 50
SEMI_RARE_MAX = 1000
DEFAULT_KS = (8, 15)


class MetricsError(ValueError):
    pass


def _check(scores, gold):
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold)
    if scores.shape != gold.shape or scores.ndim != 2:
        raise MetricsError(f"shape mismatch: scores {scores.shape} vs gold {gold.shape}")
    return scores, (gold > 0).astype(np.float64)


def p_at_k(scores, gold, k: int) -> float:
    """Mean over documents of (# gold labels among the k top-scored) / k.

    Ties are broken in favour of the lower label index.
    """
    scores, gold = _check(scores, gold)
    if not 0 < k <= scores.shape[1]:
        raise MetricsError(f"k={k} outside 1..{scores.shape[1]}")
    return float(np.mean(_kernels.topk_hits(scores, gold, k) / k))


def r_at_k(scores, gold, k: int) -> float:
    """Recall over the k top-scored labels; documents without gold labels are skipped."""
    scores, gold = _check(scores, gold)
    if not 0 < k <= scores.shape[1]:
        raise MetricsError(f"k={k} outside 1..{scores.shape[1]}")
    n_gold = gold.sum(axis=1)
    keep = n_gold > 0
    if not keep.any():
        return 0.0
    hits = _kernels.topk_hits(scores[keep], gold[keep], k)
    return float(np.mean(hits / n_gold[keep]))


def p_at_k_unscored(pred, gold, k: int, seed: int = 0) -> tuple[float, float]:
    """P@k and R@k for binary predictions without scores.

    k of the predicted labels are drawn uniformly at random (fixed seed); when
    fewer than k are predicted all of them are used.
    """
    pred = np.asarray(pred) > 0
    gold = np.asarray(gold) > 0
    rng = np.random.default_rng(seed)
    precisions, recalls = [], []
    for p, g in zip(pred, gold):
        idx = np.flatnonzero(p)
        if len(idx) > k:
            idx = np.sort(rng.choice(idx, k, replace=False))
        hits = g[idx].sum()
        precisions.append(hits / k)
        if g.any():
            recalls.append(hits / g.sum())
    return float(np.mean(precisions)), float(np.mean(recalls)) if recalls else 0.0


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def confusion(pred, gold):
    pred = np.asarray(pred) > 0
    gold = np.asarray(gold) > 0
    tp = (pred & gold).sum(axis=0).astype(float)
    fp = (pred & ~gold).sum(axis=0).astype(float)
    fn = (~pred & gold).sum(axis=0).astype(float)
    return tp, fp, fn


def f1(scores, gold, mode: str = "micro", threshold: float = 0.5, binary: bool = False) -> float:
    """Micro (pooled counts) or macro (mean of per-label) F1.

    ``scores`` are thresholded at ``threshold`` unless ``binary`` is set, in
    which case they are taken as 0/1 predictions.
    """
    scores = np.asarray(scores)
    pred = scores > 0 if binary else scores >= threshold
    tp, fp, fn = confusion(pred, gold)
    if mode == "micro":
        return float(_f1(tp.sum(), fp.sum(), fn.sum()))
    if mode == "macro":
        return float(np.mean(_f1(tp, fp, fn))) if len(tp) else 0.0
    raise MetricsError(f"unknown mode {mode!r}")


def evaluable_labels(gold) -> np.ndarray:
    gold = np.asarray(gold) > 0
    pos = gold.sum(axis=0)
    return (pos > 0) & (pos < gold.shape[0])


def auc(scores, gold, mode: str = "macro") -> float:
    return _ranked(scores, gold, mode, _kernels.auc_columns)[0]


def ap(scores, gold, mode: str = "macro") -> float:
    return _ranked(scores, gold, mode, _kernels.ap_columns)[0]


def _ranked(scores, gold, mode, kernel):
    scores, gold = _check(scores, gold)
    if mode == "micro":
        s, g = scores.reshape(-1, 1), gold.reshape(-1, 1)
        if not evaluable_labels(g).all():
            raise MetricsError("no evaluable labels: pooled cells need a positive and a negative")
        return float(kernel(s, g)[0]), []
    if mode != "macro":
        raise MetricsError(f"unknown mode {mode!r}")
    ok = evaluable_labels(gold)
    if not ok.any():
        raise MetricsError("no evaluable labels: each needs at least one positive and one negative")
    vals = kernel(scores[:, ok], gold[:, ok])
    return float(np.mean(vals)), np.flatnonzero(~ok).tolist()


def frequency_bucket(count: int) -> str:
    if count <= RARE_MAX:
        return "rare"
    if count <= SEMI_RARE_MAX:
        return "semi_rare"
    return "common"


def bucketed_f1(scores, gold, train_counts: Sequence[int], threshold: float = 0.5,
                binary: bool = False) -> dict[str, float]:
    """Micro-F1 restricted to the labels of each frequency bucket; empty buckets are omitted."""
    scores = np.asarray(scores)
    gold = np.asarray(gold)
    buckets = np.array([frequency_bucket(int(c)) for c in train_counts])
    if len(buckets) != scores.shape[1]:
        raise MetricsError("train_counts must give one count per label")
    out = {}
    for name in ("rare", "semi_rare", "common"):
        cols = buckets == name
        if cols.any():
            out[name] = f1(scores[:, cols], gold[:, cols], "micro", threshold, binary)
    return out


def tagging_accuracy(predicted: Sequence, targets: Sequence) -> float:
    if len(targets) == 0:
        raise MetricsError("no spans")
    if len(predicted) != len(targets):
        raise MetricsError("predicted and target span counts differ")
    return float(np.mean(np.asarray(predicted) == np.asarray(targets)))


@dataclass
class MetricsReport:
    values: dict[str, float | None] = field(default_factory=dict)
    skipped_auc_labels: list[int] = field(default_factory=list)
    skipped_ap_labels: list[int] = field(default_factory=list)
    buckets: dict[str, list[int]] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def to_dict(self) -> dict:
        d = dict(self.values)
        d["skipped_auc_labels"] = self.skipped_auc_labels
        d["skipped_ap_labels"] = self.skipped_ap_labels
        if self.buckets:
            d["bucket_membership"] = self.buckets
        return d

    def write(self, path, **extra) -> None:
        d = self.to_dict()
        d.update(extra)
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")


def evaluate_scores(scores, gold, ks=DEFAULT_KS, threshold: float = 0.5, train_counts=None,
                    tagging: float | None = None) -> MetricsReport:
    """Full report for real-valued scores."""
    scores, goldf = _check(scores, gold)
    rep = MetricsReport()
    v = rep.values
    for mode in ("macro", "micro"):
        try:
            v[f"auc_{mode}"], skipped = _ranked(scores, goldf, mode, _kernels.auc_columns)
            if mode == "macro":
                rep.skipped_auc_labels = skipped
        except MetricsError:
            v[f"auc_{mode}"] = None
        try:
            v[f"ap_{mode}"], skipped = _ranked(scores, goldf, mode, _kernels.ap_columns)
            if mode == "macro":
                rep.skipped_ap_labels = skipped
        except MetricsError:
            v[f"ap_{mode}"] = None
        v[f"f1_{mode}"] = f1(scores, goldf, mode, threshold)
    for k in ks:
        if k <= scores.shape[1]:
            v[f"p@{k}"] = p_at_k(scores, goldf, k)
            v[f"r@{k}"] = r_at_k(scores, goldf, k)
    if train_counts is not None:
        _add_buckets(rep, bucketed_f1(scores, goldf, train_counts, threshold), train_counts)
    if tagging is not None:
        v["tagging_accuracy"] = tagging
    return rep


def evaluate_binary(pred, gold, ks=DEFAULT_KS, seed: int = 0, train_counts=None) -> MetricsReport:
    """Report for score-less predictions: AUC/AP are not applicable, P@k/R@k sample."""
    pred = np.asarray(pred)
    rep = MetricsReport()
    v = rep.values
    for mode in ("macro", "micro"):
        v[f"auc_{mode}"] = None
        v[f"ap_{mode}"] = None
        v[f"f1_{mode}"] = f1(pred, gold, mode, binary=True)
    for k in ks:
        if k <= pred.shape[1]:
            v[f"p@{k}"], v[f"r@{k}"] = p_at_k_unscored(pred, gold, k, seed)
    if train_counts is not None:
        _add_buckets(rep, bucketed_f1(pred, gold, train_counts, binary=True), train_counts)
    return rep


def _add_buckets(rep, per_bucket, train_counts):
    for name, val in per_bucket.items():
        rep.values[f"f1_{name}"] = val
    rep.buckets = {}
    for j, c in enumerate(train_counts):
        rep.buckets.setdefault(frequency_bucket(int(c)), []).append(j)
