"""Per-column ranking kernels used by the metrics.

Two interchangeable backends: numba-compiled loops and vectorised numpy.
numba is used when importable unless ``CONCEPTAUG_NUMBA=0`` is set in the
environment; ``set_backend`` switches at runtime (benchmarks, tests).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None


# --- numpy -------------------------------------------------------------------

def _auc_np(s: np.ndarray, y: np.ndarray) -> float:
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    uniq, inv, cnt = np.unique(s, return_inverse=True, return_counts=True)
    start = np.cumsum(cnt) - cnt
    avg_rank = start + (cnt + 1) / 2.0
    ranks = avg_rank[inv]
    return float((ranks[y > 0].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _ap_np(s: np.ndarray, y: np.ndarray) -> float:
    order = np.argsort(-s, kind="mergesort")
    ss, yy = s[order], y[order]
    tps = np.cumsum(yy)
    fps = np.cumsum(1.0 - yy)
    last = np.r_[np.flatnonzero(np.diff(ss)), len(ss) - 1]
    tp, fp = tps[last], fps[last]
    precision = tp / (tp + fp)
    recall = tp / tps[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def auc_columns_numpy(scores, gold):
    return np.array([_auc_np(scores[:, j], gold[:, j]) for j in range(scores.shape[1])])


def ap_columns_numpy(scores, gold):
    return np.array([_ap_np(scores[:, j], gold[:, j]) for j in range(scores.shape[1])])


def topk_hits_numpy(scores, gold, k):
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(gold, top, axis=1).sum(axis=1)


# --- numba -------------------------------------------------------------------

if numba is not None:

    # the column kernels take label-major (transposed, contiguous) arrays

    @numba.njit(cache=True)
    def _auc_rows_numba(scores_t, gold_t):
        m, n = scores_t.shape
        out = np.empty(m)
        for j in range(m):
            s = scores_t[j]
            y = gold_t[j]
            order = np.argsort(s)  # ties are grouped below, so stability is irrelevant
            pos = 0.0
            rank_sum = 0.0
            i = 0
            while i < n:
                t = i
                while t + 1 < n and s[order[t + 1]] == s[order[i]]:
                    t += 1
                avg = (i + t) / 2.0 + 1.0
                for u in range(i, t + 1):
                    if y[order[u]] > 0:
                        rank_sum += avg
                        pos += 1.0
                i = t + 1
            neg = n - pos
            out[j] = (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
        return out

    @numba.njit(cache=True)
    def _ap_rows_numba(scores_t, gold_t):
        m, n = scores_t.shape
        out = np.empty(m)
        for j in range(m):
            s = scores_t[j]
            y = gold_t[j]
            order = np.argsort(-s)
            total = y.sum()
            tp = 0.0
            fp = 0.0
            prev_recall = 0.0
            ap = 0.0
            i = 0
            while i < n:
                t = i
                while t + 1 < n and s[order[t + 1]] == s[order[i]]:
                    t += 1
                for u in range(i, t + 1):
                    if y[order[u]] > 0:
                        tp += 1.0
                    else:
                        fp += 1.0
                recall = tp / total
                ap += (recall - prev_recall) * tp / (tp + fp)
                prev_recall = recall
                i = t + 1
            out[j] = ap
        return out

    @numba.njit(cache=True)
    def topk_hits_numba(scores, gold, k):
        # insertion into a sorted top-k buffer; a label displaces only on a
        # strictly higher score, so ties keep the lower index
        n, m = scores.shape
        out = np.zeros(n)
        top_s = np.empty(k)
        top_i = np.empty(k, dtype=np.int64)
        for i in range(n):
            filled = 0
            for j in range(m):
                v = scores[i, j]
                if filled == k and v <= top_s[k - 1]:
                    continue
                p = filled if filled < k else k - 1
                while p > 0 and top_s[p - 1] < v:
                    if p < k:
                        top_s[p] = top_s[p - 1]
                        top_i[p] = top_i[p - 1]
                    p -= 1
                top_s[p] = v
                top_i[p] = j
                if filled < k:
                    filled += 1
            for r in range(k):
                out[i] += gold[i, top_i[r]]
        return out

    def auc_columns_numba(scores, gold):
        return _auc_rows_numba(np.ascontiguousarray(scores.T), np.ascontiguousarray(gold.T))

    def ap_columns_numba(scores, gold):
        return _ap_rows_numba(np.ascontiguousarray(scores.T), np.ascontiguousarray(gold.T))


_BACKENDS = {"numpy": (auc_columns_numpy, ap_columns_numpy, topk_hits_numpy)}
if numba is not None:
    _BACKENDS["numba"] = (auc_columns_numba, ap_columns_numba, topk_hits_numba)

BACKEND = "numba" if numba is not None and os.environ.get("CONCEPTAUG_NUMBA", "1") != "0" else "numpy"


def set_backend(name: str) -> None:
    global BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_BACKENDS)}")
    BACKEND = name


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _prep(scores, gold):
    return np.ascontiguousarray(scores, dtype=np.float64), np.ascontiguousarray(gold, dtype=np.float64)


def auc_columns(scores, gold):
    return _BACKENDS[BACKEND][0](*_prep(scores, gold))


def ap_columns(scores, gold):
    return _BACKENDS[BACKEND][1](*_prep(scores, gold))


def topk_hits(scores, gold, k):
    return _BACKENDS[BACKEND][2](*_prep(scores, gold), k)
