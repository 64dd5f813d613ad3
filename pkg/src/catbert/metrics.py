"""Detection metrics: ROC/AUC, TPR at fixed FPR, group breakdowns, and
inference timing."""

from __future__ import annotations

import logging
import math
import time

import numpy as np

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def _check_two_class(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"need both classes, got {n_pos} positive / {n_neg} negative")
    return n_pos, n_neg


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties averaged."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    s = scores[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counted 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError(f"scores/labels length mismatch: {scores.shape} vs {labels.shape}")
    n_pos, n_neg = _check_two_class(labels)
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) points from (0,0) to (1,1), thresholds
    descending; classification rule is score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_two_class(labels)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    for i in range(len(s)):
        tp += int(y[i] == 1)
        fp += int(y[i] == 0)
        if i + 1 < len(s) and s[i + 1] == s[i]:
            continue  # emit one point per distinct threshold
        points.append((fp / n_neg, tp / n_pos, float(s[i])))
    return points


def tpr_at_fpr(scores, labels, fprs) -> list[float]:
    """For each target, the TPR at the threshold whose achievable FPR is the
    largest one still <= target (no interpolation)."""
    curve = roc_curve(scores, labels)
    best_tpr: dict[float, float] = {}
    for fpr, tpr, _ in curve:
        if tpr > best_tpr.get(fpr, -1.0):
            best_tpr[fpr] = tpr
    achievable = sorted(best_tpr)
    out = []
    for target in fprs:
        if not 0.0 <= target <= 1.0:
            raise MetricError(f"FPR target must be in [0,1], got {target}")
        feasible = [f for f in achievable if f <= target]
        out.append(best_tpr[max(feasible)] if feasible else 0.0)
    return out


DEFAULT_FPRS = (1e-4, 1e-3, 1e-2, 1e-1)
_KNOWN_GROUPS = ("bec", "english", "non_english")


def group_metrics(scores, labels, groups, fprs=DEFAULT_FPRS) -> dict:
    """Per-group AUC and TPR@FPR. Each group's positives are scored against
    the shared global negative pool; unknown tags fall under "other" and
    groups without positives are skipped with a warning."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_two_class(labels)
    neg = labels == 0
    tags = [g if (g in _KNOWN_GROUPS or g is None) else "other" for g in groups]
    out: dict[str, dict] = {}
    for tag in sorted({t for t in tags if t is not None} | {"all"}):
        if tag == "all":
            sel = np.ones(len(labels), dtype=bool)
        else:
            pos_sel = np.array([t == tag for t in tags]) & (labels == 1)
            if not pos_sel.any():
                log.warning("group %r has no positive samples; skipped", tag)
                continue
            sel = pos_sel | neg
        out[tag] = {
            "auc": roc_auc(scores[sel], labels[sel]),
            "tpr_at_fpr": {str(f): t for f, t in
                           zip(fprs, tpr_at_fpr(scores[sel], labels[sel], fprs))},
            "n_pos": int((labels[sel] == 1).sum()),
            "n_neg": int(neg.sum()),
        }
    return out


def mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def spearman(a, b) -> float:
    """Rank correlation (ties averaged). Degenerate constant inputs give 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError(f"need equal-length 1-D inputs, got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise MetricError("need at least two points")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float((ra * ra).sum()) * float((rb * rb).sum()))
    if denom == 0.0:
        return 0.0
    return float((ra * rb).sum() / denom)


def time_inference(model, batch_sizes=(1,), repetitions=30, warmup=3,
                   seq_len=128, seed=0) -> dict:
    """Wall-clock forward latency per batch size (mean/p50/p95 ms over
    ``repetitions``, after ``warmup`` discarded runs)."""
    from .model import count_params, forward_probs

    if warmup < 3:
        raise ValueError(f"need >= 3 warmup iterations, got {warmup}")
    rng = np.random.default_rng(seed)
    cfg = model.config
    report: dict = {"params": count_params(cfg).__dict__, "seq_len": seq_len,
                    "timings": {}}
    for bs in batch_sizes:
        ids = rng.integers(0, cfg.vocab_size, size=(bs, seq_len))
        mask = np.ones((bs, seq_len), dtype=np.int64)
        ctx = rng.random((bs, cfg.context_dim)).astype(np.float32) if cfg.context_dim else None
        for _ in range(warmup):
            forward_probs(model, ids, mask, ctx)
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            forward_probs(model, ids, mask, ctx)
            samples.append((time.perf_counter() - t0) * 1000.0)
        arr = np.asarray(samples)
        report["timings"][str(bs)] = {
            "mean_ms": float(arr.mean()),
            "p50_ms": float(np.percentile(arr, 50)),
            "p95_ms": float(np.percentile(arr, 95)),
            "repetitions": repetitions,
        }
    return report
