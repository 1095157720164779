"""Alignment-based accuracy, state histograms and effective state counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "Alignment",
    "StateHistogram",
    "confusion_counts",
    "hungarian_align",
    "one_to_one_accuracy",
    "accuracy",
    "state_histogram",
    "effective_state_count",
]


@dataclass(frozen=True, eq=False)
class Alignment:
    """``mapping[p]`` is the gold state matched to predicted state ``p``.

    ``cost`` is the number of mismatched positions under the mapping and
    ``matched`` the number of agreeing ones.
    """

    mapping: np.ndarray
    cost: float
    matched: int

    def apply(self, labels):
        return self.mapping[np.asarray(labels, dtype=np.intp)]


@dataclass(frozen=True, eq=False)
class StateHistogram:
    counts: np.ndarray
    total: int


def _flatten(labels):
    if isinstance(labels, np.ndarray):
        return labels.astype(np.intp).reshape(-1)
    parts = [np.asarray(x, dtype=np.intp).reshape(-1) for x in labels]
    if not parts:
        return np.zeros(0, dtype=np.intp)
    return np.concatenate(parts)


def _paired(pred, gold, k):
    nested = not isinstance(pred, np.ndarray) and not isinstance(gold, np.ndarray)
    if nested:
        if len(pred) != len(gold):
            raise ValueError(f"{len(pred)} predicted vs {len(gold)} gold sequences")
        for n, (p, g) in enumerate(zip(pred, gold)):
            if np.shape(p) != np.shape(g):
                raise ValueError(f"sequence {n}: predicted and gold lengths differ")
    p = _flatten(pred)
    g = _flatten(gold)
    if p.shape != g.shape:
        raise ValueError("predicted and gold labels differ in shape")
    for name, arr in (("predicted", p), ("gold", g)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} labels outside [0, {k})")
    return p, g


def confusion_counts(pred, gold, k):
    """``C[p, g]`` = number of positions predicted ``p`` with gold ``g``."""
    p, g = _paired(pred, gold, k)
    c = np.zeros((k, k), dtype=np.int64)
    np.add.at(c, (p, g), 1)
    return c


def _best_matching(conf):
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return int(conf[rows, cols].sum())


def hungarian_align(pred, gold, k):
    """Optimal one-to-one mapping from predicted to gold states.

    ``pred`` and ``gold`` are label sequences (lists of arrays) or flat label
    arrays. Among all optimal mappings the lexicographically smallest one is
    returned: each predicted state, in order, takes the smallest gold state
    that still admits an optimal completion.
    """
    conf = confusion_counts(pred, gold, k)
    best = _best_matching(conf)
    mapping = np.full(k, -1, dtype=np.intp)
    free_rows = list(range(k))
    free_cols = list(range(k))
    fixed = 0
    for p in range(k):
        free_rows.remove(p)
        for g in free_cols:
            rest_cols = [c for c in free_cols if c != g]
            rest = _best_matching(conf[np.ix_(free_rows, rest_cols)]) if free_rows else 0
            if fixed + conf[p, g] + rest == best:
                mapping[p] = g
                fixed += conf[p, g]
                free_cols = rest_cols
                break
    total = int(conf.sum())
    return Alignment(mapping, float(total - best), best)


def one_to_one_accuracy(pred, gold, k):
    """Fraction of positions that agree after optimal one-to-one relabelling."""
    conf = confusion_counts(pred, gold, k)
    total = conf.sum()
    if total == 0:
        raise ValueError("no labels to score")
    return _best_matching(conf) / float(total)


def accuracy(pred, gold, k):
    """Plain per-position accuracy (no relabelling); for supervised models."""
    p, g = _paired(pred, gold, k)
    if p.size == 0:
        raise ValueError("no labels to score")
    return float(np.mean(p == g))


def state_histogram(labels, k):
    flat = _flatten(labels)
    if flat.size and (flat.min() < 0 or flat.max() >= k):
        raise ValueError(f"labels outside [0, {k})")
    counts = np.bincount(flat, minlength=k).astype(np.int64)
    return StateHistogram(counts, int(counts.sum()))


def effective_state_count(hist, sigma_f=50):
    """Number of states whose count is strictly greater than ``sigma_f``."""
    if sigma_f < 0:
        raise ValueError("sigma_f must be >= 0")
    counts = hist.counts if isinstance(hist, StateHistogram) else np.asarray(hist)
    return int(np.sum(counts > sigma_f))
