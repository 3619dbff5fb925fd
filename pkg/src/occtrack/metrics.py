"""GOSPA and cardinality scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class GospaParams:
    c: float = 5.0
    p: float = 1.0
    alpha: float = 2.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("cutoff c must be positive")
        if not self.p >= 1:
            raise ValueError("order p must be at least 1")
        if not 0 < self.alpha <= 2:
            raise ValueError("alpha must lie in (0, 2]")


HIGHWAY_GOSPA = GospaParams(5.0, 1.0, 2.0)
BOX_GOSPA = GospaParams(1.0, 1.0, 2.0)


@dataclass(frozen=True)
class GospaResult:
    total: float
    localization: float      # sum of d^p over matched pairs
    missed: float            # c^p / alpha per missed truth
    false: float             # c^p / alpha per false estimate
    assignment: tuple = ()   # matched (truth index, estimate index) pairs


def _pairwise(X, Y, base) -> np.ndarray:
    if base is None or base == "euclidean":
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        Y = np.asarray(Y, dtype=float).reshape(len(Y), -1)
        return cdist(X, Y)
    return np.array([[float(base(x, y)) for y in Y] for x in X], dtype=float).reshape(len(X), len(Y))


def gospa(truth: Sequence, estimate: Sequence, base: Callable | str | None = None,
          params: GospaParams = HIGHWAY_GOSPA) -> GospaResult:
    """GOSPA distance with its localization / missed / false decomposition.

    With ``alpha = 2`` the optimal assignment only pairs elements closer
    than ``c``; every other element pays ``c^p / 2``. For ``alpha < 2`` the
    cut-off form ``min(d, c)^p`` plus ``c^p / alpha`` per unmatched element is used.
    """
    n, m = len(truth), len(estimate)
    c, p, a = params.c, params.p, params.alpha
    unit = c ** p / a
    if n == 0 or m == 0:
        missed, false = unit * n, unit * m
        return GospaResult((missed + false) ** (1.0 / p), 0.0, missed, false, ())
    D = np.minimum(_pairwise(truth, estimate, base), c) ** p
    rows, cols = linear_sum_assignment(D)
    pairs = []
    for i, j in zip(rows, cols):
        if a == 2 and D[i, j] >= c ** p:
            continue            # as cheap to leave both unmatched
        pairs.append((int(i), int(j)))
    # exactly rounded sum, so the result does not depend on pairing order
    loc = math.fsum(D[i, j] for i, j in pairs)
    k = len(pairs)
    missed = unit * (n - k)
    false = unit * (m - k)
    if a != 2:
        # the cut pairs are matched at cost c^p, not counted as missed/false
        missed = unit * (n - len(rows))
        false = unit * (m - len(rows))
    total = math.fsum((loc, missed, false)) ** (1.0 / p)
    return GospaResult(float(total), float(loc), float(missed), float(false), tuple(pairs))


def box_iou(a, b) -> float:
    """Intersection over union of boxes ``(left, top, width, height)``."""
    l1, t1, w1, h1 = a
    l2, t2, w2, h2 = b
    iw = min(l1 + w1, l2 + w2) - max(l1, l2)
    ih = min(t1 + h1, t2 + h2) - max(t1, t2)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(inter / (w1 * h1 + w2 * h2 - inter))


def box_distance(a, b) -> float:
    """``1 - IoU``; any intersection counts as a possible match under ``c = 1``."""
    return 1.0 - box_iou(a, b)


def cardinality_ratio(truth_trace: Sequence, estimate_trace: Sequence) -> float:
    """``(sum |estimate_t| - sum |truth_t|) / sum |truth_t|``; negative means under-counting.

    Traces hold per-step counts or per-step collections.
    """
    if len(truth_trace) != len(estimate_trace):
        raise ValueError("traces must have equal length")
    count = lambda t: t if isinstance(t, (int, np.integer)) else len(t)  # noqa: E731
    n_truth = sum(count(t) for t in truth_trace)
    n_est = sum(count(t) for t in estimate_trace)
    if n_truth == 0:
        raise ZeroDivisionError("cardinality ratio undefined for an empty truth trace")
    return (n_est - n_truth) / n_truth
