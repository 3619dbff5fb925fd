"""Occlusion strategies.

Every strategy is bound to one update (prior, measurement set, model) and
then answers two questions per prior component: the detection factor for an
*occludable* object and its miss function. Components with occludability
``o < 1`` blend these with the unoccluded terms, ``o * occl + (1 - o) * plain``.
``None`` as the component index means the undetected Poisson intensity.

Object-wise strategies change the detection probability; the
measurement-wise strategy keeps detection as is and enlarges the miss term by
the chance that the object's measurement was hidden behind the visible ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import kernels
from .densities import (
    Discrete,
    Gaussian,
    Mixture,
    Particles,
    _evaluate,
    _is_vectorized,
    mean,
    vectorized,
)

DEFAULT_BETA = 4.0
DEFAULT_OVERLAP_THRESHOLD = 0.5


# -- function algebra ----------------------------------------------------------


def _scale(c: float, f):
    """``x -> c * f(x)`` (or the constant product)."""
    if not callable(f):
        return c * float(f)
    if _is_vectorized(f):
        return vectorized(lambda X: c * np.asarray(f(X), dtype=float))
    return lambda x: c * f(x)


def _product(f, g):
    if not callable(f) and not callable(g):
        return float(f) * float(g)
    if not callable(f):
        return _scale(float(f), g)
    if not callable(g):
        c = float(g)
        if _is_vectorized(f):
            return vectorized(lambda X: np.asarray(f(X), dtype=float) * c)
        return lambda x: f(x) * c
    if _is_vectorized(f) and _is_vectorized(g):
        return vectorized(lambda X: np.asarray(f(X), dtype=float) * np.asarray(g(X), dtype=float))
    return lambda x: f(x) * g(x)


def _one_minus(f):
    if not callable(f):
        return 1.0 - float(f)
    if _is_vectorized(f):
        return vectorized(lambda X: 1.0 - np.asarray(f(X), dtype=float))
    return lambda x: 1.0 - f(x)


def _blend(o: float, f, g):
    """``o * f + (1 - o) * g``; returns ``f`` untouched when ``o == 1``."""
    if o == 1.0:
        return f
    if o == 0.0:
        return g
    if not callable(f) and not callable(g):
        return o * float(f) + (1.0 - o) * float(g)
    fv = f if callable(f) else (lambda x, c=float(f): c)
    gv = g if callable(g) else (lambda x, c=float(g): c)
    if (_is_vectorized(f) or not callable(f)) and (_is_vectorized(g) or not callable(g)):
        return vectorized(lambda X: o * _evaluate(f, X) + (1.0 - o) * _evaluate(g, X))
    return lambda x: o * fv(x) + (1.0 - o) * gv(x)


# -- bound strategies ----------------------------------------------------------


class BoundOcclusion:
    """Per-update occlusion terms. The base class is "no occlusion"."""

    occludes = False
    log_clutter_factor = 0.0

    def __init__(self, model):
        self.model = model

    def plain_detection(self):
        return self.model.detection

    def plain_miss(self):
        return _one_minus(self.model.detection)

    def detection(self, i):
        return self.plain_detection()

    def miss(self, i):
        return _one_minus(self.detection(i))

    def effective(self, i, occludability: float):
        """Detection factor and miss function after blending by occludability."""
        if not self.occludes:
            return self.plain_detection(), self.plain_miss()
        det = _blend(occludability, self.detection(i), self.plain_detection())
        miss = _blend(occludability, self.miss(i), self.plain_miss())
        return det, miss


class NoOcclusion:
    def bind(self, prior, Z, model) -> BoundOcclusion:
        return BoundOcclusion(model)


def static_owo_detection(P_D, visibility):
    """Detection under static object-wise occlusion: ``x -> P_D(x) * v(x)``."""
    if not callable(P_D):
        c = float(P_D)
        if not callable(visibility):
            return c * float(visibility)
        if _is_vectorized(visibility):
            return vectorized(lambda X: c * np.asarray(visibility(X), dtype=float))
        return lambda x: c * visibility(x)
    return _product(P_D, visibility)


class _BoundStatic(BoundOcclusion):
    occludes = True

    def __init__(self, model, visibility):
        super().__init__(model)
        self._det = static_owo_detection(model.detection, visibility)

    def detection(self, i):
        return self._det


@dataclass
class ObjectWiseStatic:
    """Occlusion probability depends on the object's own state only."""

    visibility: Any

    def bind(self, prior, Z, model):
        return _BoundStatic(model, self.visibility)


# -- expected-value object-wise occlusion --------------------------------------


def combine_softmax(q: Sequence[float], beta: float = DEFAULT_BETA) -> float:
    """Softmax-weighted sum of pairwise occlusion probabilities.

    Each term is weighted by ``exp(beta * (q_k - max q))`` so the strongest
    occluder counts fully and weaker ones are discounted; a single occluder
    returns its own probability. Clamped to [0, 1].
    """
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        return 0.0
    w = np.exp(beta * (q - q.max()))
    return float(min(max(np.dot(w, q), 0.0), 1.0))


def combine_product(q: Sequence[float]) -> float:
    """Independent-occluder combination ``1 - prod(1 - q_k)``."""
    q = np.asarray(q, dtype=float)
    return float(1.0 - np.prod(1.0 - q))


COMBINERS = {"softmax": combine_softmax, "product": lambda q, beta=None: combine_product(q)}


@dataclass
class AngularInterval:
    """Pairwise kernel for a point sensor viewing objects in depth layers.

    ``span_of(state) -> (depth, lo, hi)`` gives the layer and the angular
    interval the object subtends. The kernel is the fraction of the target's
    interval covered by an occluder in a strictly nearer layer.
    """

    span_of: Callable

    def __call__(self, target, occluder) -> float:
        dt, tlo, thi = self.span_of(target)
        do, olo, ohi = self.span_of(occluder)
        if not do < dt or thi <= tlo:
            return 0.0
        overlap = min(thi, ohi) - max(tlo, olo)
        return float(min(max(overlap / (thi - tlo), 0.0), 1.0))


def box_overlap_fraction(target, other) -> float:
    """Intersection area over the target's area, boxes as (left, top, w, h)."""
    l1, t1, w1, h1 = target
    l2, t2, w2, h2 = other
    area = w1 * h1
    if area <= 0:
        return 0.0
    iw = min(l1 + w1, l2 + w2) - max(l1, l2)
    ih = min(t1 + h1, t2 + h2) - max(t1, t2)
    if iw <= 0 or ih <= 0:
        return 0.0
    return float(iw * ih / area)


@dataclass
class BoxOverlap:
    """Image-plane kernel: overlap ratio, only from boxes whose bottom is lower.

    ``box_of(state) -> (left, top, w, h)``; ``g(o) = min(1, o / threshold)``.
    """

    box_of: Callable = lambda s: tuple(s[:4])
    threshold: float = DEFAULT_OVERLAP_THRESHOLD

    def __call__(self, target, occluder) -> float:
        tb = self.box_of(target)
        ob = self.box_of(occluder)
        if not ob[1] + ob[3] > tb[1] + tb[3]:
            return 0.0
        return min(1.0, box_overlap_fraction(tb, ob) / self.threshold)


def expval_softmax_visibility(target, occluders, kernel, beta: float = DEFAULT_BETA,
                              combiner: str = "softmax") -> float:
    """Visibility of ``target`` from the mean states of possible occluders.

    ``target`` and each occluder are :class:`~occtrack.densities.Bernoulli`.
    Pairwise probabilities are ``r_k * kernel(E[target], E[occluder_k])``.
    """
    t = mean(target.density)
    q = [o.existence * kernel(t, mean(o.density)) for o in occluders]
    q = [v for v in q if v > 0]
    return 1.0 - COMBINERS[combiner](q, beta)


class _BoundExpval(BoundOcclusion):
    occludes = True

    def __init__(self, model, visibilities):
        super().__init__(model)
        self.visibilities = visibilities

    def detection(self, i):
        if i is None:
            return self.model.detection
        return static_owo_detection(self.model.detection, self.visibilities[i])


@dataclass
class ObjectWiseExpval:
    """Static object-wise occlusion approximated from occluders' mean states."""

    kernel: Callable
    beta: float = DEFAULT_BETA
    combiner: str = "softmax"

    def visibilities(self, prior) -> list[float]:
        comps = list(prior)
        out = []
        for i, target in enumerate(comps):
            others = comps[:i] + comps[i + 1:]
            out.append(expval_softmax_visibility(target, others, self.kernel, self.beta, self.combiner))
        return out

    def bind(self, prior, Z, model):
        return _BoundExpval(model, self.visibilities(prior))


# -- grid object-wise occlusion ------------------------------------------------


def _samples(density) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(density, Particles):
        return density.points, density.weights
    if isinstance(density, Gaussian):
        return density.sigma_points()
    if isinstance(density, Discrete):
        return np.array(density.support, dtype=float).reshape(len(density.support), -1), density.masses
    if isinstance(density, Mixture):
        pts, ws = zip(*[(p, w * cw) for cw, c in density.items() for p, w in [_samples(c)]])
        return np.vstack(pts), np.concatenate(ws)
    raise TypeError(f"unsupported density {type(density).__name__}")


@dataclass
class VisibilityGrid:
    """Partition of the field of view into cells, with per-cell visibility.

    ``edges`` are the C+1 cell boundaries; ``depth`` is the layer whose
    visibility the grid describes (only strictly nearer occluders count).
    """

    edges: np.ndarray
    visibility: np.ndarray
    depth: float = math.inf

    @classmethod
    def uniform(cls, lo: float, hi: float, ncells: int, depth: float = math.inf) -> "VisibilityGrid":
        return cls(np.linspace(lo, hi, ncells + 1), np.ones(ncells), depth)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.visibility = np.asarray(self.visibility, dtype=float)
        if self.visibility.shape != (self.edges.size - 1,):
            raise ValueError("one visibility value per cell required")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("cell edges must be strictly increasing")

    @property
    def ncells(self) -> int:
        return self.visibility.size

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def cell_range(self, lo, hi):
        """Index range of cells whose centers fall in ``[lo, hi]`` (vectorized)."""
        c = self.centers
        a = np.searchsorted(c, np.asarray(lo, dtype=float), side="left")
        b = np.searchsorted(c, np.asarray(hi, dtype=float), side="right") - 1
        return np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)

    def object_visibility(self, lo, hi, fill: float = 1.0):
        """Max cell visibility over the cells an object spans (vectorized)."""
        a, b = self.cell_range(np.atleast_1d(lo), np.atleast_1d(hi))
        return kernels.range_max(self.visibility, a, b, fill)


def grid_visibility_update(grid: VisibilityGrid, occluder_estimates, footprint) -> VisibilityGrid:
    """Multiply in ``1 - r * P(occluder covers cell and is nearer)`` per occluder.

    ``occluder_estimates`` is a list of ``(density, existence)``;
    ``footprint(points) -> (depth, lo, hi)`` arrays for a batch of states.
    """
    vis = grid.visibility.copy()
    for density, r in occluder_estimates:
        if r <= 0:
            continue
        pts, w = _samples(density)
        depth, lo, hi = footprint(pts)
        nearer = np.asarray(depth) < grid.depth
        if not nearer.any():
            continue
        a, b = grid.cell_range(np.asarray(lo)[nearer], np.asarray(hi)[nearer])
        cover = kernels.interval_cover(a, b, np.ascontiguousarray(w[nearer], dtype=float), grid.ncells)
        vis *= 1.0 - r * np.clip(cover, 0.0, 1.0)
    return VisibilityGrid(grid.edges, np.clip(vis, 0.0, 1.0), grid.depth)


class _BoundGrid(BoundOcclusion):
    occludes = True

    def __init__(self, model, strategy, prior):
        super().__init__(model)
        self.strategy = strategy
        self.occluders = [(c.density, c.existence) for c in prior]
        self._grids = {}

    def grid_for(self, depth):
        if depth not in self._grids:
            base = VisibilityGrid(self.strategy.edges, np.ones(len(self.strategy.edges) - 1), depth)
            self._grids[depth] = grid_visibility_update(base, self.occluders, self.strategy.footprint)
        return self._grids[depth]

    def visibility(self, X):
        X = np.atleast_2d(X)
        depth, lo, hi = self.strategy.footprint(X)
        depth = np.asarray(depth, dtype=float)
        out = np.ones(X.shape[0])
        for d in np.unique(depth):
            sel = depth == d
            out[sel] = self.grid_for(float(d)).object_visibility(np.asarray(lo)[sel], np.asarray(hi)[sel])
        return out

    def detection(self, i):
        vis = vectorized(self.visibility)
        return static_owo_detection(self.model.detection, vis)


@dataclass
class ObjectWiseGrid:
    """Object-wise occlusion from a visibility grid over the sensor's field.

    ``footprint(points) -> (depth, lo, hi)`` maps a batch of states to their
    layer and angular extent; ``edges`` partitions the field of view.
    """

    edges: np.ndarray
    footprint: Callable

    def bind(self, prior, Z, model):
        return _BoundGrid(model, self, prior)


# -- measurement-wise occlusion ------------------------------------------------


def mwo_augmented_miss(model, Z_visible, meas_visibility):
    """Miss function ``x -> 1 - P_D(x) + P_D(x) * int p(z|x) (1 - vis(z, Z_visible)) dz``.

    ``meas_visibility(z, Z_visible)`` may be flagged :func:`vectorized` to
    accept a batch of measurements.
    """
    Zv = list(Z_visible)
    if _is_vectorized(meas_visibility):
        hidden = vectorized(lambda zs: 1.0 - np.asarray(meas_visibility(zs, Zv), dtype=float))
    else:
        hidden = lambda z: 1.0 - meas_visibility(z, Zv)  # noqa: E731
    P_D = model.detection

    if model.linear is not None and _is_vectorized(hidden):
        @vectorized
        def miss(X):
            X = np.atleast_2d(X)
            pd = _evaluate(P_D, X)
            occ = model.expect_meas_batch(X, hidden)
            return np.clip(1.0 - pd + pd * occ, 1.0 - pd, 1.0)
        return miss

    def miss(x):
        pd = float(P_D(x)) if callable(P_D) else float(P_D)
        occ = model.expect_meas(x, hidden)
        return min(max(1.0 - pd + pd * occ, 1.0 - pd), 1.0)
    return miss


def occluded_clutter_factor(kappa: float, clutter_density, Z_visible, meas_visibility,
                            quadrature) -> float:
    """``exp(kappa * int p_F(z) (1 - vis(z, Z_visible)) dz)`` over a quadrature rule.

    ``quadrature`` is ``(points, weights)``; for a finite measurement space
    pass the points with unit weights.
    """
    if kappa == 0:
        return 1.0
    Zv = list(Z_visible)
    pts, w = quadrature
    total = 0.0
    for z, wk in zip(pts, w):
        dens = clutter_density(z) if callable(clutter_density) else clutter_density
        total += wk * dens * (1.0 - meas_visibility(z, Zv))
    return math.exp(kappa * total)


class _BoundMWO(BoundOcclusion):
    occludes = True

    def __init__(self, model, Z, meas_visibility):
        super().__init__(model)
        self._miss = mwo_augmented_miss(model, Z, meas_visibility)
        hidden_clutter = model.expect_clutter(
            lambda z: 1.0 - meas_visibility(z, list(Z))) if model.clutter_rate > 0 else 0.0
        self.log_clutter_factor = 0.0 if hidden_clutter is None else model.clutter_rate * hidden_clutter

    def miss(self, i):
        return self._miss


@dataclass
class MeasurementWise:
    """Restricted measurement-wise occlusion: visible measurements hide others."""

    meas_visibility: Callable

    def bind(self, prior, Z, model):
        return _BoundMWO(model, Z, self.meas_visibility)


# -- image boxes ---------------------------------------------------------------


def box_occlusion_prob(z, Z_visible, occludability: float,
                       overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD) -> float:
    """Probability that box ``z`` is hidden by the visible boxes.

    Only boxes whose bottom edge is strictly lower in the image can occlude.
    Boxes are ``(left, top, w, h)``.
    """
    l, t, w, h = z
    if w <= 0 or h <= 0:
        return 0.0
    bottom = t + h
    best = 0.0
    for other in Z_visible:
        if other[1] + other[3] > bottom:
            best = max(best, box_overlap_fraction(z, other))
    return occludability * min(1.0, best / overlap_threshold)


def center_to_box(z):
    """(cx, cy, w, h) -> (left, top, w, h); works on batches."""
    z = np.asarray(z, dtype=float)
    out = z.copy()
    out[..., 0] = z[..., 0] - 0.5 * z[..., 2]
    out[..., 1] = z[..., 1] - 0.5 * z[..., 3]
    return out


def box_meas_visibility(overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD,
                        center_format: bool = True):
    """Vectorized measurement visibility ``1 - g(max overlap)`` for image boxes.

    Occludability is applied by the strategy, not here.
    """

    @vectorized
    def vis(zs, Z_visible):
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        if len(Z_visible) == 0:
            return np.ones(zs.shape[0])
        boxes = center_to_box(zs) if center_format else zs
        vis_boxes = np.asarray(Z_visible, dtype=float).reshape(-1, 4)
        if center_format:
            vis_boxes = center_to_box(vis_boxes)
        l1, t1, w1, h1 = (boxes[:, k:k + 1] for k in range(4))
        l2, t2, w2, h2 = (vis_boxes[None, :, k] for k in range(4))
        iw = np.minimum(l1 + w1, l2 + w2) - np.maximum(l1, l2)
        ih = np.minimum(t1 + h1, t2 + h2) - np.maximum(t1, t2)
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        area = w1 * h1
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(area > 0, inter / area, 0.0)
        lower = (t2 + h2) > (t1 + h1)
        frac = np.where(lower, frac, 0.0)
        g = np.minimum(1.0, frac.max(axis=1) / overlap_threshold)
        return 1.0 - g

    return vis
