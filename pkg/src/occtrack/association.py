"""Data association for the multi-Bernoulli joint.

The joint of a multi-Bernoulli prior and the standard measurement model
factors over association matrices: each measurement comes from one track or
from clutter / a new object, each track takes at most one measurement.
:func:`build_problem` computes the per-pair weights with the occlusion
strategy folded in; :func:`exact_marginals` and :func:`lbp_marginals`
marginalize them; :func:`pmb_posterior` collapses the result per track.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kernels
from .densities import (
    Bernoulli,
    MultiBernoulli,
    PMBState,
    PoissonIntensity,
    Track,
    ZeroMassError,
    density_update,
    expect,
    flatten,
    likelihood_update,
)
from .occlusion import NoOcclusion

log = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10
LBP_TOL = 1e-6
LBP_MAX_ITER = 200
LBP_DAMPING = 0.5
SPAWN_THRESHOLD = 0.05


class InfeasibleMeasurementError(ValueError):
    """A measurement that no track, clutter or new object can explain."""


class EnumerationLimitError(ValueError):
    """Problem too large for exact marginalization."""


class ImpossibleAssociationError(ValueError):
    """Every association has zero weight."""


@dataclass(eq=False)
class AssociationProblem:
    detect_weights: np.ndarray          # W[i, j] = r_i * int p_ij^z
    miss_weights: np.ndarray            # lambda0_i
    clutter_weights: np.ndarray         # kappa * p_F(z_j)
    birth_weights: np.ndarray           # undetected-object weight per measurement
    detect_components: list             # [i][j] -> Bernoulli or None
    miss_components: list               # [i] -> Bernoulli
    birth_components: list              # [j] -> Bernoulli or None
    undetected_posterior: PoissonIntensity
    log_constant: float = 0.0           # -kappa + occluded clutter + undetected thinning
    measurements: list = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.detect_weights.shape

    @property
    def column_weights(self) -> np.ndarray:
        """Weight of "not from a prior track" per measurement."""
        return self.clutter_weights + self.birth_weights


@dataclass(eq=False)
class AssociationMarginals:
    P: np.ndarray           # track i generated measurement j
    P_miss: np.ndarray      # track i undetected
    P_clutter: np.ndarray   # measurement j from clutter or a new object
    log_evidence: float = math.nan
    converged: bool = True
    iterations: int = 0

    def check(self, tol: float = 1e-9) -> None:
        rows = self.P.sum(axis=1) + self.P_miss
        cols = self.P.sum(axis=0) + self.P_clutter
        if rows.size and np.max(np.abs(rows - 1)) > tol:
            raise AssertionError(f"row sums off by {np.max(np.abs(rows - 1))}")
        if cols.size and np.max(np.abs(cols - 1)) > tol:
            raise AssertionError(f"column sums off by {np.max(np.abs(cols - 1))}")


def build_problem(prior: MultiBernoulli, Z, model, strategy=None,
                  undetected: PoissonIntensity | None = None) -> AssociationProblem:
    """Association weights for ``prior`` and measurement list ``Z``.

    Raises :class:`InfeasibleMeasurementError` when some measurement has
    zero weight under every explanation.
    """
    strategy = strategy or NoOcclusion()
    Z = list(Z)
    comps = list(prior)
    bound = strategy.bind(prior, Z, model)
    n, m = len(comps), len(Z)
    W = np.zeros((n, m))
    lam = np.zeros(n)
    det_comps = [[None] * m for _ in range(n)]
    miss_comps = []

    for i, comp in enumerate(comps):
        occ = comp.occludability
        det, miss = bound.effective(i, occ)
        r = comp.existence
        if r > 0:
            for j, z in enumerate(Z):
                try:
                    post, mass = likelihood_update(comp.density, model, z, det)
                except ZeroMassError:
                    continue
                W[i, j] = r * mass
                det_comps[i][j] = Bernoulli(1.0, post, occ)
        try:
            miss_dens, mass0 = density_update(comp.density, miss)
        except ZeroMassError:
            miss_dens, mass0 = comp.density, 0.0
        lam[i] = 1.0 - r + r * mass0
        r_miss = r * mass0 / lam[i] if lam[i] > 0 else 0.0
        occ_miss = occ
        if bound.occludes and 0.0 < occ < 1.0 and mass0 > 0:
            # occludable objects are more likely to be missed
            occ_miss = min(1.0, occ * expect(comp.density, bound.miss(i)) / mass0)
        miss_comps.append(Bernoulli(min(r_miss, 1.0), miss_dens, occ_miss))

    clutter = np.array([model.clutter(z) for z in Z], dtype=float)
    births = np.zeros(m)
    birth_comps: list[Any] = [None] * m
    undet_post = PoissonIntensity.empty()
    log_const = -model.clutter_rate + bound.log_clutter_factor

    if undetected is not None and undetected.rate > 0 and undetected.shape is not None:
        det, miss = bound.effective(None, undetected.occludability)
        shape = undetected.shape
        for j, z in enumerate(Z):
            try:
                post, mass = likelihood_update(shape, model, z, det)
            except ZeroMassError:
                continue
            births[j] = undetected.rate * mass
            r_new = births[j] / (births[j] + clutter[j])
            birth_comps[j] = Bernoulli(min(r_new, 1.0), post, undetected.occludability)
        try:
            miss_shape, mass0 = density_update(shape, miss)
        except ZeroMassError:
            miss_shape, mass0 = shape, 0.0
        undet_post = PoissonIntensity(undetected.rate * mass0, miss_shape, undetected.occludability)
        log_const -= undetected.rate * (1.0 - mass0)

    col = clutter + births + W.sum(axis=0)
    bad = np.flatnonzero(col <= 0)
    if bad.size:
        raise InfeasibleMeasurementError(f"measurements {bad.tolist()} have zero weight")

    return AssociationProblem(W, lam, clutter, births, det_comps, miss_comps, birth_comps,
                              undet_post, log_const, Z)


def _scaled(problem: AssociationProblem):
    """Column- then row-normalized weights with the log of the removed scale."""
    W = problem.detect_weights.astype(float).copy()
    lam = problem.miss_weights.astype(float).copy()
    c = problem.column_weights.astype(float).copy()
    log_scale = 0.0
    n, m = W.shape
    for j in range(m):
        s = max(c[j], W[:, j].max() if n else 0.0)
        if s > 0:
            W[:, j] /= s
            c[j] /= s
            log_scale += math.log(s)
    for i in range(n):
        t = max(lam[i], W[i].max() if m else 0.0)
        if t > 0:
            W[i] /= t
            lam[i] /= t
            log_scale += math.log(t)
    return W, lam, c, log_scale


def exact_marginals(problem: AssociationProblem) -> AssociationMarginals:
    """Exact marginals over every valid association.

    Limited to ``ENUMERATION_LIMIT`` tracks and measurements.
    """
    n, m = problem.shape
    if n > ENUMERATION_LIMIT or m > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"{n} tracks x {m} measurements exceeds {ENUMERATION_LIMIT}")
    W, lam, c, log_scale = _scaled(problem)
    P, P_miss, P_clutter, total = kernels.subset_dp_marginals(
        np.ascontiguousarray(W), np.ascontiguousarray(lam), np.ascontiguousarray(c))
    if not total > 0:
        raise ImpossibleAssociationError("all associations have zero weight")
    log_ev = math.log(total) + log_scale + problem.log_constant
    return AssociationMarginals(P, P_miss, P_clutter, log_ev)


def _sinkhorn(P, P_miss, P_clutter, tol=1e-13, max_iter=100):
    """Rescale so rows (tracks) and columns (measurements) each sum to one."""
    n, m = P.shape
    A = np.zeros((n + 1, m + 1))
    A[:n, :m] = P
    A[:n, m] = P_miss
    A[n, :m] = P_clutter
    A[n, m] = 1.0
    for _ in range(max_iter):
        rows = A[:n].sum(axis=1)
        A[:n] /= np.where(rows > 0, rows, 1.0)[:, None]
        cols = A[:, :m].sum(axis=0)
        A[:, :m] /= np.where(cols > 0, cols, 1.0)[None, :]
        rows = A[:n].sum(axis=1)
        if not rows.size or np.max(np.abs(rows - 1.0)) < tol:
            break
    return A[:n, :m], A[:n, m], A[n, :m]


def lbp_marginals(problem: AssociationProblem, tol: float = LBP_TOL,
                  max_iter: int = LBP_MAX_ITER, damping: float = LBP_DAMPING) -> AssociationMarginals:
    """Approximate marginals by damped loopy belief propagation."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, m = problem.shape
    W, lam, c, _ = _scaled(problem)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi = np.where(lam[:, None] > 0, W / lam[:, None], 0.0)
    forced = lam <= 0
    if forced.any():
        # a track that must be detected: give the miss hypothesis a vanishing weight
        psi[forced] = W[forced] / 1e-300
    P, P_miss, P_clutter, converged, iters = kernels.lbp_association(
        np.ascontiguousarray(psi), np.ascontiguousarray(c), tol, max_iter, damping)
    if not converged:
        log.debug("LBP did not converge in %d iterations", iters)
    P, P_miss, P_clutter = _sinkhorn(P, P_miss, P_clutter)
    return AssociationMarginals(P, P_miss, P_clutter, math.nan, converged, iters)


def solve_weights(detect_weights, miss_weights, column_weights, method: str = "auto"):
    """Marginals straight from weight arrays, for trackers that build their own weights."""
    n, m = np.shape(detect_weights)
    problem = AssociationProblem(np.asarray(detect_weights, dtype=float), np.asarray(miss_weights, dtype=float),
                                 np.asarray(column_weights, dtype=float), np.zeros(m),
                                 [], [], [], PoissonIntensity.empty())
    if m and np.any(problem.column_weights + problem.detect_weights.sum(axis=0) <= 0):
        raise InfeasibleMeasurementError("some measurement has zero weight")
    return marginalize(problem, method)


def marginalize(problem: AssociationProblem, method: str = "lbp") -> AssociationMarginals:
    if method == "exact":
        return exact_marginals(problem)
    if method == "lbp":
        return lbp_marginals(problem)
    if method == "auto":
        n, m = problem.shape
        if n <= 6 and m <= 6:
            return exact_marginals(problem)
        return lbp_marginals(problem)
    raise ValueError(f"unknown marginalization method {method!r}")


def pmb_posterior(prior: PMBState, marginals: AssociationMarginals, problem: AssociationProblem,
                  spawn_threshold: float = SPAWN_THRESHOLD) -> PMBState:
    """Collapse the association mixture per track and spawn new tracks.

    Each track becomes the marginal-weighted mixture of its miss and
    per-measurement conditionals. A measurement spawns a track when its
    probability of coming from a previously undetected object exceeds
    ``spawn_threshold``.
    """
    tracks = []
    for i, track in enumerate(prior.tracks):
        pairs = [(marginals.P_miss[i], problem.miss_components[i])]
        pairs += [(marginals.P[i, j], problem.detect_components[i][j])
                  for j in range(problem.shape[1])]
        comps = []
        for w, b in pairs:
            if w <= 0 or b is None:
                continue
            for dw, dens in flatten(b.density):
                comps.append((w * dw, Bernoulli(b.existence, dens, b.occludability)))
        total = sum(w for w, _ in comps)
        comps = [(w / total, b) for w, b in comps]
        tracks.append(Track(track.label, comps))

    label = prior.next_label
    for j, b in enumerate(problem.birth_components):
        if b is None:
            continue
        p_new = marginals.P_clutter[j] * b.existence
        if p_new <= spawn_threshold:
            continue
        comps = [(dw, Bernoulli(min(p_new, 1.0), dens, b.occludability))
                 for dw, dens in flatten(b.density)]
        tracks.append(Track(label, comps))
        label += 1
    return PMBState(problem.undetected_posterior, tracks, label)
