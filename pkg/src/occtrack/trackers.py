"""Poisson multi-Bernoulli recursion and the separable range updater."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .association import SPAWN_THRESHOLD, build_problem, marginalize, pmb_posterior
from .densities import (
    Bernoulli,
    Discrete,
    Gaussian,
    Mixture,
    MultiBernoulli,
    Particles,
    PMBState,
    PoissonIntensity,
    Track,
    ZeroMassError,
    density_update,
    likelihood_update,
    miss_mass,
    moments,
    pool_merge,
)
from .occlusion import _one_minus

DEFAULT_MAX_COMPONENTS = 2048
DEFAULT_MAX_TRACKS = 72
DEFAULT_RECYCLE_THRESHOLD = 0.1
DEFAULT_MERGE_RADIUS = 0.1
DEFAULT_GATE = 3.0
OCC_EQUILIBRIUM = 0.95
OCC_RATE = 0.1


@dataclass
class MotionModel:
    """Linear-Gaussian motion ``x' = F x + w, w ~ N(0, Q)`` plus survival.

    ``F=None`` is the identity. Occludability relaxes toward ``occ_equilibrium``
    at ``occ_rate`` per step.
    """

    F: Any = None
    Q: Any = None
    survival: float = 1.0
    occ_equilibrium: float = OCC_EQUILIBRIUM
    occ_rate: float = 0.0

    def __post_init__(self):
        for name in ("survival", "occ_equilibrium", "occ_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def mix_occludability(self, occ: float) -> float:
        if self.occ_rate == 0.0:
            return occ
        return (1.0 - self.occ_rate) * occ + self.occ_rate * self.occ_equilibrium

    def predict_density(self, density, rng: np.random.Generator | None = None):
        if self.F is None and self.Q is None:
            return density
        if isinstance(density, Mixture):
            return Mixture(density.weights, tuple(self.predict_density(c, rng) for c in density.components))
        if isinstance(density, Gaussian):
            F = np.eye(density.dim) if self.F is None else np.asarray(self.F, dtype=float)
            Q = np.zeros((density.dim, density.dim)) if self.Q is None else np.asarray(self.Q, dtype=float)
            return Gaussian(F @ density.mean, F @ density.cov @ F.T + Q)
        if isinstance(density, Particles):
            pts = density.points if self.F is None else density.points @ np.asarray(self.F, dtype=float).T
            if self.Q is not None:
                if rng is None:
                    raise ValueError("particle prediction with process noise needs an rng")
                pts = pts + rng.multivariate_normal(np.zeros(pts.shape[1]), self.Q, size=pts.shape[0])
            return Particles(pts, density.weights)
        if isinstance(density, Discrete):
            raise ValueError("discrete densities support identity motion only")
        raise TypeError(f"unsupported density {type(density).__name__}")


def pmb_predict(state: PMBState, motion: MotionModel, birth: PoissonIntensity | None = None,
                rng: np.random.Generator | None = None) -> PMBState:
    """Push every track and the undetected intensity one step forward."""
    tracks = []
    for t in state.tracks:
        comps = [(w, Bernoulli(b.existence * motion.survival, motion.predict_density(b.density, rng),
                               motion.mix_occludability(b.occludability)))
                 for w, b in t.components]
        tracks.append(Track(t.label, comps))
    u = state.undetected
    if u.rate > 0 and u.shape is not None:
        undet = PoissonIntensity(u.rate * motion.survival, motion.predict_density(u.shape, rng),
                                 u.occludability)
    else:
        undet = PoissonIntensity.empty()
    if birth is not None and birth.rate > 0:
        undet = undet.add(birth.rate, birth.shape, birth.occludability)
    return PMBState(undet, tracks, state.next_label)


def pmb_update(state: PMBState, Z, model, strategy=None, method: str = "lbp",
               spawn_threshold: float = SPAWN_THRESHOLD) -> PMBState:
    """One measurement update: weights, marginals, per-track collapse."""
    prior = state.multi_bernoulli()
    problem = build_problem(prior, Z, model, strategy, undetected=state.undetected)
    marg = marginalize(problem, method)
    return pmb_posterior(state, marg, problem, spawn_threshold)


# -- capping, recycling, merging ---------------------------------------------


def _merge_track(track: Track, radius: float) -> Track:
    gauss = [(k, w, b) for k, (w, b) in enumerate(track.components) if isinstance(b.density, Gaussian)]
    if len(gauss) < 2:
        return track
    means = np.array([b.density.mean for _, _, b in gauss])
    _, pooled = moments(Mixture.of([(max(w, 1e-300), b.density) for _, w, b in gauss]))
    vals, vecs = np.linalg.eigh(pooled)
    whiten = vecs / np.sqrt(np.clip(vals, 1e-12, None))
    tree = cKDTree(means @ whiten)
    pairs = tree.query_pairs(math.sqrt(radius), output_type="ndarray")
    if len(pairs) == 0:
        return track
    n = len(gauss)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, group = connected_components(graph, directed=False)
    merged = [(w, b) for w, b in track.components if not isinstance(b.density, Gaussian)]
    for g in np.unique(group):
        members = [(w, b) for (_, w, b), gg in zip(gauss, group) if gg == g]
        total = sum(w for w, _ in members)
        merged.append((total, pool_merge(members) if len(members) > 1 else members[0][1]))
    return Track(track.label, merged)


def _prune_track(track: Track, floor: float) -> Track:
    comps = [(w, b) for w, b in track.components if w >= floor]
    if len(comps) == len(track.components):
        return track
    if not comps:
        comps = [max(track.components, key=lambda wb: wb[0])]
    total = sum(w for w, _ in comps)
    return Track(track.label, [(w / total, b) for w, b in comps])


def prune_poisson(intensity: PoissonIntensity, floor: float, max_components: int) -> PoissonIntensity:
    """Drop mixture components of the undetected intensity with ``rate * weight < floor``.

    The removed mass is discarded, so the rate shrinks accordingly.
    """
    shape = intensity.shape
    if not isinstance(shape, Mixture):
        return intensity
    mass = intensity.rate * shape.weights
    idx = np.flatnonzero(mass >= floor)
    if idx.size > max_components:
        idx = idx[np.argsort(-mass[idx])[:max_components]]
    if idx.size == len(shape.components):
        return intensity
    if idx.size == 0:
        return PoissonIntensity.empty()
    idx = np.sort(idx)
    kept = mass[idx]
    new = Mixture.of([(m / kept.sum(), shape.components[i]) for m, i in zip(kept, idx)])
    return PoissonIntensity(float(kept.sum()), new, intensity.occludability)


def _recycle(undetected: PoissonIntensity, track: Track) -> PoissonIntensity:
    r = track.existence
    if r <= 0:
        return undetected
    b = pool_merge(track.components) if len(track.components) > 1 else track.components[0][1]
    return undetected.add(r, b.density, b.occludability)


def cap_and_recycle(state: PMBState, max_tracks: int = DEFAULT_MAX_TRACKS,
                    max_components: int = DEFAULT_MAX_COMPONENTS,
                    recycle_threshold: float = DEFAULT_RECYCLE_THRESHOLD,
                    merge_radius: float = DEFAULT_MERGE_RADIUS,
                    min_component_weight: float = 0.0) -> PMBState:
    """Bound the state size.

    Tracks below ``recycle_threshold`` or beyond the ``max_tracks`` most likely
    are turned back into undetected (Poisson) mass. Components closer than
    ``merge_radius`` (squared whitened distance) inside a track are pooled,
    then only the ``max_components`` most likely components are kept.
    Components below ``min_component_weight`` inside a track are dropped
    first (the best one always stays).
    """
    if max_tracks < 1 or max_components < 1:
        raise ValueError("limits must be at least 1")
    order = sorted(state.tracks, key=lambda t: -t.existence)
    keep, undet = [], state.undetected
    for t in order:
        if len(keep) < max_tracks and t.existence >= recycle_threshold:
            keep.append(t)
        else:
            undet = _recycle(undet, t)
    keep.sort(key=lambda t: t.label)
    if min_component_weight > 0:
        keep = [_prune_track(t, min_component_weight) for t in keep]
    keep = [_merge_track(t, merge_radius) for t in keep]

    scored = [(w * b.existence, k, c) for k, t in enumerate(keep) for c, (w, b) in enumerate(t.components)]
    if len(scored) > max_components:
        scored.sort(key=lambda s: -s[0])
        chosen = {(k, c) for _, k, c in scored[:max_components]}
        for k, t in enumerate(keep):
            best = max(range(len(t.components)), key=lambda c: t.components[c][0] * t.components[c][1].existence)
            chosen.add((k, best))
        trimmed = []
        for k, t in enumerate(keep):
            comps = [wc for c, wc in enumerate(t.components) if (k, c) in chosen]
            total = sum(w for w, _ in comps)
            trimmed.append(Track(t.label, [(w / total, b) for w, b in comps]))
        keep = trimmed

    if isinstance(undet.shape, Mixture) and len(undet.shape.components) > max_components:
        idx = np.argsort(-undet.shape.weights)[:max_components]
        shape = Mixture(undet.shape.weights[idx], tuple(undet.shape.components[i] for i in idx))
        undet = PoissonIntensity(undet.rate, shape, undet.occludability)
    return PMBState(undet, keep, state.next_label)


# -- separable likelihood, range sensor ----------------------------------------


class SeparabilityError(ValueError):
    """More than one component claims the same measurement."""


def _predicted_measurement(comp: Bernoulli, model):
    det = model.detection
    try:
        dens, _ = density_update(comp.density, det)
    except ZeroMassError:
        dens = comp.density
    mu, P = moments(dens)
    H, R = model.linear
    zhat = float((H @ mu)[0])
    var = float((H @ P @ H.T + R)[0, 0])
    return zhat, math.sqrt(var)


def zhat_gate(comp: Bernoulli, z: float, model, gate: float = DEFAULT_GATE) -> str:
    """Classify a component against range ``z``: detected, front_missed or behind.

    The predicted range is the mean measurement under the detection-weighted
    density; ``gate`` is in predicted-measurement standard deviations.
    """
    zhat, sd = _predicted_measurement(comp, model)
    if abs(zhat - z) <= gate * sd:
        return "detected"
    if zhat < z:
        return "front_missed"
    return "behind"


def seplik_update(prior: MultiBernoulli, z: float, model, gate: float = DEFAULT_GATE) -> MultiBernoulli:
    """Update with a single first-return range under deterministic occlusion.

    A range return hides everything farther away. Components in front of
    ``z`` missed it, the component at ``z`` produced it, components behind
    ``z`` learn nothing.
    """
    if z < 0:
        raise ValueError("range must be nonnegative")
    out = []
    claimed = None
    for k, comp in enumerate(prior):
        kind = zhat_gate(comp, z, model, gate)
        if kind == "behind":
            out.append(comp)
        elif kind == "detected":
            if claimed is not None:
                raise SeparabilityError(f"components {claimed} and {k} both match range {z}")
            claimed = k
            post, _ = likelihood_update(comp.density, model, np.atleast_1d(z), model.detection)
            out.append(Bernoulli(1.0, post, comp.occludability))
        else:
            lam, dens = miss_mass(comp, _one_minus(model.detection))
            # lam = 1 - r + r*m, so the present-and-missed share is lam - (1 - r)
            r = (lam - 1.0 + comp.existence) / lam if lam > 0 else 0.0
            out.append(Bernoulli(min(max(r, 0.0), 1.0), dens, comp.occludability))
    return MultiBernoulli(out)


def estimates(state: PMBState, threshold: float = 0.5) -> list[tuple[int, float, np.ndarray]]:
    """(label, existence, mean) for tracks above ``threshold``."""
    out = []
    for t in state.tracks:
        r = t.existence
        if r > threshold:
            b = t.bernoulli()
            out.append((t.label, r, moments(b.density)[0]))
    return out


__all__ = [
    "MotionModel",
    "pmb_predict",
    "pmb_update",
    "cap_and_recycle",
    "prune_poisson",
    "seplik_update",
    "zhat_gate",
    "SeparabilityError",
    "estimates",
]
