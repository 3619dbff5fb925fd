"""Particle multi-Bernoulli tracker for the highway world.

Every track is a Bernoulli whose density is a cloud of particles over
``(back, length)``. A reading carries its lane, so association splits into
one small problem per lane. The undetected intensity is a weighted point
set seeded at the entry of every lane. Occlusion enters through the
per-particle detection and miss factors:

* ``none``: detection ``P_D`` everywhere;
* ``owo-expval``: each track in a nearer lane, at its mean, occludes a
  particle whose angular span it covers; pairwise probabilities ``r_j`` are
  combined with the softmax rule;
* ``owo-grid``: an angular grid per lane stores the probability that no
  nearer track covers each cell; a particle is visible with the best cell
  visibility over its span;
* ``mwo``: the miss term grows by the probability that the particle's
  reading would fall inside the union of nearer visible readings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .. import kernels
from ..association import solve_weights
from ..occlusion import DEFAULT_BETA
from .sim import HighwayConfig, Reading, clutter_intensity, likelihood_matrix, visible_union

STRATEGIES = ("none", "owo-expval", "owo-grid", "mwo")


@dataclass
class TrackerParams:
    n_particles: int = 200
    birth_spacing: float = 0.5          # grid spacing of undetected points (m)
    spawn_threshold: float = 0.05
    report_threshold: float = 0.5
    prune_threshold: float = 1e-3
    undetected_floor: float = 1e-7
    roughen_back: float = 0.05
    roughen_length: float = 0.02
    grid_cells: int = 4096
    beta: float = DEFAULT_BETA
    method: str = "auto"


class HighwayTracker:
    def __init__(self, config: HighwayConfig, strategy: str = "mwo", params: TrackerParams | None = None,
                 seed: int = 0):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
        self.cfg = config
        self.strategy = strategy
        self.p = params or TrackerParams()
        self.rng = np.random.default_rng(seed)
        N = self.p.n_particles
        self.X = np.zeros((0, N, 2))          # (back, length)
        self.w = np.zeros((0, N))
        self.r = np.zeros(0)
        self.lane = np.zeros(0, dtype=np.int64)
        self.label = np.zeros(0, dtype=np.int64)
        self.next_label = 0
        self.U = np.zeros((0, 2))             # undetected points
        self.Uw = np.zeros(0)                 # their intensity weights
        self.Ulane = np.zeros(0, dtype=np.int64)
        self.speeds = np.asarray(config.lane_speeds)
        self.ys = np.array([config.lane_y(k) for k in range(config.n_lanes)])
        self.kappa = clutter_intensity(config)
        lo, hi = config.length_range
        self._lengths = np.arange(lo, hi + 1e-9, self.p.birth_spacing)
        self._lengths = self._lengths if self._lengths.size else np.array([lo])
        x_in, x_out = config.field_range
        x0 = config.sensor[0]
        span = x_out - x_in
        self._grid_edges = np.linspace((x_in - 0.1 * span - x0) / self.ys[0],
                                       (x_out + 0.1 * span - x0) / self.ys[0], self.p.grid_cells + 1)
        self._grid_centers = 0.5 * (self._grid_edges[:-1] + self._grid_edges[1:])
        self._births = self._birth_points()

    # -- prediction --------------------------------------------------------------

    def _birth_points(self):
        x_in = self.cfg.field_range[0]
        pts, lanes = [], []
        for k, v in enumerate(self.speeds):
            n_b = max(int(np.ceil(v * self.cfg.dt / self.p.birth_spacing)), 1)
            backs = x_in + (np.arange(n_b) + 0.5) * (v * self.cfg.dt / n_b)
            B, L = np.meshgrid(backs, self._lengths, indexing="ij")
            pts.append(np.column_stack([B.ravel(), L.ravel()]))
            lanes.append(np.full(B.size, k))
        pts = np.vstack(pts)
        lanes = np.concatenate(lanes)
        weights = np.zeros(len(lanes))
        for k in range(len(self.speeds)):
            sel = lanes == k
            weights[sel] = self.cfg.spawn_rate * self.cfg.dt / sel.sum()
        return pts, weights, lanes

    def predict(self) -> None:
        dt, x_out = self.cfg.dt, self.cfg.field_range[1]
        if self.r.size:
            self.X[:, :, 0] += self.speeds[self.lane][:, None] * dt
            inside = self.X[:, :, 0] <= x_out
            mass = (self.w * inside).sum(axis=1)
            keep = mass > 0
            self._select(keep)
            inside, mass = inside[keep], mass[keep]
            self.w = self.w * inside / mass[:, None]
            self.r = self.r * mass
        if self.Uw.size:
            self.U[:, 0] += self.speeds[self.Ulane] * dt
            keep = self.U[:, 0] <= x_out
            self.U, self.Uw, self.Ulane = self.U[keep], self.Uw[keep], self.Ulane[keep]
        pts, weights, lanes = self._births
        self.U = np.vstack([self.U, pts])
        self.Uw = np.concatenate([self.Uw, weights])
        self.Ulane = np.concatenate([self.Ulane, lanes])

    def _select(self, keep) -> None:
        self.X, self.w, self.r = self.X[keep], self.w[keep], self.r[keep]
        self.lane, self.label = self.lane[keep], self.label[keep]

    # -- occlusion terms ------------------------------------------------------------

    def _prepare(self, readings) -> None:
        x0 = self.cfg.sensor[0]
        if self.strategy == "mwo":
            self._unions = [np.array(visible_union(readings, self.cfg, k)).reshape(-1, 2)
                            for k in range(self.cfg.n_lanes)]
        elif self.strategy == "owo-expval":
            mb = (self.w * self.X[:, :, 0]).sum(axis=1)
            ml = (self.w * self.X[:, :, 1]).sum(axis=1)
            y = self.ys[self.lane]
            self._occ_spans = np.column_stack([(mb - x0) / y, (mb + ml - x0) / y])
        elif self.strategy == "owo-grid":
            ncell = self.p.grid_cells
            log_vis = np.zeros(ncell)
            self._grids = []
            for k in range(self.cfg.n_lanes):
                self._grids.append(np.exp(log_vis))
                for t in np.flatnonzero(self.lane == k):
                    y = self.ys[k]
                    lo = (self.X[t, :, 0] - x0) / y
                    hi = (self.X[t, :, 0] + self.X[t, :, 1] - x0) / y
                    a, b = self._cells(lo, hi)
                    cover = kernels.interval_cover(a, b,
                                                   np.ascontiguousarray(self.w[t]), ncell)
                    with np.errstate(divide="ignore"):
                        log_vis = log_vis + np.log(np.clip(1.0 - self.r[t] * cover, 0.0, 1.0))

    def _cells(self, lo, hi):
        """First and last grid cell whose center lies in ``[lo, hi]``."""
        c0 = self._grid_centers[0]
        du = self._grid_centers[1] - c0
        a = np.ceil((lo - c0) / du - 1e-9).astype(np.int64)
        b = np.floor((hi - c0) / du + 1e-9).astype(np.int64)
        return a, b

    def _terms(self, k: int, B: np.ndarray, L: np.ndarray, exclude: int | None = None):
        """Detection and miss factors for hypotheses ``(B, L)`` in lane ``k``."""
        pd = self.cfg.detection_prob
        if self.strategy == "none" or k == 0:
            return np.full(B.shape, pd), np.full(B.shape, 1.0 - pd)
        x0 = self.cfg.sensor[0]
        y = self.ys[k]
        if self.strategy == "mwo":
            union = self._unions[k]
            sigma = self.cfg.noise_std
            hidden = np.zeros(B.shape)
            for u1, u2 in union:
                s1, s2 = u1 * y + x0, u2 * y + x0
                if sigma > 0:
                    hidden += (1.0 - ndtr((s1 - B) / sigma)) * ndtr((s2 - B - L) / sigma)
                else:
                    hidden += ((B >= s1) & (B + L <= s2)).astype(float)
            hidden = np.clip(hidden, 0.0, 1.0)
            return np.full(B.shape, pd), 1.0 - pd + pd * hidden
        lo, hi = (B - x0) / y, (B + L - x0) / y
        if self.strategy == "owo-expval":
            occl = np.flatnonzero(self.lane < k)
            if occl.size == 0:
                return np.full(B.shape, pd), np.full(B.shape, 1.0 - pd)
            spans = self._occ_spans[occl]
            inside = (lo[..., None] >= spans[:, 0]) & (hi[..., None] <= spans[:, 1])
            q = inside * self.r[occl]
            qmax = q.max(axis=-1, keepdims=True)
            comb = np.clip((q * np.exp(self.p.beta * (q - qmax))).sum(axis=-1), 0.0, 1.0)
            det = pd * (1.0 - comb)
            return det, 1.0 - det
        grid = self._grids[k]
        a, b = self._cells(lo.ravel(), hi.ravel())
        vis = kernels.range_max(grid, a, b, 1.0).reshape(B.shape)
        det = pd * vis
        return det, 1.0 - det

    # -- update ----------------------------------------------------------------------

    def update(self, readings) -> None:
        readings = list(readings)
        self._prepare(readings)
        N = self.p.n_particles
        new_X, new_W, new_r, new_lane = [], [], [], []
        U_miss = np.ones(self.Uw.shape)
        by_lane = {}
        for idx, z in enumerate(readings):
            by_lane.setdefault(z.lane, []).append(z)
        new_w = self.w.copy()
        new_rt = self.r.copy()
        for k in range(self.cfg.n_lanes):
            tracks = np.flatnonzero(self.lane == k)
            Zk = by_lane.get(k, [])
            usel = np.flatnonzero(self.Ulane == k)
            m, n = len(Zk), len(tracks)
            # track particles and undetected points share one batch
            H = np.concatenate([self.X[tracks].reshape(-1, 2), self.U[usel]])
            det, miss = self._terms(k, H[:, 0], H[:, 1])
            nt = n * N
            det_t, miss_t = det[:nt].reshape(n, N), miss[:nt].reshape(n, N)
            det_u = det[nt:]
            U_miss[usel] = miss[nt:]
            wt = self.w[tracks]
            rt = self.r[tracks]
            m0 = (wt * miss_t).sum(axis=1)
            lam = 1.0 - rt + rt * m0
            r_miss = np.where(lam > 0, rt * m0 / np.where(lam > 0, lam, 1.0), 0.0)
            if m == 0:
                if n:
                    new_w[tracks] = wt * miss_t / np.where(m0 > 0, m0, 1.0)[:, None]
                    new_rt[tracks] = r_miss
                continue
            lik = likelihood_matrix(Zk, H[:, 0], H[:, 1], self.cfg)
            lik_t = lik[:nt].reshape(n, N, m)
            lik_u = lik[nt:]
            W = rt[:, None] * np.einsum("tn,tnj->tj", wt * det_t, lik_t)
            births = (self.Uw[usel] * det_u) @ lik_u
            col = self.kappa + births
            marg = solve_weights(W, lam, col, self.p.method)
            if n:
                with np.errstate(divide="ignore", invalid="ignore"):
                    coef_det = np.where(W > 0, marg.P * rt[:, None] / W, 0.0)
                    coef_miss = np.where(lam > 0, marg.P_miss * rt / lam, 0.0)
                mix = coef_miss[:, None] * miss_t + det_t * np.einsum("tnj,tj->tn", lik_t, coef_det)
                post = wt * mix
                total = post.sum(axis=1)
                ok = total > 0
                new_w[tracks[ok]] = post[ok] / total[ok, None]
                new_rt[tracks] = np.clip(marg.P_miss * r_miss + marg.P.sum(axis=1), 0.0, 1.0)
            for j in range(m):
                if births[j] <= 0:
                    continue
                r_birth = marg.P_clutter[j] * births[j] / col[j]
                if r_birth <= self.p.spawn_threshold:
                    continue
                pw = self.Uw[usel] * det_u * lik_u[:, j]
                idx = self.rng.choice(usel.size, size=N, p=pw / pw.sum())
                pts = self.U[usel[idx]].copy()
                h = self.p.birth_spacing / 2
                pts += self.rng.uniform(-h, h, size=pts.shape)
                # the prior is flat within a cell, so weight by the likelihood ratio
                ratio = likelihood_matrix([Zk[j]], pts[:, 0], pts[:, 1], self.cfg)[:, 0] / lik_u[idx, j]
                new_X.append(pts)
                new_W.append(ratio / ratio.sum() if ratio.sum() > 0 else np.full(N, 1.0 / N))
                new_r.append(min(r_birth, 1.0))
                new_lane.append(k)
        self.w, self.r = new_w, new_rt
        self.Uw = self.Uw * U_miss
        keep = self.Uw > self.p.undetected_floor
        self.U, self.Uw, self.Ulane = self.U[keep], self.Uw[keep], self.Ulane[keep]
        if new_X:
            self.X = np.concatenate([self.X, np.stack(new_X)])
            self.w = np.concatenate([self.w, np.stack(new_W)])
            self.r = np.concatenate([self.r, new_r])
            self.lane = np.concatenate([self.lane, new_lane]).astype(np.int64)
            labels = np.arange(self.next_label, self.next_label + len(new_X))
            self.label = np.concatenate([self.label, labels])
            self.next_label += len(new_X)
        self._prune()
        self._resample()

    def _prune(self) -> None:
        low = self.r < self.p.prune_threshold
        if not low.any():
            return
        # low-existence tracks return their mass to the undetected intensity
        N = self.p.n_particles
        n_keep = 10
        for t in np.flatnonzero(low):
            idx = self.rng.choice(N, size=n_keep, p=self.w[t])
            self.U = np.vstack([self.U, self.X[t, idx]])
            self.Uw = np.concatenate([self.Uw, np.full(n_keep, self.r[t] / n_keep)])
            self.Ulane = np.concatenate([self.Ulane, np.full(n_keep, self.lane[t])])
        self._select(~low)

    def _resample(self) -> None:
        if not self.r.size:
            return
        N = self.p.n_particles
        ess = 1.0 / (self.w ** 2).sum(axis=1)
        rows = np.flatnonzero(ess < 0.5 * N)
        if rows.size == 0:
            return
        cdf = np.cumsum(self.w[rows], axis=1)
        cdf[:, -1] = 1.0
        u = (self.rng.random((rows.size, 1)) + np.arange(N)) / N
        idx = np.minimum(np.array([np.searchsorted(c, uu) for c, uu in zip(cdf, u)]), N - 1)
        X = np.take_along_axis(self.X[rows], idx[:, :, None], axis=1)
        X[:, :, 0] += self.rng.normal(0.0, self.p.roughen_back, size=(rows.size, N))
        X[:, :, 1] += self.rng.normal(0.0, self.p.roughen_length, size=(rows.size, N))
        lo, hi = self.cfg.length_range
        X[:, :, 1] = np.clip(X[:, :, 1], lo, hi)
        self.X[rows] = X
        self.w[rows] = 1.0 / N

    # -- output ----------------------------------------------------------------------

    def step(self, readings) -> np.ndarray:
        self.predict()
        self.update(readings)
        return self.estimates()

    def estimates(self) -> np.ndarray:
        """Rows ``(center x, lane y, length, label)`` for tracks above the report threshold."""
        sel = self.r > self.p.report_threshold
        if not sel.any():
            return np.zeros((0, 4))
        mb = (self.w[sel] * self.X[sel, :, 0]).sum(axis=1)
        ml = (self.w[sel] * self.X[sel, :, 1]).sum(axis=1)
        return np.column_stack([mb + ml / 2, self.cfg.sensor[1] + self.ys[self.lane[sel]], ml,
                                self.label[sel]])

    @property
    def expected_cardinality(self) -> float:
        return float(self.r.sum() + self.Uw.sum())


def truth_points(world, config: HighwayConfig) -> np.ndarray:
    """Ground truth rows ``(center x, lane y, length)``."""
    if not world.vehicles:
        return np.zeros((0, 3))
    return np.array([(v.back + v.length / 2, config.lane_offsets[v.lane], v.length) for v in world.vehicles])


__all__ = ["STRATEGIES", "TrackerParams", "HighwayTracker", "truth_points", "Reading"]
