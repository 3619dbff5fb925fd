"""State densities and the Bernoulli / Poisson building blocks.

Four density representations share one contract: :func:`expect` integrates
a function against the density and :func:`density_update` multiplies the
density by a nonnegative weight function and renormalizes.

* :class:`Gaussian` -- mean and covariance. Generic weights are integrated
  with a symmetric sigma-point rule; linear-Gaussian likelihoods go through
  :func:`kalman_update` exactly.
* :class:`Particles` -- weighted samples.
* :class:`Discrete` -- masses over a finite list of (hashable) states.
* :class:`Mixture` -- weighted combination of the above.

Weight functions are plain callables ``state -> float`` or constants. A
callable flagged with :func:`vectorized` receives a 2-D array of states and
returns one value per row, which the Gaussian and particle paths exploit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

SYMMETRY_TOL = 1e-9


class ZeroMassError(ValueError):
    """A weight function integrated to zero against a density."""


class DegenerateModelError(ValueError):
    """The innovation covariance of a linear-Gaussian update is singular."""


def vectorized(fn):
    """Mark ``fn`` as accepting an ``(K, d)`` array of states."""
    fn.vectorized = True
    return fn


def _is_vectorized(fn) -> bool:
    return getattr(fn, "vectorized", False)


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", _symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sigma_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Symmetric 2d+1 point set with nonnegative weights.

        Uses kappa = max(3 - d, 0), which matches fourth moments in one
        and two dimensions and keeps every weight nonnegative.
        """
        d = self.dim
        kappa = max(3.0 - d, 0.0)
        root = _matrix_sqrt((d + kappa) * self.cov)
        pts = np.empty((2 * d + 1, d))
        pts[0] = self.mean
        pts[1 : d + 1] = self.mean + root.T
        pts[d + 1 :] = self.mean - root.T
        w = np.full(2 * d + 1, 0.5 / (d + kappa))
        w[0] = kappa / (d + kappa)
        return pts, w


def _matrix_sqrt(a: np.ndarray) -> np.ndarray:
    """Lower factor ``L`` with ``L @ L.T == a`` for PSD ``a``."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(_symmetrize(a))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class Particles:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (pts.shape[0],):
            raise ValueError("one weight per particle required")
        if np.any(w < 0):
            raise ValueError("particle weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise ZeroMassError("particle weights sum to zero")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w / total)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))


@dataclass(frozen=True, eq=False)
class Discrete:
    support: tuple
    masses: np.ndarray

    def __post_init__(self):
        support = tuple(self.support)
        masses = np.asarray(self.masses, dtype=float)
        if masses.shape != (len(support),):
            raise ValueError("one mass per support point required")
        if np.any(masses < 0):
            raise ValueError("masses must be nonnegative")
        total = masses.sum()
        if total <= 0:
            raise ZeroMassError("masses sum to zero")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "masses", masses / total)

    @classmethod
    def from_dict(cls, table: dict) -> "Discrete":
        return cls(tuple(table), np.array(list(table.values()), dtype=float))

    def prob(self, state) -> float:
        try:
            return float(self.masses[self.support.index(state)])
        except ValueError:
            return 0.0

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.masses.tolist()))


@dataclass(frozen=True, eq=False)
class Mixture:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        comps = tuple(self.components)
        if w.shape != (len(comps),):
            raise ValueError("one weight per mixture component required")
        total = w.sum()
        if total <= 0:
            raise ZeroMassError("mixture weights sum to zero")
        object.__setattr__(self, "weights", w / total)
        object.__setattr__(self, "components", comps)

    @classmethod
    def of(cls, pairs: Sequence[tuple[float, Any]]) -> Any:
        """Flattening constructor; a single component is returned bare."""
        flat = []
        for w, dens in pairs:
            if w <= 0:
                continue
            if isinstance(dens, Mixture):
                flat.extend((w * cw, c) for cw, c in zip(dens.weights, dens.components))
            else:
                flat.append((w, dens))
        if not flat:
            raise ZeroMassError("empty mixture")
        if len(flat) == 1:
            return flat[0][1]
        return cls(np.array([w for w, _ in flat]), tuple(d for _, d in flat))

    def items(self):
        return zip(self.weights.tolist(), self.components)


StateDensity = Gaussian | Particles | Discrete | Mixture


def flatten(density) -> list[tuple[float, Any]]:
    if isinstance(density, Mixture):
        return list(density.items())
    return [(1.0, density)]


# -- evaluation helpers ------------------------------------------------------


def _evaluate(fn, states: np.ndarray) -> np.ndarray:
    if not callable(fn):
        return np.full(len(states), float(fn))
    if _is_vectorized(fn):
        return np.asarray(fn(states), dtype=float).reshape(len(states))
    return np.array([fn(s) for s in states], dtype=float)


def expect(density, fn) -> float:
    """Integral of ``fn`` against ``density``."""
    if not callable(fn):
        return float(fn)
    if isinstance(density, Discrete):
        return float(sum(m * fn(s) for s, m in zip(density.support, density.masses) if m > 0))
    if isinstance(density, Particles):
        return float(np.dot(density.weights, _evaluate(fn, density.points)))
    if isinstance(density, Gaussian):
        pts, w = density.sigma_points()
        return float(np.dot(w, _evaluate(fn, pts)))
    if isinstance(density, Mixture):
        return float(sum(w * expect(c, fn) for w, c in density.items()))
    raise TypeError(f"unsupported density {type(density).__name__}")


def moments(density) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a vector-valued density."""
    if isinstance(density, Gaussian):
        return density.mean, density.cov
    if isinstance(density, Particles):
        w = density.weights
        mean = w @ density.points
        dev = density.points - mean
        return mean, _symmetrize((dev * w[:, None]).T @ dev)
    if isinstance(density, Mixture):
        parts = [(w, *moments(c)) for w, c in density.items()]
        mean = sum(w * mu for w, mu, _ in parts)
        cov = sum(w * (P + np.outer(mu - mean, mu - mean)) for w, mu, P in parts)
        return mean, _symmetrize(cov)
    if isinstance(density, Discrete):
        pts = np.atleast_2d(np.array(density.support, dtype=float))
        if pts.shape[0] != len(density.support):
            pts = pts.T
        return moments(Particles(pts, density.masses))
    raise TypeError(f"unsupported density {type(density).__name__}")


def mean(density) -> np.ndarray:
    return moments(density)[0]


# -- updates -----------------------------------------------------------------


def kalman_update(prior: Gaussian, H, R, z) -> tuple[Gaussian, float]:
    """Conjugate update of ``prior`` with ``z ~ N(H x, R)``.

    Returns the posterior and the predictive density of ``z``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if H.shape != (z.size, prior.dim) or R.shape != (z.size, z.size):
        raise ValueError("inconsistent observation model dimensions")
    zhat = H @ prior.mean
    PHt = prior.cov @ H.T
    S = _symmetrize(H @ PHt + R)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise DegenerateModelError("innovation covariance is not positive definite") from exc
    innov = z - zhat
    sol = np.linalg.solve(L, innov)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    lik = math.exp(-0.5 * (sol @ sol) - 0.5 * logdet - 0.5 * z.size * math.log(2 * math.pi))
    K = np.linalg.solve(S, PHt.T).T
    post_mean = prior.mean + K @ innov
    post_cov = prior.cov - K @ S @ K.T
    return Gaussian(post_mean, post_cov), lik


def _reweight_gaussian(prior: Gaussian, fn) -> tuple[Gaussian, float]:
    pts, w = prior.sigma_points()
    vals = _evaluate(fn, pts)
    if np.any(vals < 0):
        raise ValueError("weight function returned a negative value")
    ww = w * vals
    mass = float(ww.sum())
    if mass <= 0:
        raise ZeroMassError("weight integrates to zero under the prior")
    ww = ww / mass
    mu = ww @ pts
    dev = pts - mu
    cov = (dev * ww[:, None]).T @ dev
    return Gaussian(mu, cov), mass


def density_update(prior, weight) -> tuple[Any, float]:
    """Return ``(posterior, mass)`` with posterior proportional to ``weight * prior``.

    Raises :class:`ZeroMassError` when the mass is zero.
    """
    if not callable(weight):
        c = float(weight)
        if c < 0:
            raise ValueError("negative constant weight")
        if c == 0:
            raise ZeroMassError("zero constant weight")
        return prior, c
    if isinstance(prior, Discrete):
        vals = np.array([weight(s) for s in prior.support], dtype=float)
        if np.any(vals < 0):
            raise ValueError("weight function returned a negative value")
        unnorm = prior.masses * vals
        mass = float(unnorm.sum())
        if mass <= 0:
            raise ZeroMassError("weight integrates to zero under the prior")
        return Discrete(prior.support, unnorm), mass
    if isinstance(prior, Particles):
        vals = _evaluate(weight, prior.points)
        if np.any(vals < 0):
            raise ValueError("weight function returned a negative value")
        unnorm = prior.weights * vals
        mass = float(unnorm.sum())
        if mass <= 0:
            raise ZeroMassError("weight integrates to zero under the prior")
        return Particles(prior.points, unnorm), mass
    if isinstance(prior, Gaussian):
        return _reweight_gaussian(prior, weight)
    if isinstance(prior, Mixture):
        parts = []
        for w, comp in prior.items():
            try:
                post, m = density_update(comp, weight)
            except ZeroMassError:
                continue
            parts.append((w * m, post))
        mass = sum(p for p, _ in parts)
        if mass <= 0:
            raise ZeroMassError("weight integrates to zero under the prior")
        return Mixture.of([(p / mass, d) for p, d in parts]), float(mass)
    raise TypeError(f"unsupported density {type(prior).__name__}")


def systematic_resample(particles: Particles, rng: np.random.Generator,
                        n: int | None = None) -> Particles:
    n = len(particles.weights) if n is None else n
    u = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(particles.weights), u)
    idx = np.minimum(idx, len(particles.weights) - 1)
    return Particles(particles.points[idx], np.full(n, 1.0 / n))


def maybe_resample(particles: Particles, rng: np.random.Generator) -> Particles:
    """Systematic resampling when the effective sample size drops below N/2."""
    if particles.ess() < 0.5 * len(particles.weights):
        return systematic_resample(particles, rng)
    return particles


# -- set-level building blocks ----------------------------------------------


@dataclass(frozen=True, eq=False)
class Bernoulli:
    existence: float
    density: Any
    occludability: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.existence <= 1.0:
            raise ValueError(f"existence {self.existence} outside [0, 1]")
        if not 0.0 <= self.occludability <= 1.0:
            raise ValueError(f"occludability {self.occludability} outside [0, 1]")


@dataclass(eq=False)
class MultiBernoulli:
    components: list = field(default_factory=list)

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def expected_cardinality(self) -> float:
        return float(sum(c.existence for c in self.components))


@dataclass(frozen=True, eq=False)
class PoissonIntensity:
    rate: float
    shape: Any = None
    occludability: float = 1.0

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("Poisson rate must be nonnegative")

    @classmethod
    def empty(cls) -> "PoissonIntensity":
        return cls(0.0, None)

    def add(self, rate: float, shape, occludability: float | None = None) -> "PoissonIntensity":
        """Superpose another Poisson intensity ``rate * shape``."""
        if rate <= 0:
            return self
        if self.rate <= 0 or self.shape is None:
            occ = self.occludability if occludability is None else occludability
            return PoissonIntensity(rate, shape, occ)
        total = self.rate + rate
        occ = self.occludability
        if occludability is not None:
            occ = (self.rate * self.occludability + rate * occludability) / total
        mix = Mixture.of([(self.rate / total, self.shape), (rate / total, shape)])
        return PoissonIntensity(total, mix, occ)


@dataclass(eq=False)
class Track:
    label: int
    components: list  # of (weight, Bernoulli)

    @property
    def existence(self) -> float:
        return float(sum(w * b.existence for w, b in self.components))

    def bernoulli(self) -> Bernoulli:
        """Collapse the component list into one Bernoulli with a mixture density."""
        r = self.existence
        if r > 0:
            pairs = [(w * b.existence / r, b.density) for w, b in self.components]
            occ = sum(w * b.existence * b.occludability for w, b in self.components) / r
        else:
            pairs = [(w, b.density) for w, b in self.components]
            occ = sum(w * b.occludability for w, b in self.components)
        return Bernoulli(min(r, 1.0), Mixture.of(pairs), min(max(occ, 0.0), 1.0))


@dataclass(eq=False)
class PMBState:
    undetected: PoissonIntensity
    tracks: list = field(default_factory=list)
    next_label: int = 0

    def __post_init__(self):
        labels = [t.label for t in self.tracks]
        if len(set(labels)) != len(labels):
            raise ValueError("track labels must be unique")
        if labels:
            self.next_label = max(self.next_label, max(labels) + 1)

    def multi_bernoulli(self) -> MultiBernoulli:
        return MultiBernoulli([t.bernoulli() for t in self.tracks])

    def expected_cardinality(self) -> float:
        return float(sum(t.existence for t in self.tracks) + self.undetected.rate)


@dataclass(eq=False)
class MeasurementModel:
    """Standard measurement model: detection, single-object likelihood, Poisson clutter.

    ``linear=(H, R)`` declares ``z ~ N(H x, R)``; the likelihood is then
    derived and Gaussian densities are updated in closed form.
    ``measurement_support`` lists a finite measurement space, which makes
    integrals over ``z`` exact sums. ``clutter_quadrature`` is an optional
    ``(points, weights)`` rule for integrals against the clutter density.
    """

    detection: Any = 1.0
    likelihood: Callable | None = None
    clutter_rate: float = 0.0
    clutter_density: Any = 0.0
    linear: tuple | None = None
    measurement_support: Sequence | None = None
    clutter_quadrature: tuple | None = None

    def __post_init__(self):
        if self.clutter_rate < 0:
            raise ValueError("clutter rate must be nonnegative")
        if self.linear is not None:
            H, R = self.linear
            H = np.atleast_2d(np.asarray(H, dtype=float))
            R = np.atleast_2d(np.asarray(R, dtype=float))
            self.linear = (H, R)
            self._meas_gauss = Gaussian(np.zeros(H.shape[0]), R)
        elif self.likelihood is None:
            raise ValueError("either a likelihood or a linear model is required")

    def detect(self, x) -> float:
        return float(self.detection(x)) if callable(self.detection) else float(self.detection)

    def lik(self, x, z) -> float:
        if self.likelihood is not None:
            return float(self.likelihood(x, z))
        H, R = self.linear
        return _gauss_pdf(np.atleast_1d(z) - H @ np.atleast_1d(x), R)

    def clutter(self, z) -> float:
        """Clutter intensity ``kappa * p_F(z)``."""
        dens = self.clutter_density(z) if callable(self.clutter_density) else self.clutter_density
        return self.clutter_rate * float(dens)

    def expect_meas(self, x, g) -> float:
        """Integral over measurements of ``p(z|x) g(z)``."""
        if self.measurement_support is not None:
            return float(sum(self.lik(x, z) * g(z) for z in self.measurement_support))
        if self.linear is not None:
            H, _ = self.linear
            pts, w = self._meas_gauss.sigma_points()
            zs = pts + H @ np.atleast_1d(x)
            return float(np.dot(w, _evaluate(g, zs)))
        raise ValueError("model cannot integrate over measurements")

    def expect_meas_batch(self, X: np.ndarray, g) -> np.ndarray:
        """Vectorized :meth:`expect_meas` over the rows of ``X``."""
        if self.linear is None or not _is_vectorized(g):
            return np.array([self.expect_meas(x, g) for x in X])
        H, _ = self.linear
        pts, w = self._meas_gauss.sigma_points()
        centers = X @ H.T
        zs = (centers[:, None, :] + pts[None, :, :]).reshape(-1, H.shape[0])
        vals = np.asarray(g(zs), dtype=float).reshape(X.shape[0], pts.shape[0])
        return vals @ w

    def expect_clutter(self, g) -> float | None:
        """Integral of ``p_F(z) g(z)``; ``None`` when no rule is available."""
        if self.measurement_support is not None:
            dens = self.clutter_density
            return float(sum((dens(z) if callable(dens) else dens) * g(z)
                             for z in self.measurement_support))
        if self.clutter_quadrature is not None:
            pts, w = self.clutter_quadrature
            return float(sum(wk * g(zk) for zk, wk in zip(pts, w)))
        return None


def _gauss_pdf(diff: np.ndarray, cov: np.ndarray) -> float:
    L = np.linalg.cholesky(cov)
    sol = np.linalg.solve(L, diff)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return math.exp(-0.5 * (sol @ sol) - 0.5 * logdet - 0.5 * diff.size * math.log(2 * math.pi))


def likelihood_update(prior, model: MeasurementModel, z, factor=1.0) -> tuple[Any, float]:
    """Posterior and mass for the weight ``factor(x) * p(z|x)``.

    Gaussian priors under a linear model take the Kalman route and then
    apply ``factor`` (when it is not constant) to the Kalman posterior.
    """
    if isinstance(prior, Mixture):
        parts = []
        for w, comp in prior.items():
            try:
                post, m = likelihood_update(comp, model, z, factor)
            except ZeroMassError:
                continue
            parts.append((w * m, post))
        mass = sum(p for p, _ in parts)
        if mass <= 0:
            raise ZeroMassError("measurement has zero likelihood under the prior")
        return Mixture.of([(p / mass, d) for p, d in parts]), float(mass)
    if isinstance(prior, Gaussian) and model.linear is not None:
        post, lik = kalman_update(prior, *model.linear, z)
        if lik <= 0:
            raise ZeroMassError("measurement has zero likelihood under the prior")
        post, m = density_update(post, factor)
        return post, lik * m
    if callable(factor):
        weight = lambda x: factor(x) * model.lik(x, z)  # noqa: E731
    else:
        c = float(factor)
        weight = lambda x: c * model.lik(x, z)  # noqa: E731
    return density_update(prior, weight)


def miss_mass(comp: Bernoulli, effective_miss) -> tuple[float, Any]:
    """Miss weight ``1 - r + r * int p(x) miss(x)`` and the miss-conditioned density."""
    try:
        dens, m = density_update(comp.density, effective_miss)
    except ZeroMassError:
        return 1.0 - comp.existence, comp.density
    return 1.0 - comp.existence + comp.existence * m, dens


def pool_merge(components: Sequence[tuple[float, Bernoulli]]) -> Bernoulli:
    """Merge weighted Bernoulli components into one, pooling existence.

    The density is the moment-matched Gaussian of the existence-weighted
    mixture; occludability is the existence-weighted mean.
    """
    comps = [(float(w), b) for w, b in components]
    if len(comps) == 1:
        return comps[0][1]
    total_w = sum(w for w, _ in comps)
    if total_w <= 0:
        raise ValueError("pool_merge needs positive total weight")
    comps = [(w / total_w, b) for w, b in comps]
    r = sum(w * b.existence for w, b in comps)
    if r > 0:
        mix = [(w * b.existence / r, b) for w, b in comps]
    else:
        mix = comps
    occ = sum(w * b.occludability for w, b in mix)
    densities = [(w, b.density) for w, b in mix if w > 0]
    if all(isinstance(d, Gaussian) for _, d in densities):
        mu, cov = moments(Mixture.of(densities))
        dens = Gaussian(mu, cov)
    else:
        dens = Mixture.of(densities)
    return Bernoulli(min(r, 1.0), dens, min(max(occ, 0.0), 1.0))


def with_existence(b: Bernoulli, r: float) -> Bernoulli:
    return replace(b, existence=min(max(r, 0.0), 1.0))


def enumerate_multibernoulli(mb: MultiBernoulli):
    """Yield ``(probability, states)`` over every realization of a discrete MB.

    ``states`` holds one entry per component: ``None`` when absent.
    """
    options = []
    for comp in mb:
        opts = [(1.0 - comp.existence, None)]
        opts += [(comp.existence * m, s) for s, m in zip(comp.density.support, comp.density.masses)]
        options.append(opts)
    for combo in itertools.product(*options):
        p = 1.0
        for q, _ in combo:
            p *= q
        yield p, tuple(s for _, s in combo)
