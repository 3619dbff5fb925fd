"""Four-lane highway with a roadside point sensor.

Vehicles drive along lane center lines at ``y = offset`` in the +x direction;
the sensor sits at the origin. A point ``(x, y)`` is seen along the ray with
cotangent ``u = x / y``, so an angular span is an interval in ``u`` and
mapping it into another lane is a multiplication by that lane's offset.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr


@dataclass
class HighwayConfig:
    lane_offsets: tuple = (5.0, 8.5, 12.0, 15.5)
    lane_speeds: tuple = (22.0, 25.0, 28.0, 31.0)
    length_range: tuple = (4.0, 6.0)
    spawn_rate: float = 0.2
    headway: float = 8.0
    field_range: tuple = (-50.0, 50.0)
    sensor: tuple = (0.0, 0.0)
    dt: float = 0.2
    detection_prob: float = 0.95
    noise_std: float = 0.3
    clutter_rate: float = 0.5
    steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.lane_offsets = tuple(float(v) for v in self.lane_offsets)
        self.lane_speeds = tuple(float(v) for v in self.lane_speeds)
        self.length_range = tuple(float(v) for v in self.length_range)
        self.field_range = tuple(float(v) for v in self.field_range)
        self.sensor = tuple(float(v) for v in self.sensor)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.lane_offsets) != len(self.lane_speeds):
            raise ValueError("one speed per lane is required")
        ys = np.asarray(self.lane_offsets) - self.sensor[1]
        if np.any(ys <= 0) or np.any(np.diff(ys) <= 0):
            raise ValueError("lane offsets must be strictly increasing and beyond the sensor")
        lo, hi = self.length_range
        if not 0 < lo <= hi:
            raise ValueError("invalid length range")
        if self.headway <= hi:
            raise ValueError("headway must exceed the maximum vehicle length")
        if self.field_range[0] >= self.field_range[1]:
            raise ValueError("invalid field range")
        for name in ("detection_prob",):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")
        if self.noise_std < 0 or self.clutter_rate < 0 or self.spawn_rate < 0:
            raise ValueError("noise, clutter and spawn rates must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")

    @property
    def n_lanes(self) -> int:
        return len(self.lane_offsets)

    def lane_y(self, lane: int) -> float:
        """Perpendicular distance from the sensor to a lane."""
        return self.lane_offsets[lane] - self.sensor[1]

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "HighwayConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown highway config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "HighwayConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Vehicle:
    id: int
    lane: int
    back: float
    length: float
    velocity: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("vehicle length must be positive")

    @property
    def front(self) -> float:
        return self.back + self.length


@dataclass
class World:
    vehicles: list = field(default_factory=list)
    time: float = 0.0
    step: int = 0
    next_id: int = 0
    next_arrival: list = field(default_factory=list)   # per lane
    spawned: int = 0


@dataclass(frozen=True)
class Reading:
    """One sensor return in lane-local x coordinates.

    An observed end carries a value; a hidden end carries the interval it
    is known to lie in (``back_interval`` / ``front_interval``).
    """

    lane: int
    back: float | None = None
    front: float | None = None
    back_interval: tuple | None = None
    front_interval: tuple | None = None
    clutter: bool = False
    source: int | None = None

    @property
    def kind(self) -> str:
        return "full" if self.back_interval is None and self.front_interval is None else "partial"

    @property
    def which_end_occluded(self) -> str | None:
        if self.back_interval is not None and self.front_interval is not None:
            return "both"
        if self.back_interval is not None:
            return "back"
        if self.front_interval is not None:
            return "front"
        return None

    @property
    def visible_span(self) -> tuple[float, float]:
        lo = self.back if self.back_interval is None else self.back_interval[1]
        hi = self.front if self.front_interval is None else self.front_interval[0]
        return lo, hi


def Full(lane: int, back: float, front: float, **kw) -> Reading:
    return Reading(lane, back=back, front=front, **kw)


# -- world dynamics ------------------------------------------------------------


def new_world(config: HighwayConfig, rng: np.random.Generator) -> World:
    w = World()
    w.next_arrival = [_exp(rng, config.spawn_rate) for _ in range(config.n_lanes)]
    return w


def _exp(rng: np.random.Generator, rate: float) -> float:
    return rng.exponential(1.0 / rate) if rate > 0 else math.inf


def step_world(world: World, config: HighwayConfig, rng: np.random.Generator) -> World:
    """Advance every vehicle by one step, remove leavers, admit arrivals.

    Arrivals follow a per-lane Poisson process. An arrival that would violate
    the headway at the entry waits until the entry clears.
    """
    t0, t1 = world.time, world.time + config.dt
    x_in, x_out = config.field_range
    moved = [Vehicle(v.id, v.lane, v.back + v.velocity * config.dt, v.length, v.velocity)
             for v in world.vehicles]
    moved = [v for v in moved if v.back <= x_out]
    arrivals = list(world.next_arrival)
    next_id, spawned = world.next_id, world.spawned
    for lane in range(config.n_lanes):
        speed = config.lane_speeds[lane]
        while arrivals[lane] <= t1:
            back = x_in + speed * (t1 - max(arrivals[lane], t0))
            behind = [v.back for v in moved if v.lane == lane]
            limit = min(behind) - config.headway if behind else math.inf
            if back > limit:
                back = limit
            if back < x_in:
                break                       # entry blocked, retry next step
            length = rng.uniform(*config.length_range)
            moved.append(Vehicle(next_id, lane, back, length, speed))
            next_id += 1
            spawned += 1
            arrivals[lane] = max(arrivals[lane], t0) + _exp(rng, config.spawn_rate)
    moved.sort(key=lambda v: (v.lane, v.back))
    return World(moved, t1, world.step + 1, next_id, arrivals, spawned)


# -- occlusion geometry ----------------------------------------------------------


def union_intervals(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if hi < lo:
            continue
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


def _covering(union: Sequence[tuple[float, float]], u: float):
    for a, b in union:
        if a <= u <= b:
            return a, b
    return None


def clip_span(lo: float, hi: float, union: Sequence[tuple[float, float]]):
    """Visible part of ``[lo, hi]`` (in u) against a union of blocking intervals.

    Returns ``None`` when fully hidden, else ``(back_block, front_block, vis_lo, vis_hi)``
    where a block is the blocking interval hiding that end, or ``None``.
    """
    back_block = _covering(union, lo)
    front_block = _covering(union, hi)
    if back_block is not None and back_block == front_block:
        return None
    vis_lo = back_block[1] if back_block else lo
    vis_hi = front_block[0] if front_block else hi
    return back_block, front_block, vis_lo, vis_hi


def visible_spans_owo(world: World, config: HighwayConfig) -> dict:
    """Per vehicle id, the clipping result against nearer lanes' true spans.

    Values are ``clip_span`` outputs in u coordinates, ``None`` when hidden.
    """
    out = {}
    blocking: list[tuple[float, float]] = []
    for lane in range(config.n_lanes):
        y = config.lane_y(lane)
        union = union_intervals(blocking)
        spans = []
        for v in world.vehicles:
            if v.lane != lane:
                continue
            lo, hi = (v.back - config.sensor[0]) / y, (v.front - config.sensor[0]) / y
            out[v.id] = clip_span(lo, hi, union)
            spans.append((lo, hi))
        blocking.extend(spans)
    return out


def _reading_from_clip(lane: int, y: float, x0: float, clip, back: float, front: float,
                       source: int | None) -> Reading:
    back_block, front_block, _, _ = clip
    bi = None if back_block is None else (back_block[0] * y + x0, back_block[1] * y + x0)
    fi = None if front_block is None else (front_block[0] * y + x0, front_block[1] * y + x0)
    return Reading(lane, back=None if bi else back, front=None if fi else front,
                   back_interval=bi, front_interval=fi, source=source)


def sense(world: World, config: HighwayConfig, mode: str, rng: np.random.Generator,
          noise: dict | None = None, occlusion: bool = True) -> list[Reading]:
    """Readings for one scan.

    Random draws happen in a fixed order regardless of ``mode``: detection
    flags, endpoint noise, then clutter. ``noise`` maps vehicle id to an
    explicit ``(back, front)`` perturbation, overriding the random one.

    ``owo`` clips each detected vehicle against the true spans of every
    vehicle in nearer lanes. ``mwo`` clips each noisy candidate reading
    (clutter included) against the candidates of nearer lanes.
    """
    if mode not in ("owo", "mwo"):
        raise ValueError(f"unknown sensing mode {mode!r}")
    vehicles = sorted(world.vehicles, key=lambda v: (v.lane, v.back))
    n = len(vehicles)
    detected = rng.random(n) < config.detection_prob
    eps = rng.normal(0.0, 1.0, size=(n, 2)) * config.noise_std
    if noise:
        for k, v in enumerate(vehicles):
            if v.id in noise:
                eps[k] = noise[v.id]
    clutter = []
    for _ in range(rng.poisson(config.clutter_rate)):
        lane = int(rng.integers(config.n_lanes))
        back = rng.uniform(*config.field_range)
        clutter.append((lane, back, back + rng.uniform(*config.length_range)))
    x0 = config.sensor[0]
    readings: list[Reading] = []
    unclipped = (None, None, None, None)

    if mode == "owo":
        clips = visible_spans_owo(world, config) if occlusion else {}
        for k, v in enumerate(vehicles):
            clip = clips[v.id] if occlusion else unclipped
            if clip is None or not detected[k]:
                continue
            readings.append(_reading_from_clip(v.lane, config.lane_y(v.lane), x0, clip,
                                               v.back + eps[k, 0], v.front + eps[k, 1], v.id))
        readings.extend(Reading(lane, back=b, front=f, clutter=True) for lane, b, f in clutter)
        return readings

    candidates = [(v.lane, v.back + eps[k, 0], v.front + eps[k, 1], v.id, False)
                  for k, v in enumerate(vehicles) if detected[k]]
    candidates += [(lane, b, f, None, True) for lane, b, f in clutter]
    blocking: list[tuple[float, float]] = []
    for lane in range(config.n_lanes):
        y = config.lane_y(lane)
        union = union_intervals(blocking) if occlusion else []
        for cl, b, f, src, is_clutter in candidates:
            if cl != lane:
                continue
            lo, hi = (b - x0) / y, (f - x0) / y
            blocking.append((lo, hi))
            clip = clip_span(lo, hi, union)
            if clip is not None:
                r = _reading_from_clip(lane, y, x0, clip, b, f, src)
                readings.append(Reading(r.lane, r.back, r.front, r.back_interval, r.front_interval,
                                        is_clutter, src))
    return readings


# -- tracker-side models ------------------------------------------------------------


def clutter_intensity(config: HighwayConfig) -> float:
    """Clutter intensity per reading: lane, back and length are uniform."""
    lo, hi = config.length_range
    width = config.field_range[1] - config.field_range[0]
    return config.clutter_rate / (config.n_lanes * width * max(hi - lo, 1e-9))


def _gauss(d, sigma):
    return np.exp(-0.5 * (d / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def censored_mass(lo: float, hi: float, mean, sigma: float):
    """Probability that ``N(mean, sigma^2)`` falls in ``[lo, hi]``."""
    mean = np.asarray(mean, dtype=float)
    if sigma == 0:
        return ((mean >= lo) & (mean <= hi)).astype(float)
    return ndtr((hi - mean) / sigma) - ndtr((lo - mean) / sigma)


def reading_likelihood(reading: Reading, back, length, config: HighwayConfig):
    """Likelihood of ``reading`` for vehicle hypotheses ``(back, length)`` (arrays broadcast)."""
    sigma = config.noise_std
    back = np.asarray(back, dtype=float)
    front = back + np.asarray(length, dtype=float)
    if sigma <= 0:
        raise ValueError("the likelihood needs positive noise")
    if reading.back_interval is None:
        lik = _gauss(reading.back - back, sigma)
    else:
        lik = censored_mass(*reading.back_interval, back, sigma)
    if reading.front_interval is None:
        lik = lik * _gauss(reading.front - front, sigma)
    else:
        lik = lik * censored_mass(*reading.front_interval, front, sigma)
    return lik


def likelihood_matrix(readings: Sequence[Reading], back, length, config: HighwayConfig) -> np.ndarray:
    """``reading_likelihood`` for every hypothesis (rows) and reading (columns)."""
    sigma = config.noise_std
    if sigma <= 0:
        raise ValueError("the likelihood needs positive noise")
    back = np.asarray(back, dtype=float)[:, None]
    front = back + np.asarray(length, dtype=float)[:, None]
    out = np.ones((back.shape[0], len(readings)))
    for end, hyp in (("back", back), ("front", front)):
        obs = [j for j, r in enumerate(readings) if getattr(r, end + "_interval") is None]
        hid = [j for j, r in enumerate(readings) if getattr(r, end + "_interval") is not None]
        if obs:
            vals = np.array([getattr(readings[j], end) for j in obs])
            out[:, obs] *= _gauss(vals - hyp, sigma)
        if hid:
            lo = np.array([getattr(readings[j], end + "_interval")[0] for j in hid])
            hi = np.array([getattr(readings[j], end + "_interval")[1] for j in hid])
            out[:, hid] *= ndtr((hi - hyp) / sigma) - ndtr((lo - hyp) / sigma)
    return out


def visible_union(Z_visible: Sequence[Reading], config: HighwayConfig, lane: int) -> list[tuple[float, float]]:
    """Union (in u) of the visible extents of readings in lanes nearer than ``lane``."""
    x0 = config.sensor[0]
    spans = []
    for r in Z_visible:
        if r.lane < lane:
            lo, hi = r.visible_span
            y = config.lane_y(r.lane)
            spans.append(((lo - x0) / y, (hi - x0) / y))
    return union_intervals(spans)


def tracker_meas_visibility(z: Reading, Z_visible: Sequence[Reading], config: HighwayConfig) -> float:
    """1 if a reading with ``z``'s span would be generated, 0 if hidden by nearer readings."""
    lo, hi = z.visible_span
    y = config.lane_y(z.lane)
    x0 = config.sensor[0]
    union = visible_union(Z_visible, config, z.lane)
    return 0.0 if clip_span((lo - x0) / y, (hi - x0) / y, union) is None else 1.0


# -- export -----------------------------------------------------------------------

CSV_FIELDS = ("step", "kind", "lane", "back", "front", "back_lo", "back_hi", "front_lo", "front_hi",
              "clutter", "source")


def reading_rows(step: int, readings: Sequence[Reading]):
    for r in readings:
        bi = r.back_interval or (None, None)
        fi = r.front_interval or (None, None)
        yield {"step": step, "kind": r.kind, "lane": r.lane, "back": r.back, "front": r.front,
               "back_lo": bi[0], "back_hi": bi[1], "front_lo": fi[0], "front_hi": fi[1],
               "clutter": int(r.clutter), "source": r.source}


def write_readings_csv(path, scans: Sequence[Sequence[Reading]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for step, readings in enumerate(scans):
            for row in reading_rows(step, readings):
                w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def write_truth_csv(path, worlds: Sequence[World]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "id", "lane", "back", "front"))
        for step, world in enumerate(worlds):
            for v in world.vehicles:
                w.writerow((step, v.id, v.lane, v.back, v.front))


def simulate(config: HighwayConfig, mode: str, steps: int | None = None, seed: int | None = None):
    """Yield ``(world, readings)`` per step from an empty highway."""
    steps = config.steps if steps is None else steps
    rng = np.random.default_rng(config.seed if seed is None else seed)
    world = new_world(config, rng)
    for _ in range(steps):
        world = step_world(world, config, rng)
        yield world, sense(world, config, mode, rng)
