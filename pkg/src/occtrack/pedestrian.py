"""Box tracker for image detections built on the generic PMB recursion.

State is ``(cx, cy, w, h, vx, vy)`` with constant-velocity motion on the
center; detections are boxes ``(left, top, w, h)`` converted to centers.
Objects whose box bottom is lower in the image are nearer the camera and
may hide the others.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .densities import Gaussian, MeasurementModel, Mixture, PMBState, PoissonIntensity, mean
from .occlusion import (
    BoxOverlap,
    MeasurementWise,
    NoOcclusion,
    ObjectWiseExpval,
    box_meas_visibility,
    center_to_box,
)
from .trackers import MotionModel, cap_and_recycle, pmb_predict, pmb_update, prune_poisson

STRATEGIES = ("none", "owo-expval", "mwo")


@dataclass
class PedestrianConfig:
    image_size: tuple = (1920.0, 1080.0)
    detection_prob: float = 0.9
    meas_std: tuple = (4.0, 4.0, 4.0, 4.0)
    process_std: tuple = (2.0, 2.0, 1.0, 1.0, 0.5, 0.5)
    initial_velocity_std: float = 5.0
    clutter_rate: float = 1.0
    box_size_range: float = 500.0
    min_score: float = 0.0
    initial_rate: float = 5.0
    edge_birth_rate: float = 0.2
    edge_strip: float = 60.0
    typical_size: tuple = (60.0, 150.0)
    size_std: float = 40.0
    survival: float = 0.99
    occ_equilibrium: float = 0.95
    occ_rate: float = 0.1
    overlap_threshold: float = 0.5
    max_tracks: int = 72
    max_components: int = 2048
    recycle_threshold: float = 0.1
    min_component_weight: float = 1e-4
    poisson_floor: float = 1e-4
    poisson_components: int = 64
    report_threshold: float = 0.5
    method: str = "lbp"

    def __post_init__(self):
        self.image_size = tuple(float(v) for v in self.image_size)
        self.meas_std = tuple(float(v) for v in self.meas_std)
        self.process_std = tuple(float(v) for v in self.process_std)
        self.typical_size = tuple(float(v) for v in self.typical_size)
        if len(self.meas_std) != 4 or len(self.process_std) != 6:
            raise ValueError("meas_std needs 4 entries and process_std 6")
        if not 0 <= self.detection_prob <= 1:
            raise ValueError("detection_prob outside [0, 1]")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "PedestrianConfig":
        extra = set(data) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown pedestrian config keys: {sorted(extra)}")
        return cls(**data)


def _state_gaussian(cx, cy, cfg: PedestrianConfig, pos_std) -> Gaussian:
    w, h = cfg.typical_size
    mean = np.array([cx, cy, w, h, 0.0, 0.0])
    sd = np.array([pos_std[0], pos_std[1], cfg.size_std, cfg.size_std,
                   cfg.initial_velocity_std, cfg.initial_velocity_std])
    return Gaussian(mean, np.diag(sd ** 2))


def edge_birth(cfg: PedestrianConfig) -> PoissonIntensity:
    """Births along the four image borders."""
    W, H = cfg.image_size
    s = cfg.edge_strip
    comps = []
    for k in range(4):
        comps.append(_state_gaussian(s / 2 + k * (W - s) / 3, s / 2, cfg, (W / 6, s)))
    for k in range(4):
        comps.append(_state_gaussian(s / 2 + k * (W - s) / 3, H - s / 2, cfg, (W / 6, s)))
    for k in range(3):
        comps.append(_state_gaussian(s / 2, s / 2 + k * (H - s) / 2, cfg, (s, H / 4)))
        comps.append(_state_gaussian(W - s / 2, s / 2 + k * (H - s) / 2, cfg, (s, H / 4)))
    shape = Mixture(np.full(len(comps), 1.0 / len(comps)), tuple(comps))
    return PoissonIntensity(cfg.edge_birth_rate, shape, cfg.occ_equilibrium)


def initial_intensity(cfg: PedestrianConfig) -> PoissonIntensity:
    """Objects already in view at the first frame: a broad cover of the image."""
    W, H = cfg.image_size
    comps = [_state_gaussian((i + 0.5) * W / 4, (j + 0.5) * H / 3, cfg, (W / 8, H / 6))
             for i in range(4) for j in range(3)]
    shape = Mixture(np.full(len(comps), 1.0 / len(comps)), tuple(comps))
    return PoissonIntensity(cfg.initial_rate, shape, cfg.occ_equilibrium)


def motion_model(cfg: PedestrianConfig) -> MotionModel:
    F = np.eye(6)
    F[0, 4] = F[1, 5] = 1.0
    Q = np.diag(np.asarray(cfg.process_std) ** 2)
    return MotionModel(F, Q, cfg.survival, cfg.occ_equilibrium, cfg.occ_rate)


def measurement_model(cfg: PedestrianConfig) -> MeasurementModel:
    H = np.zeros((4, 6))
    H[:4, :4] = np.eye(4)
    R = np.diag(np.asarray(cfg.meas_std) ** 2)
    W, Hh = cfg.image_size
    p_F = 1.0 / (W * Hh * cfg.box_size_range ** 2)
    return MeasurementModel(detection=cfg.detection_prob, linear=(H, R), clutter_rate=cfg.clutter_rate,
                            clutter_density=p_F)


def strategy_for(name: str, cfg: PedestrianConfig):
    if name == "none":
        return NoOcclusion()
    if name == "owo-expval":
        return ObjectWiseExpval(BoxOverlap(lambda s: tuple(center_to_box(np.asarray(s)[:4])),
                                           cfg.overlap_threshold))
    if name == "mwo":
        return MeasurementWise(box_meas_visibility(cfg.overlap_threshold, center_format=True))
    raise ValueError(f"unknown strategy {name!r}; choose from {STRATEGIES}")


@dataclass
class PedestrianTracker:
    cfg: PedestrianConfig = field(default_factory=PedestrianConfig)
    strategy_name: str = "mwo"

    def __post_init__(self):
        self.strategy = strategy_for(self.strategy_name, self.cfg)
        self.motion = motion_model(self.cfg)
        self.model = measurement_model(self.cfg)
        self.birth = edge_birth(self.cfg)
        self.state = PMBState(initial_intensity(self.cfg), [])
        self.frames = 0

    def step(self, boxes, scores=None) -> list[tuple[int, float, np.ndarray]]:
        """Process one frame of ``(left, top, w, h)`` boxes; returns reported tracks.

        Each report is ``(label, existence, box)``.
        """
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        if scores is not None:
            boxes = boxes[np.asarray(scores, dtype=float) >= self.cfg.min_score]
        Z = [np.array([l + w / 2, t + h / 2, w, h]) for l, t, w, h in boxes]
        if self.frames > 0:
            self.state = pmb_predict(self.state, self.motion, self.birth)
        self.state = pmb_update(self.state, Z, self.model, self.strategy, method=self.cfg.method)
        self.state = cap_and_recycle(self.state, self.cfg.max_tracks, self.cfg.max_components,
                                     self.cfg.recycle_threshold,
                                     min_component_weight=self.cfg.min_component_weight)
        self.state = PMBState(prune_poisson(self.state.undetected, self.cfg.poisson_floor,
                                            self.cfg.poisson_components),
                              self.state.tracks, self.state.next_label)
        self.frames += 1
        return self.reports()

    def reports(self) -> list[tuple[int, float, np.ndarray]]:
        out = []
        for t in self.state.tracks:
            r = t.existence
            if r > self.cfg.report_threshold:
                b = t.bernoulli()
                out.append((t.label, r, center_to_box(mean(b.density)[:4])))
        return out

    def existence_of(self, label: int) -> float:
        for t in self.state.tracks:
            if t.label == label:
                return t.existence
        return 0.0


def track_detections(frames: dict, cfg: PedestrianConfig | None = None, strategy: str = "mwo"):
    """Run the tracker over ``{frame: [Detection]}``; yields MOT result rows."""
    tracker = PedestrianTracker(cfg or PedestrianConfig(), strategy)
    for frame in sorted(frames):
        dets = frames[frame]
        boxes = [d.box for d in dets]
        scores = [d.score for d in dets]
        for label, r, box in tracker.step(boxes, scores):
            yield (frame, label + 1, *box, r)
