"""The two-row, two-column toy world, solved exactly.

The bottom object always exists and sits left or right with equal odds. The
top object exists with probability 1/2 and, if it does, sits left or right
with equal odds. A present object reports its own square with probability
1/2, the other square of its row with 1/4 and nothing with 1/4. There is no
clutter. The bottom row may occlude the top row:

* object-wise: a top object directly above the bottom object reports nothing;
* measurement-wise: a bottom measurement hides a top measurement in the
  same column.

Everything here is exact rational arithmetic. :func:`pipeline_posterior`
recomputes the same posteriors through the generic association and
occlusion code with discrete densities.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import NamedTuple

from .association import (
    ImpossibleAssociationError,
    InfeasibleMeasurementError,
    build_problem,
    exact_marginals,
    lbp_marginals,
    pmb_posterior,
)
from .densities import (
    Bernoulli,
    Discrete,
    MeasurementModel,
    MultiBernoulli,
    PMBState,
    PoissonIntensity,
    Track,
)
from .occlusion import MeasurementWise, NoOcclusion, ObjectWiseStatic

MODES = ("none", "object-wise", "measurement-wise")
COLUMNS = ("L", "R")

HALF = Fraction(1, 2)
P_TOP_EXISTS = HALF
P_SAME = Fraction(1, 2)
P_WRONG = Fraction(1, 4)
P_NONE = Fraction(1, 4)


class ImpossibleOutcomeError(ValueError):
    """The outcome has zero probability under the chosen occlusion mode."""


class Outcome(NamedTuple):
    top: str | None
    bottom: str | None

    def __str__(self) -> str:
        parts = [f"top {self.top}" if self.top else None, f"bottom {self.bottom}" if self.bottom else None]
        parts = [p for p in parts if p]
        return "{" + ", ".join(parts) + "}" if parts else "{}"


class Posterior(NamedTuple):
    top_exists: Fraction
    top_left_given_exists: Fraction
    bottom_left: Fraction


ALL_OUTCOMES = tuple(Outcome(t, b) for t in (None, "L", "R") for b in (None, "L", "R"))

# Labels of the five outcomes shown with the example; fixed by consistency
# with the published posterior table (see tests/test_foursquare.py).
LABELED_OUTCOMES = {
    "A": Outcome(None, None),
    "B": Outcome(None, "L"),
    "C": Outcome("L", None),
    "D": Outcome("L", "R"),
    "E": Outcome("L", "L"),
}


def _channel(col: str):
    """(reported square, probability) for one present object in ``col``."""
    other = "R" if col == "L" else "L"
    return ((col, P_SAME), (other, P_WRONG), (None, P_NONE))


def enumerate_joint(mode: str):
    """Every (bottom column, top column or None, outcome, probability) with positive mass."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    rows = []
    for bcol in COLUMNS:
        for tcol, p_top in ((None, 1 - P_TOP_EXISTS),) + tuple((c, P_TOP_EXISTS * HALF) for c in COLUMNS):
            p_conf = HALF * p_top
            top_blocked = mode == "object-wise" and tcol == bcol
            top_channel = ((None, Fraction(1)),) if tcol is None or top_blocked else _channel(tcol)
            for (bm, pb), (tm, pt) in itertools.product(_channel(bcol), top_channel):
                seen_top = tm
                if mode == "measurement-wise" and tm is not None and tm == bm:
                    seen_top = None
                rows.append(((bcol, tcol), Outcome(seen_top, bm), p_conf * pb * pt))
    return rows


def outcome_probability(outcome: Outcome, mode: str) -> Fraction:
    return sum((p for _, o, p in enumerate_joint(mode) if o == outcome), Fraction(0))


def posterior(outcome: Outcome, mode: str) -> Posterior:
    """Exact posterior of both objects given the visible outcome."""
    outcome = Outcome(*outcome)
    rows = [(conf, p) for conf, o, p in enumerate_joint(mode) if o == outcome]
    total = sum((p for _, p in rows), Fraction(0))
    if total == 0:
        raise ImpossibleOutcomeError(f"outcome {outcome} is impossible under {mode} occlusion")
    top_exists = sum((p for (b, t), p in rows if t is not None), Fraction(0))
    top_left = sum((p for (b, t), p in rows if t == "L"), Fraction(0))
    bottom_left = sum((p for (b, t), p in rows if b == "L"), Fraction(0))
    return Posterior(top_exists / total, top_left / top_exists if top_exists else Fraction(0),
                     bottom_left / total)


def classify_outcomes() -> dict[str, list[Outcome]]:
    """Split all nine outcomes by which occlusion models consider them possible."""
    groups = {"both-possible": [], "object-wise-only": [], "measurement-wise-only": [], "neither": []}
    for o in ALL_OUTCOMES:
        owo = outcome_probability(o, "object-wise") > 0
        mwo = outcome_probability(o, "measurement-wise") > 0
        key = ("both-possible" if owo and mwo else "object-wise-only" if owo
               else "measurement-wise-only" if mwo else "neither")
        groups[key].append(o)
    return groups


def table() -> dict[str, dict[str, Posterior | None]]:
    """Posterior grid for the labeled outcomes; ``None`` marks impossible ones."""
    out = {}
    for mode in MODES:
        out[mode] = {}
        for label, o in LABELED_OUTCOMES.items():
            try:
                out[mode][label] = posterior(o, mode)
            except ImpossibleOutcomeError:
                out[mode][label] = None
    return out


# -- the same answers through the generic pipeline --------------------------------

P_D = 0.75


def _likelihood(x, z) -> float:
    if x[0] != z[0]:
        return 0.0
    return 2.0 / 3.0 if x[1] == z[1] else 1.0 / 3.0


def measurement_model() -> MeasurementModel:
    squares = [(row, col) for row in ("top", "bottom") for col in COLUMNS]
    return MeasurementModel(detection=P_D, likelihood=_likelihood, clutter_rate=0.0,
                            clutter_density=0.0, measurement_support=squares)


def measurements(outcome: Outcome) -> list:
    Z = []
    if outcome.top is not None:
        Z.append(("top", outcome.top))
    if outcome.bottom is not None:
        Z.append(("bottom", outcome.bottom))
    return Z


def mwo_visibility(z, Z_visible) -> float:
    """A bottom measurement hides the top measurement in its column."""
    if z[0] == "top" and ("bottom", z[1]) in Z_visible:
        return 0.0
    return 1.0


def prior_state(bottom_col: str | None = None) -> PMBState:
    if bottom_col is None:
        bottom = Discrete((("bottom", "L"), ("bottom", "R")), [0.5, 0.5])
    else:
        bottom = Discrete((("bottom", bottom_col),), [1.0])
    top = Discrete((("top", "L"), ("top", "R")), [0.5, 0.5])
    tracks = [Track(0, [(1.0, Bernoulli(1.0, bottom))]), Track(1, [(1.0, Bernoulli(0.5, top))])]
    return PMBState(PoissonIntensity.empty(), tracks)


def _prob_of(track: Track, state) -> tuple[float, float]:
    """(existence, existence-weighted mass on ``state``) of a discrete track."""
    r = sum(w * b.existence for w, b in track.components)
    mass = sum(w * b.existence * b.density.prob(state) for w, b in track.components)
    return r, mass


def _run(state: PMBState, Z, strategy, method: str):
    model = measurement_model()
    prior = state.multi_bernoulli()
    problem = build_problem(prior, Z, model, strategy)
    marg = exact_marginals(problem) if method == "exact" else lbp_marginals(problem)
    return pmb_posterior(state, marg, problem), marg, problem


def pipeline_posterior(outcome: Outcome, mode: str, method: str = "exact") -> tuple[float, float, float]:
    """Posterior triple computed by the association/occlusion pipeline in floats.

    Object-wise occlusion in this world is not static: whether the top object
    is visible depends on the bottom object's column. It becomes static once
    the bottom column is fixed, so the pipeline runs once per column and the
    results are mixed by prior times evidence.
    """
    outcome = Outcome(*outcome)
    Z = measurements(outcome)
    if mode == "none":
        post, _, _ = _run(prior_state(), Z, NoOcclusion(), method)
        return _triple(post)
    if mode == "measurement-wise":
        for z in Z:
            if mwo_visibility(z, [v for v in Z if v != z]) == 0.0:
                raise ImpossibleOutcomeError(f"outcome {outcome} is impossible under {mode} occlusion")
        post, _, _ = _run(prior_state(), Z, MeasurementWise(mwo_visibility), method)
        return _triple(post)
    if mode != "object-wise":
        raise ValueError(f"unknown mode {mode!r}")

    acc_w = acc_top = acc_top_left = acc_bottom_left = 0.0
    for bcol in COLUMNS:
        def vis(x, b=bcol):
            return 0.0 if x == ("top", b) else 1.0
        try:
            post, marg, _ = _run(prior_state(bcol), Z, ObjectWiseStatic(vis), "exact")
        except (InfeasibleMeasurementError, ImpossibleAssociationError):
            continue
        weight = 0.5 * math.exp(marg.log_evidence)
        r_top, m_top_left = _prob_of(post.tracks[1], ("top", "L"))
        acc_w += weight
        acc_top += weight * r_top
        acc_top_left += weight * m_top_left
        if bcol == "L":
            acc_bottom_left += weight
    if acc_w == 0:
        raise ImpossibleOutcomeError(f"outcome {outcome} is impossible under {mode} occlusion")
    return acc_top / acc_w, acc_top_left / acc_top, acc_bottom_left / acc_w


def _triple(post: PMBState) -> tuple[float, float, float]:
    bottom, top = post.tracks[0], post.tracks[1]
    r_top, m_top_left = _prob_of(top, ("top", "L"))
    r_bot, m_bot_left = _prob_of(bottom, ("bottom", "L"))
    return r_top, m_top_left / r_top, m_bot_left / r_bot


# -- rendering ---------------------------------------------------------------------

QUANTITIES = (("P(top object exists)", 0), ("P(top object on left if exists)", 1),
              ("P(bottom object on left)", 2))


def format_table() -> str:
    grid = table()
    labels = list(LABELED_OUTCOMES)
    lines = []
    width = 18
    for title, k in QUANTITIES:
        lines.append(title)
        lines.append(" " * width + "".join(f"{lab:>7}" for lab in labels))
        for mode in MODES:
            cells = []
            for lab in labels:
                p = grid[mode][lab]
                cells.append(f"{'-' if p is None else str(p[k]):>7}")
            lines.append(f"{mode:<{width}}" + "".join(cells))
        lines.append("")
    lines.append("Outcomes: " + ", ".join(f"{k}={v}" for k, v in LABELED_OUTCOMES.items()))
    lines.append("")
    for group, outs in classify_outcomes().items():
        lines.append(f"{group:<22}" + " ".join(str(o) for o in outs))
    return "\n".join(lines)


def as_json() -> dict:
    grid = table()
    return {
        "outcomes": {k: {"top": v.top, "bottom": v.bottom} for k, v in LABELED_OUTCOMES.items()},
        "posteriors": {
            mode: {lab: (None if p is None else {
                "top_exists": str(p.top_exists),
                "top_left_given_exists": str(p.top_left_given_exists),
                "bottom_left": str(p.bottom_left)}) for lab, p in row.items()}
            for mode, row in grid.items()},
        "classification": {g: [{"top": o.top, "bottom": o.bottom} for o in outs]
                           for g, outs in classify_outcomes().items()},
    }
