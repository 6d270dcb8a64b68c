"""Synthetic session generator with a tunable planted demographic signal.

Trajectories are noisy point-to-point reaches: a minimum-jerk progression
toward each target plus Gaussian wobble, sampled at roughly the cadence of a
150 ms event poller.  Every session opens with an orientation segment whose
kinematics are population-typical; trait-dependent factors (speed, wobble,
dwell behaviour) engage only after it.  Early scanning of an unfamiliar page
is dominated by layout, so the planted signal lives in the later portion of
each trajectory.  That placement also makes the effect of event-insertion
cloaking visible end to end: inserted events halve the genuine horizon a
fixed-length sequence window covers, which strips exactly the segment the
signal occupies.  ``signal_strength`` scales the trait factors from
"identical populations" (0) to fully separated (1), so classifier scores can
be validated against a known ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sessions import CursorEvent, Dataset, Demographics, Session

_VIEWPORTS = ((1280, 800), (1366, 768), (1920, 1080))


@dataclass(frozen=True)
class LengthDistribution:
    """Gaussian mousemove-count distribution, clipped to [min, max].

    Defaults give multi-reach sessions comfortably longer than the
    orientation segment, so the trait-bearing tail is well represented.
    """

    mean: float = 150.0
    sd: float = 25.0
    min: int = 90
    max: int = 210


@dataclass(frozen=True)
class SynthConfig:
    n_sessions: int
    signal_strength: float = 1.0
    label: str = "gender"
    lengths: LengthDistribution = field(default_factory=LengthDistribution)
    seed: int = 0

    # population defaults; class factors multiply these after the
    # orientation segment
    base_speed: float = 0.55        # px per ms while moving
    cadence_ms: float = 150.0       # nominal inter-sample gap
    cadence_spread: float = 0.30    # per-session lognormal sd of the gap
    wobble: float = 0.30            # positional noise as a fraction of step length
    pause_prob: float = 0.22        # chance of dwelling after a reach
    pause_ms: float = 650.0         # median dwell duration
    orientation_moves: int = 55     # moves before trait factors engage (+-5 per session)

    def __post_init__(self):
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if self.label not in ("age", "gender"):
            raise ValueError("label must be 'age' or 'gender'")
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be positive")
        if self.lengths.min > self.lengths.max:
            raise ValueError("length distribution has min > max")
        if self.orientation_moves < 0:
            raise ValueError("orientation_moves must be non-negative")


@dataclass(frozen=True)
class _Phase:
    speed_mult: float
    wobble_mult: float
    pause_prob: float
    pause_mult: float


def _class_phases(cfg: SynthConfig, cls: int) -> tuple[_Phase, _Phase]:
    """(orientation, engaged) kinematic factors for one class."""
    s = cfg.signal_strength
    orientation = _Phase(1.0, 1.0, cfg.pause_prob, 1.0)
    if cls == 1:
        # the positive class moves faster, steadier, with fewer dwells
        engaged = _Phase(
            speed_mult=1.0 + 0.55 * s,
            wobble_mult=1.0 - 0.50 * s,
            pause_prob=max(cfg.pause_prob - 0.16 * s, 0.05),
            pause_mult=1.0,
        )
    else:
        engaged = _Phase(
            speed_mult=1.0 - 0.55 * s,
            wobble_mult=1.0 + 0.90 * s,
            pause_prob=min(cfg.pause_prob + 0.40 * s, 0.95),
            pause_mult=1.0 + 0.80 * s,
        )
    return orientation, engaged


def _min_jerk(frac: float) -> float:
    return frac * frac * frac * (10.0 + frac * (-15.0 + 6.0 * frac))


def _demographics(cfg: SynthConfig, cls: int, rng: np.random.Generator) -> Demographics:
    if cfg.label == "age":
        age = int(rng.integers(18, 36)) if cls == 1 else int(rng.integers(36, 67))
        gender = "male" if rng.random() < 0.5 else "female"
    else:
        gender = "male" if cls == 1 else "female"
        age = int(rng.integers(18, 67))
    return Demographics(gender=gender, age=age)


def _one_session(cfg: SynthConfig, index: int, rng: np.random.Generator) -> Session:
    cls = index % 2
    orientation, engaged = _class_phases(cfg, cls)
    vw, vh = _VIEWPORTS[int(rng.integers(len(_VIEWPORTS)))]

    n_moves = int(np.clip(round(rng.normal(cfg.lengths.mean, cfg.lengths.sd)),
                          cfg.lengths.min, cfg.lengths.max))
    onset = max(0, cfg.orientation_moves + int(rng.integers(-5, 6)))

    # session-level draws; per-step noise rides on top of them
    pace = math.exp(rng.normal(0.0, 0.15))
    cadence = cfg.cadence_ms * math.exp(rng.normal(0.0, cfg.cadence_spread))

    margin = 40.0
    px = rng.uniform(0.25 * vw, 0.75 * vw)
    py = rng.uniform(0.25 * vh, 0.75 * vh)
    t = 0.0
    events: list[CursorEvent] = [CursorEvent(px, py, 0.0, name="load")]
    moves = 0
    reach_no = 0

    while moves < n_moves:
        reach_no += 1
        par = orientation if moves < onset else engaged
        speed = cfg.base_speed * par.speed_mult * pace
        wobble = cfg.wobble * par.wobble_mult
        for _ in range(8):
            qx = rng.uniform(margin, vw - margin)
            qy = rng.uniform(margin, vh - margin)
            if math.hypot(qx - px, qy - py) >= 90.0:
                break
        dist = math.hypot(qx - px, qy - py)
        n_steps = max(2, round(dist / (speed * cadence)))
        step_len = dist / n_steps
        target_path = f"/html/body/div[{reach_no % 7}]/a[{reach_no % 3}]"
        x0, y0 = px, py
        for k in range(1, n_steps + 1):
            f = _min_jerk(k / n_steps)
            nx = x0 + (qx - x0) * f + rng.normal(0.0, wobble * step_len)
            ny = y0 + (qy - y0) * f + rng.normal(0.0, wobble * step_len)
            nx = float(np.clip(nx, 1.0, vw - 1.0))
            ny = float(np.clip(ny, 1.0, vh - 1.0))
            t += cadence * rng.uniform(0.85, 1.15)
            # the tail of a reach hovers over its target element
            path = target_path if k > 0.7 * n_steps else None
            events.append(CursorEvent(nx, ny, t, target_path=path))
            px, py = nx, ny
            moves += 1
            if moves >= n_moves:
                break
        if moves >= n_moves:
            break
        if rng.random() < 0.15:
            events.append(CursorEvent(px, py, t + 25.0, name="click", target_path=target_path))
            t += 35.0
        if rng.random() < par.pause_prob:
            t += cfg.pause_ms * par.pause_mult * math.exp(rng.normal(0.0, 0.45))

    return Session(
        id=f"synth-{cfg.seed}-{index:05d}",
        query=f"task-{index % 20}",
        viewport_w=vw,
        viewport_h=vh,
        events=tuple(events),
        demographics=_demographics(cfg, cls, rng),
    )


def generate(cfg: SynthConfig) -> Dataset:
    """Generate ``cfg.n_sessions`` synthetic sessions, deterministically.

    Classes alternate by index, so the balance is exact up to rounding.
    Each session draws from an independent substream keyed by its index,
    making the output invariant to generation order.  Sessions shorter than
    the orientation segment carry no trait signal at all; the default length
    distribution keeps those rare.
    """
    sessions = []
    for i in range(cfg.n_sessions):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(i,))))
        sessions.append(_one_session(cfg, i, rng))
    return Dataset(sessions=tuple(sessions), seed=cfg.seed)
