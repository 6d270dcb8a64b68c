"""Trajectory cloaking by bounded synthetic event insertion.

After every genuine mousemove the transform inserts one or more synthetic
events whose displacement from the genuine position is bounded by a noise
radius sigma, at a time near the midpoint of the gap to the next event.
Genuine events pass through untouched, output times stay strictly
increasing, and synthetic coordinates and times stay positive.  Applied
before fixed-length tensor conversion, the insertions both perturb the
trajectory shape and push genuine events past the model's horizon.

Randomness comes from :class:`cursorlab.rng.PortableRng`, not numpy, so the
browser companion can reproduce displacement streams bit for bit; golden
files generated here are replayed against that implementation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .rng import PortableRng, substream_seed
from .sessions import CursorEvent, Dataset, Session

_TAIL_GAP_DEFAULT = 300.0  # virtual gap (ms) after a lone trailing event
_MAX_REDRAWS = 8


@dataclass(frozen=True)
class NoiseConfig:
    """Cloaking parameters.

    sigma_mode "fixed" uses ``sigma`` for every sequence; "uniform" draws a
    per-sequence radius from U(low, high).  ``distribution`` selects the
    displacement law within the radius: "gaussian_radius" (Gaussian, redrawn
    until inside the radius) or "uniform_radius" (uniform over the disk).
    """

    sigma_mode: str = "uniform"
    sigma: float = 0.25
    low: float = 0.0
    high: float = 1.0
    events_per_gap: int = 1
    distribution: str = "gaussian_radius"
    seed: int = 0

    def __post_init__(self):
        if self.sigma_mode not in ("fixed", "uniform"):
            raise ValueError("sigma_mode must be 'fixed' or 'uniform'")
        if self.distribution not in ("gaussian_radius", "uniform_radius"):
            raise ValueError("distribution must be 'gaussian_radius' or 'uniform_radius'")
        if self.sigma < 0 or self.low < 0 or self.high < self.low:
            raise ValueError("noise radii must be non-negative with high >= low")
        if self.events_per_gap < 1:
            raise ValueError("events_per_gap must be at least 1")


def _draw_displacement(sigma: float, distribution: str, rng: PortableRng) -> tuple[float, float]:
    if distribution == "uniform_radius":
        r = sigma * math.sqrt(rng.uniform())
        a = 2.0 * math.pi * rng.uniform()
        return r * math.cos(a), r * math.sin(a)
    # gaussian bounded at the radius; the scale-down fallback is effectively
    # unreachable (acceptance probability per try is about 0.39)
    for _ in range(64):
        g1, g2 = rng.gauss_pair()
        dx, dy = sigma * g1, sigma * g2
        if math.hypot(dx, dy) <= sigma:
            return dx, dy
    norm = math.hypot(dx, dy)
    scale = (sigma * 0.999) / norm if norm > 0 else 0.0
    return dx * scale, dy * scale


def _positive_position(x: float, y: float, sigma: float, distribution: str,
                       rng: PortableRng) -> tuple[float, float]:
    """Displaced position with both coordinates strictly positive.

    Resamples the displacement when it would push a coordinate to zero or
    below; after that, reflection keeps the offset within the radius.
    """
    for _ in range(_MAX_REDRAWS):
        dx, dy = _draw_displacement(sigma, distribution, rng)
        nx, ny = x + dx, y + dy
        if nx > 0.0 and ny > 0.0:
            return nx, ny
    nx, ny = abs(nx), abs(ny)
    if nx <= 0.0:
        nx = math.nextafter(0.0, 1.0)
    if ny <= 0.0:
        ny = math.nextafter(0.0, 1.0)
    return nx, ny


def _jittered_time(nominal: float, sigma: float, lo: float, hi: float,
                   rng: PortableRng) -> float:
    """Nominal time plus Gaussian jitter, kept inside the open (lo, hi)."""
    for _ in range(_MAX_REDRAWS):
        g1, _ = rng.gauss_pair()
        t = nominal + sigma * g1
        if lo < t < hi:
            return t
    t = (lo + hi) / 2.0
    if not lo < t < hi:
        t = math.nextafter(lo, math.inf)
    return t


def draw_sigma(cfg: NoiseConfig, rng: PortableRng) -> float:
    if cfg.sigma_mode == "fixed":
        return cfg.sigma
    return cfg.low + (cfg.high - cfg.low) * rng.uniform()


def distort_events(events: Sequence[CursorEvent], cfg: NoiseConfig,
                   rng: PortableRng) -> list[CursorEvent]:
    """Insert synthetic events after each genuine mousemove.

    The per-sequence radius is drawn first (uniform mode consumes one
    draw), then gaps are processed in order.  A radius of exactly zero
    disables insertion and returns the input unchanged.
    """
    sigma = draw_sigma(cfg, rng)
    if sigma == 0.0:
        return list(events)

    k = cfg.events_per_gap
    out: list[CursorEvent] = []
    n = len(events)
    prev_gap = _TAIL_GAP_DEFAULT
    for i, ev in enumerate(events):
        out.append(ev)
        if ev.name != "mousemove":
            continue
        if i + 1 < n:
            gap = events[i + 1].t - ev.t
            upper = events[i + 1].t
            prev_gap = gap
        else:
            gap = prev_gap
            upper = ev.t + gap
        last_t = ev.t
        for j in range(k):
            nx, ny = _positive_position(ev.x, ev.y, sigma, cfg.distribution, rng)
            nominal = ev.t + gap * (j + 1) / (k + 1)
            nt = _jittered_time(nominal, sigma, last_t, upper, rng)
            if nt <= 0.0:
                nt = math.nextafter(last_t, math.inf)
            out.append(CursorEvent(x=nx, y=ny, t=nt, name="mousemove", target_path=None))
            last_t = nt
    return out


def distort_session(session: Session, cfg: NoiseConfig, stream_seed: int) -> Session:
    rng = PortableRng(stream_seed)
    return replace(session, events=tuple(distort_events(session.events, cfg, rng)))


def distort_dataset(dataset: Dataset, cfg: NoiseConfig,
                    subset: str = "all") -> Dataset:
    """Cloak every session (or only the train/test partition) of a dataset.

    Each session gets an independent substream keyed by its position, so
    the result is deterministic for a given config seed and invariant to
    processing order.  The split structure carries over unchanged.
    """
    if subset not in ("all", "train", "test"):
        raise ValueError("subset must be 'all', 'train', or 'test'")
    chosen: set[int] = set(range(len(dataset.sessions)))
    if subset == "train":
        chosen = set(dataset.train_idx)
    elif subset == "test":
        chosen = set(dataset.test_idx)
    out = []
    for i, s in enumerate(dataset.sessions):
        if i in chosen:
            out.append(distort_session(s, cfg, substream_seed(cfg.seed, "noise", i)))
        else:
            out.append(s)
    return dataset.with_sessions(out)


# ---------------------------------------------------------------------------
# golden fixtures for the browser companion


def export_goldens(path: str | Path, n_fixtures: int = 50, seed: int = 2024) -> dict:
    """Write cross-implementation fixtures covering both modes and laws.

    Each fixture records the portable-RNG stream seed, the full config, the
    input events, and the distorted output; an independent implementation
    must reproduce the output within 1e-6.
    """
    from .rng import PortableRng as _R

    meta_rng = _R(seed)
    fixtures = []
    for i in range(n_fixtures):
        n_events = 3 + int(meta_rng.uniform() * 8)
        t = 0.0
        events = []
        for j in range(n_events):
            x = 1.0 + meta_rng.uniform() * 1200.0
            y = 1.0 + meta_rng.uniform() * 700.0
            name = "mousemove" if meta_rng.uniform() < 0.85 or j == 0 else "click"
            events.append(CursorEvent(x=x, y=y, t=t, name=name))
            t += 60.0 + meta_rng.uniform() * 400.0
        cfg = NoiseConfig(
            sigma_mode="fixed" if i % 2 == 0 else "uniform",
            sigma=0.05 + meta_rng.uniform() * 2.0,
            low=0.0,
            high=0.25 + meta_rng.uniform() * 1.5,
            events_per_gap=1 + (i % 3),
            distribution="gaussian_radius" if i % 4 < 2 else "uniform_radius",
            seed=seed,
        )
        stream_seed = meta_rng.next_u64()
        out = distort_events(events, cfg, _R(stream_seed))
        fixtures.append({
            "stream_seed": str(stream_seed),
            "config": {
                "sigma_mode": cfg.sigma_mode, "sigma": cfg.sigma,
                "low": cfg.low, "high": cfg.high,
                "events_per_gap": cfg.events_per_gap,
                "distribution": cfg.distribution,
            },
            "input": [[e.x, e.y, e.t, e.name] for e in events],
            "output": [[e.x, e.y, e.t, e.name] for e in out],
        })
    payload = {"version": 1, "fixtures": fixtures}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return payload
