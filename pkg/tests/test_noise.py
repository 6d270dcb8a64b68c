"""Event-insertion cloaking: invariants, determinism, golden export."""

import json
import math

import pytest

from cursorlab.noise import (
    NoiseConfig,
    distort_dataset,
    distort_events,
    distort_session,
    export_goldens,
)
from cursorlab.rng import PortableRng, substream_seed
from cursorlab.sessions import CursorEvent, Session, split_dataset
from cursorlab.synth import SynthConfig, generate


def make_events(n_moves=10, spacing=150.0, x0=300.0, y0=200.0):
    return [CursorEvent(x0 + 40.0 * i, y0 + 25.0 * i, spacing * i + 1.0)
            for i in range(n_moves)]


def split_output(inputs, out):
    """Partition a distorted stream into (genuine, synthetic-with-source)."""
    ptr = 0
    genuine, synthetic = [], []
    last = None
    for e in out:
        if ptr < len(inputs) and e == inputs[ptr]:
            genuine.append(e)
            last = e
            ptr += 1
        else:
            synthetic.append((e, last))
    assert ptr == len(inputs), "a genuine event was dropped or altered"
    return genuine, synthetic


def test_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(sigma_mode="poisson")
    with pytest.raises(ValueError):
        NoiseConfig(distribution="cauchy")
    with pytest.raises(ValueError):
        NoiseConfig(sigma_mode="fixed", sigma=-0.1)
    with pytest.raises(ValueError):
        NoiseConfig(low=0.5, high=0.2)
    with pytest.raises(ValueError):
        NoiseConfig(events_per_gap=0)


def test_zero_sigma_is_identity():
    events = make_events(6)
    out = distort_events(events, NoiseConfig(sigma_mode="fixed", sigma=0.0), PortableRng(1))
    assert out == events
    out2 = distort_events(events, NoiseConfig(sigma_mode="uniform", low=0.0, high=0.0),
                          PortableRng(1))
    assert out2 == events


def test_insertion_count_per_gap():
    events = make_events(7)
    events.insert(3, CursorEvent(500, 500, events[2].t + 10.0, name="click"))
    events.insert(0, CursorEvent(300, 200, 0.0, name="load"))
    n_moves = sum(1 for e in events if e.name == "mousemove")
    for k in (1, 2, 3):
        cfg = NoiseConfig(sigma_mode="fixed", sigma=0.5, events_per_gap=k, seed=3)
        out = distort_events(events, cfg, PortableRng(9))
        assert len(out) == len(events) + k * n_moves
        assert sum(1 for e in out if e.name != "mousemove") == 2


def test_invariants_hold_across_random_draws():
    events = make_events(12)
    for i in range(300):
        mode = "fixed" if i % 2 == 0 else "uniform"
        sigma = 0.05 + (i % 17) * 0.15
        cfg = NoiseConfig(sigma_mode=mode, sigma=sigma, low=0.0, high=sigma,
                          events_per_gap=1 + i % 3,
                          distribution="gaussian_radius" if i % 4 < 2 else "uniform_radius")
        out = distort_events(events, cfg, PortableRng(i))
        ts = [e.t for e in out]
        assert all(b > a for a, b in zip(ts, ts[1:])), f"trial {i}: time order broken"
        assert all(e.x > 0 and e.y > 0 and e.t > 0 for e in out)
        _, synthetic = split_output(events, out)
        for e, src in synthetic:
            assert src is not None
            d = math.hypot(e.x - src.x, e.y - src.y)
            assert d <= sigma + 1e-9, f"trial {i}: displacement {d} over radius {sigma}"


def test_synthetic_times_sit_inside_their_gap():
    events = make_events(5, spacing=200.0)
    cfg = NoiseConfig(sigma_mode="fixed", sigma=1.0, seed=0)
    out = distort_events(events, cfg, PortableRng(4))
    _, synthetic = split_output(events, out)
    bounds = {e.t: (e.t, e.t + 200.0) for e in events[:-1]}
    # trailing move reuses the previous gap length
    bounds[events[-1].t] = (events[-1].t, events[-1].t + 200.0)
    for e, src in synthetic:
        lo, hi = bounds[src.t]
        assert lo < e.t < hi


def test_lone_move_uses_the_default_tail_gap():
    events = [CursorEvent(100.0, 100.0, 50.0)]
    cfg = NoiseConfig(sigma_mode="fixed", sigma=0.3)
    out = distort_events(events, cfg, PortableRng(2))
    assert len(out) == 2
    assert 50.0 < out[1].t < 350.0


def test_distortion_is_deterministic():
    events = make_events(9)
    cfg = NoiseConfig(sigma_mode="uniform", low=0.1, high=0.9, seed=6)
    a = distort_events(events, cfg, PortableRng(77))
    b = distort_events(events, cfg, PortableRng(77))
    assert a == b
    c = distort_events(events, cfg, PortableRng(78))
    assert a != c


def test_uniform_mode_varies_radius_per_sequence():
    events = make_events(40)
    cfg = NoiseConfig(sigma_mode="uniform", low=0.0, high=2.0, seed=0)
    maxima = []
    for stream in range(12):
        out = distort_events(events, cfg, PortableRng(stream))
        _, synthetic = split_output(events, out)
        maxima.append(max(math.hypot(e.x - s.x, e.y - s.y) for e, s in synthetic))
    assert max(maxima) > 2 * min(maxima)
    assert max(maxima) <= 2.0 + 1e-9


def test_dataset_subsets_and_order_invariance():
    ds = generate(SynthConfig(n_sessions=10, seed=1))
    ds, _ = split_dataset(ds.sessions, test_fraction=0.3, seed=1)
    cfg = NoiseConfig(sigma_mode="fixed", sigma=0.4, seed=5)

    test_only = distort_dataset(ds, cfg, subset="test")
    for i, s in enumerate(test_only.sessions):
        if i in ds.test_idx:
            assert len(s.events) > len(ds.sessions[i].events)
        else:
            assert s == ds.sessions[i]
    assert test_only.train_idx == ds.train_idx and test_only.test_idx == ds.test_idx

    both = distort_dataset(ds, cfg, subset="all")
    again = distort_dataset(ds, cfg, subset="all")
    assert both.sessions == again.sessions
    # session i is keyed by its index, independent of the rest of the batch
    solo = distort_session(ds.sessions[4], cfg, substream_seed(5, "noise", 4))
    assert both.sessions[4] == solo

    with pytest.raises(ValueError):
        distort_dataset(ds, cfg, subset="validation")


def test_horizon_halving_on_fixed_windows():
    from cursorlab.sessions import to_sequence

    moves = make_events(100)
    s = Session(id="w", query="", viewport_w=1280, viewport_h=800, events=tuple(moves))
    d = distort_session(s, NoiseConfig(sigma_mode="fixed", sigma=0.5, seed=8),
                        stream_seed=123)
    arr, k = to_sequence(d, max_len=100)
    assert k == 100
    genuine_xs = {e.x for e in moves}
    n_genuine = sum(1 for v in arr[:, 0] if float(v) in genuine_xs)
    assert n_genuine == 50


def test_export_goldens_round_trip(tmp_path):
    path = tmp_path / "goldens.json"
    payload = export_goldens(path, n_fixtures=12, seed=31)
    on_disk = json.loads(path.read_text())
    assert on_disk == payload
    assert payload["version"] == 1
    assert len(payload["fixtures"]) == 12

    modes = {f["config"]["sigma_mode"] for f in payload["fixtures"]}
    laws = {f["config"]["distribution"] for f in payload["fixtures"]}
    ks = {f["config"]["events_per_gap"] for f in payload["fixtures"]}
    assert modes == {"fixed", "uniform"}
    assert laws == {"gaussian_radius", "uniform_radius"}
    assert ks == {1, 2, 3}

    for f in payload["fixtures"]:
        events = [CursorEvent(x, y, t, name) for x, y, t, name in f["input"]]
        cfg = NoiseConfig(seed=31, **f["config"])
        out = distort_events(events, cfg, PortableRng(int(f["stream_seed"])))
        assert [[e.x, e.y, e.t, e.name] for e in out] == f["output"]
