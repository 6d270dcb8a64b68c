"""Session data model and ingestion.

A session is one recorded page visit: cursor events plus the visitor's
self-reported demographics.  Everything downstream (features, sequence
tensors, classifiers) consumes the types defined here.

Canonical interchange format is JSON Lines, one session per line:

    {"id": str, "query": str, "gender": "male"|"female"|null,
     "age": int|null, "vw": int, "vh": int,
     "events": [[x, y, t, name?, path?], ...]}

``name`` defaults to "mousemove" and ``path`` to null when omitted.  Files
ending in ``.gz`` are transparently (de)compressed.
"""

from __future__ import annotations

import gzip
import io
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .rng import substream

EVENT_NAMES = ("mousemove", "click", "scroll", "load", "other")
GENDERS = ("male", "female", "undisclosed")
AGE_GROUPS = ("young", "adult", "undisclosed")

# Class encodings used by every classifier in the toolkit.  The positive
# class (1) is the majority group of each task.
POSITIVE_CLASS = {"gender": "male", "age": "young"}
NEGATIVE_CLASS = {"gender": "female", "age": "adult"}

DEFAULT_VIEWPORT = (1280, 800)


@dataclass(frozen=True)
class CursorEvent:
    """One logged cursor event, timestamp in ms relative to session start."""

    x: float
    y: float
    t: float
    name: str = "mousemove"
    target_path: str | None = None


@dataclass(frozen=True)
class Demographics:
    gender: str = "undisclosed"
    age: int | None = None

    @property
    def age_group(self) -> str:
        if self.age is not None and 18 <= self.age <= 35:
            return "young"
        if self.age is not None and 36 <= self.age <= 66:
            return "adult"
        return "undisclosed"

    def group(self, target: str) -> str:
        if target == "gender":
            return self.gender
        if target == "age":
            return self.age_group
        raise ValueError(f"unknown target {target!r}")


@dataclass(frozen=True)
class Session:
    id: str
    query: str
    viewport_w: int
    viewport_h: int
    events: tuple[CursorEvent, ...]
    demographics: Demographics = field(default_factory=Demographics)

    @property
    def coordinate_count(self) -> int:
        """Number of mousemove events (the trajectory length)."""
        return sum(1 for e in self.events if e.name == "mousemove")

    def label(self, target: str) -> int | None:
        """Binary class for ``target``, None when the group is undisclosed."""
        g = self.demographics.group(target)
        if g == POSITIVE_CLASS[target]:
            return 1
        if g == NEGATIVE_CLASS[target]:
            return 0
        return None

    def moves(self) -> list[CursorEvent]:
        return [e for e in self.events if e.name == "mousemove"]


@dataclass(frozen=True)
class Dataset:
    """An immutable collection of sessions with an optional train/test split."""

    sessions: tuple[Session, ...]
    train_idx: tuple[int, ...] = ()
    test_idx: tuple[int, ...] = ()
    seed: int | None = None

    @property
    def train(self) -> tuple[Session, ...]:
        return tuple(self.sessions[i] for i in self.train_idx)

    @property
    def test(self) -> tuple[Session, ...]:
        return tuple(self.sessions[i] for i in self.test_idx)

    def labels(self, target: str) -> np.ndarray:
        out = [s.label(target) for s in self.sessions]
        if any(v is None for v in out):
            raise ValueError(f"dataset contains sessions with undisclosed {target}")
        return np.asarray(out, dtype=np.int64)

    def with_sessions(self, sessions: Sequence[Session]) -> "Dataset":
        """Same split structure, new session objects (index-aligned)."""
        if len(sessions) != len(self.sessions):
            raise ValueError("session count mismatch")
        return replace(self, sessions=tuple(sessions))


@dataclass(frozen=True)
class SequenceTensor:
    """Fixed-length trajectory tensors: shape (n, max_len, 3) of (x, y, t)."""

    data: np.ndarray
    lengths: np.ndarray
    ids: tuple[str, ...]

    @property
    def max_len(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Diagnostic:
    """One non-fatal ingestion or processing anomaly."""

    kind: str
    detail: str
    line: int | None = None
    session_id: str | None = None

    def __str__(self) -> str:
        loc = f" line {self.line}" if self.line is not None else ""
        sid = f" [{self.session_id}]" if self.session_id else ""
        return f"{self.kind}{loc}{sid}: {self.detail}"


# ---------------------------------------------------------------------------
# parsing


def _open_maybe_gz(path: str | Path, mode: str) -> IO:
    p = Path(path)
    if p.suffix == ".gz":
        return gzip.open(p, mode + "t", encoding="utf-8")
    return open(p, mode, encoding="utf-8")


def _canonical_gender(value) -> tuple[str, bool]:
    """Map an input gender value to the canonical vocabulary.

    Returns (gender, was_missing).
    """
    if value is None or value == "":
        return "undisclosed", True
    v = str(value).strip().lower()
    if v in ("male", "m"):
        return "male", False
    if v in ("female", "f"):
        return "female", False
    if v in ("undisclosed", "na", "n/a", "none", "unknown", "x"):
        return "undisclosed", False
    return "undisclosed", True


def _canonical_event_name(value) -> str:
    v = str(value).strip().lower()
    if v in EVENT_NAMES:
        return v
    if v in ("move", "mousemove", "mmove", "mouseover"):
        return "mousemove"
    if v in ("click", "mousedown", "mouseup", "dblclick"):
        return "click"
    if v in ("scroll", "wheel", "mousewheel"):
        return "scroll"
    if v in ("load", "pageload", "ready"):
        return "load"
    return "other"


def _canonicalize_times(events: list[CursorEvent]) -> list[CursorEvent]:
    """Sort by time, rebase to offsets from the first event, break ties.

    Equal timestamps are nudged by the smallest representable increment so
    the strict monotonicity invariant holds while order is preserved.
    """
    events = sorted(events, key=lambda e: e.t)
    if not events:
        return events
    t0 = events[0].t
    out: list[CursorEvent] = []
    prev = -math.inf
    for e in events:
        t = e.t - t0
        if t <= prev:
            t = math.nextafter(prev, math.inf)
        out.append(replace(e, t=t))
        prev = t
    return out


def _session_from_record(rec: dict, line: int, diags: list[Diagnostic]) -> Session:
    sid = str(rec["id"])
    raw_events = rec["events"]
    if not isinstance(raw_events, list) or not raw_events:
        raise ValueError("events must be a non-empty list")

    events: list[CursorEvent] = []
    for ev in raw_events:
        if not isinstance(ev, (list, tuple)) or len(ev) < 3:
            raise ValueError(f"event must be [x, y, t, ...], got {ev!r}")
        x, y, t = float(ev[0]), float(ev[1]), float(ev[2])
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(t)):
            raise ValueError(f"non-finite event values {ev!r}")
        if x < 0 or y < 0 or t < 0:
            raise ValueError(f"negative event values {ev!r}")
        name = _canonical_event_name(ev[3]) if len(ev) > 3 and ev[3] is not None else "mousemove"
        path = str(ev[4]) if len(ev) > 4 and ev[4] is not None else None
        events.append(CursorEvent(x=x, y=y, t=t, name=name, target_path=path))

    gender, missing = _canonical_gender(rec.get("gender"))
    if missing:
        diags.append(Diagnostic("missing_gender", "gender absent, recorded as undisclosed",
                                line=line, session_id=sid))
    age = rec.get("age")
    age = int(age) if age is not None else None

    vw, vh = rec.get("vw"), rec.get("vh")
    if not (isinstance(vw, (int, float)) and vw and vw > 0 and
            isinstance(vh, (int, float)) and vh and vh > 0):
        diags.append(Diagnostic("missing_viewport", "viewport absent or invalid, using default",
                                line=line, session_id=sid))
        vw, vh = DEFAULT_VIEWPORT

    return Session(
        id=sid,
        query=str(rec.get("query", "")),
        viewport_w=int(vw),
        viewport_h=int(vh),
        events=tuple(_canonicalize_times(events)),
        demographics=Demographics(gender=gender, age=age),
    )


def parse_sessions(source, fmt: str = "canonical_jsonl") -> tuple[list[Session], list[Diagnostic]]:
    """Parse sessions from a path, stream, or iterable of lines.

    Malformed records are reported as diagnostics and skipped; the call only
    raises for unusable inputs (unknown format, unreadable source).
    """
    if fmt == "canonical_jsonl":
        return _parse_canonical(source)
    if fmt == "attentive_cursor_raw":
        return _parse_raw_logs(source)
    raise ValueError(f"unknown format {fmt!r}")


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with _open_maybe_gz(source, "r") as fh:
            yield from fh
    elif hasattr(source, "read"):
        yield from source
    else:
        yield from iter(source)


def _parse_canonical(source) -> tuple[list[Session], list[Diagnostic]]:
    sessions: list[Session] = []
    diags: list[Diagnostic] = []
    seen_ids: set[str] = set()
    for lineno, raw in enumerate(_iter_lines(source), start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            rec = json.loads(raw)
            if not isinstance(rec, dict) or "id" not in rec or "events" not in rec:
                raise ValueError("record must be an object with id and events")
            s = _session_from_record(rec, lineno, diags)
        except (ValueError, TypeError, KeyError, json.JSONDecodeError) as exc:
            diags.append(Diagnostic("malformed_record", str(exc), line=lineno))
            continue
        if s.id in seen_ids:
            diags.append(Diagnostic("duplicate_id", "session id seen before, kept both",
                                    line=lineno, session_id=s.id))
        seen_ids.add(s.id)
        sessions.append(s)
    return sessions, diags


def serialize_sessions(sessions: Iterable[Session], dest=None) -> str | None:
    """Write sessions as canonical JSONL; returns the text when dest is None."""
    buf = io.StringIO()
    for s in sessions:
        events = []
        for e in s.events:
            row: list = [e.x, e.y, e.t]
            if e.name != "mousemove" or e.target_path is not None:
                row.append(e.name)
            if e.target_path is not None:
                row.append(e.target_path)
            events.append(row)
        rec = {
            "id": s.id,
            "query": s.query,
            "gender": None if s.demographics.gender == "undisclosed" else s.demographics.gender,
            "age": s.demographics.age,
            "vw": s.viewport_w,
            "vh": s.viewport_h,
            "events": events,
        }
        buf.write(json.dumps(rec, separators=(",", ":")))
        buf.write("\n")
    text = buf.getvalue()
    if dest is None:
        return text
    if isinstance(dest, (str, Path)):
        with _open_maybe_gz(dest, "w") as fh:
            fh.write(text)
    else:
        dest.write(text)
    return None


# ---------------------------------------------------------------------------
# best-effort importer for raw study exports
#
# Layout assumptions (lenient, every miss produces a diagnostic):
#   * a directory holding one metadata table (csv/tsv, headers including an
#     id column plus any of: query/task, gender/sex, age, screen/viewport
#     width and height) and one log file per session named by id, or
#   * log rows of the shape "timestamp x y event xpath" in any column order
#     announced by a header, else that positional order.
# Negative coordinates are clamped to zero, unparseable rows skipped.

_META_ID_KEYS = ("id", "uid", "user", "user_id", "session", "session_id", "participant")
_META_FIELDS = {
    "query": ("query", "task", "serp_query", "search_query"),
    "gender": ("gender", "sex"),
    "age": ("age", "age_years"),
    "vw": ("vw", "viewport_width", "screen_width", "window_width", "width"),
    "vh": ("vh", "viewport_height", "screen_height", "window_height", "height"),
}


def _sniff_delim(line: str) -> str:
    for d in ("\t", ",", ";"):
        if d in line:
            return d
    return " "


def _parse_table(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    delim = _sniff_delim(lines[0])
    split = (lambda ln: re.split(r"\s+", ln.strip())) if delim == " " else (
        lambda ln: [c.strip() for c in ln.split(delim)])
    header = [h.strip().lower() for h in split(lines[0])]
    rows = []
    for ln in lines[1:]:
        cells = split(ln)
        rows.append({header[i]: cells[i] for i in range(min(len(header), len(cells)))})
    return rows


def _lookup(row: dict, keys: tuple[str, ...]):
    for k in keys:
        if k in row and row[k] != "":
            return row[k]
    return None


def _parse_log_events(text: str, sid: str, diags: list[Diagnostic]) -> list[CursorEvent]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    delim = _sniff_delim(lines[0])
    split = (lambda ln: re.split(r"\s+", ln.strip())) if delim == " " else (
        lambda ln: [c.strip() for c in ln.split(delim)])

    first = [c.lower() for c in split(lines[0])]
    cols = {"t": 0, "x": 1, "y": 2, "event": 3, "path": 4}
    body = lines
    if any(h in first for h in ("timestamp", "xpos", "ypos", "event", "x", "y")):
        for i, h in enumerate(first):
            if h in ("timestamp", "time", "t"):
                cols["t"] = i
            elif h in ("xpos", "x"):
                cols["x"] = i
            elif h in ("ypos", "y"):
                cols["y"] = i
            elif h == "event":
                cols["event"] = i
            elif h in ("xpath", "path", "target"):
                cols["path"] = i
        body = lines[1:]

    events: list[CursorEvent] = []
    for ln in body:
        cells = split(ln)
        try:
            t = float(cells[cols["t"]])
            x = float(cells[cols["x"]])
            y = float(cells[cols["y"]])
        except (ValueError, IndexError):
            diags.append(Diagnostic("bad_log_row", f"unparseable row {ln[:80]!r}", session_id=sid))
            continue
        if x < 0 or y < 0:
            diags.append(Diagnostic("clamped_coordinate", f"negative coordinate in {ln[:60]!r}",
                                    session_id=sid))
            x, y = max(x, 0.0), max(y, 0.0)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(t)) or t < 0:
            diags.append(Diagnostic("bad_log_row", f"non-finite or negative time {ln[:60]!r}",
                                    session_id=sid))
            continue
        name = "mousemove"
        if cols["event"] < len(cells):
            name = _canonical_event_name(cells[cols["event"]])
        path = cells[cols["path"]] if cols["path"] < len(cells) else None
        events.append(CursorEvent(x=x, y=y, t=t, name=name, target_path=path or None))
    return events


def _parse_raw_logs(source) -> tuple[list[Session], list[Diagnostic]]:
    root = Path(source)
    diags: list[Diagnostic] = []
    if not root.exists():
        raise FileNotFoundError(f"raw dataset path {root} does not exist")
    if root.is_file():
        # single-file export: treat as canonical-ish JSONL with lenient keys
        return _parse_canonical(root)

    meta_rows: list[dict] = []
    meta_file = None
    for cand in sorted(root.rglob("*")):
        if cand.suffix.lower() in (".csv", ".tsv", ".txt") and cand.is_file():
            rows = _parse_table(cand.read_text(encoding="utf-8", errors="replace"))
            if rows and any(k in rows[0] for k in _META_ID_KEYS):
                meta_rows, meta_file = rows, cand
                break
    if not meta_rows:
        raise ValueError(f"no metadata table with an id column found under {root}")

    log_index: dict[str, Path] = {}
    for cand in root.rglob("*"):
        if cand.is_file() and cand != meta_file:
            log_index.setdefault(cand.stem, cand)

    sessions: list[Session] = []
    for row in meta_rows:
        sid = str(_lookup(row, _META_ID_KEYS))
        log = log_index.get(sid)
        if log is None:
            diags.append(Diagnostic("missing_log", "no log file for session", session_id=sid))
            continue
        events = _parse_log_events(log.read_text(encoding="utf-8", errors="replace"), sid, diags)
        if not events:
            diags.append(Diagnostic("empty_log", "log holds no usable events", session_id=sid))
            continue
        gender, missing = _canonical_gender(_lookup(row, _META_FIELDS["gender"]))
        if missing:
            diags.append(Diagnostic("missing_gender", "gender absent, recorded as undisclosed",
                                    session_id=sid))
        age_raw = _lookup(row, _META_FIELDS["age"])
        try:
            age = int(float(age_raw)) if age_raw is not None else None
        except ValueError:
            age = None
            diags.append(Diagnostic("bad_age", f"unparseable age {age_raw!r}", session_id=sid))
        try:
            vw = int(float(_lookup(row, _META_FIELDS["vw"])))
            vh = int(float(_lookup(row, _META_FIELDS["vh"])))
            if vw <= 0 or vh <= 0:
                raise ValueError
        except (TypeError, ValueError):
            vw, vh = DEFAULT_VIEWPORT
            diags.append(Diagnostic("missing_viewport", "viewport absent or invalid, using default",
                                    session_id=sid))
        sessions.append(Session(
            id=sid,
            query=str(_lookup(row, _META_FIELDS["query"]) or ""),
            viewport_w=vw,
            viewport_h=vh,
            events=tuple(_canonicalize_times(events)),
            demographics=Demographics(gender=gender, age=age),
        ))
    return sessions, diags


# ---------------------------------------------------------------------------
# filtering, splitting, tensor conversion


def filter_sessions(
    sessions: Sequence[Session],
    target: str | None = None,
    min_coords: int = 10,
) -> tuple[list[Session], dict[str, int]]:
    """Drop sessions unusable for modelling.

    Removes sessions with fewer than ``min_coords`` mousemove events and,
    when ``target`` is given, sessions whose label for that task is
    undisclosed.  Returns the survivors plus removal counts per reason.
    """
    kept: list[Session] = []
    removed = {"too_few_coordinates": 0, "undisclosed_label": 0}
    for s in sessions:
        if s.coordinate_count < min_coords:
            removed["too_few_coordinates"] += 1
            continue
        if target is not None and s.label(target) is None:
            removed["undisclosed_label"] += 1
            continue
        kept.append(s)
    return kept, removed


def split_dataset(
    sessions: Sequence[Session],
    test_fraction: float = 0.10,
    seed: int = 0,
    stratify_by: str | None = None,
) -> tuple[Dataset, list[Diagnostic]]:
    """Shuffle and split sessions into train/test partitions.

    With ``stratify_by`` ("gender" or "age") the split preserves group
    proportions; groups with fewer than two members trigger a diagnostic and
    an unstratified fallback.
    """
    n = len(sessions)
    if n < 2:
        raise ValueError("need at least two sessions to split")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = substream(seed, "split")
    n_test = max(1, int(n * test_fraction + 0.5))
    diags: list[Diagnostic] = []

    groups: dict[str, list[int]] = {}
    if stratify_by is not None:
        for i, s in enumerate(sessions):
            groups.setdefault(s.demographics.group(stratify_by), []).append(i)
        if any(len(idx) < 2 for idx in groups.values()):
            small = [g for g, idx in groups.items() if len(idx) < 2]
            diags.append(Diagnostic(
                "stratification_fallback",
                f"groups {small} have fewer than two members, splitting unstratified"))
            groups = {}

    if groups:
        # largest-remainder allocation of test slots across groups
        ideals = {g: len(idx) * test_fraction for g, idx in groups.items()}
        counts = {g: int(v) for g, v in ideals.items()}
        shortfall = n_test - sum(counts.values())
        order = sorted(groups, key=lambda g: (-(ideals[g] - counts[g]), -len(groups[g]), g))
        for g in order[:max(shortfall, 0)]:
            counts[g] += 1
        test_idx: list[int] = []
        for g in sorted(groups):
            idx = np.array(groups[g])
            rng.shuffle(idx)
            test_idx.extend(idx[:counts[g]].tolist())
    else:
        perm = rng.permutation(n)
        test_idx = perm[:n_test].tolist()

    test_set = set(test_idx)
    train_idx = [i for i in range(n) if i not in test_set]
    ds = Dataset(
        sessions=tuple(sessions),
        train_idx=tuple(sorted(train_idx)),
        test_idx=tuple(sorted(test_idx)),
        seed=seed,
    )
    return ds, diags


def to_sequence(session: Session, max_len: int = 100) -> tuple[np.ndarray, int]:
    """Fixed-length (max_len, 3) trajectory tensor of (x, y, t) rows.

    Uses mousemove events only, truncated to the first ``max_len``, zero
    padded past the true length.
    """
    moves = session.moves()
    if not moves:
        raise ValueError(f"session {session.id} has no mousemove events")
    k = min(len(moves), max_len)
    out = np.zeros((max_len, 3), dtype=np.float64)
    for i, e in enumerate(moves[:k]):
        out[i, 0] = e.x
        out[i, 1] = e.y
        out[i, 2] = e.t
    return out, k


def to_sequences(sessions: Sequence[Session], max_len: int = 100) -> SequenceTensor:
    data = np.zeros((len(sessions), max_len, 3), dtype=np.float64)
    lengths = np.zeros(len(sessions), dtype=np.int64)
    for i, s in enumerate(sessions):
        data[i], lengths[i] = to_sequence(s, max_len)
    return SequenceTensor(data=data, lengths=lengths, ids=tuple(s.id for s in sessions))
