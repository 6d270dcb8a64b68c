"""Cursor-trajectory analysis toolkit.

Ingests mouse-cursor session logs, trains demographic classifiers on them
(a feature-based random forest and a bidirectional GRU over raw
trajectories), and provides a cloaking transform that inserts bounded
synthetic events to suppress the demographic signal.
"""

__version__ = "0.1.0"

from .sessions import (  # noqa: F401
    CursorEvent,
    Dataset,
    Demographics,
    Diagnostic,
    SequenceTensor,
    Session,
    filter_sessions,
    parse_sessions,
    serialize_sessions,
    split_dataset,
    to_sequence,
    to_sequences,
)
