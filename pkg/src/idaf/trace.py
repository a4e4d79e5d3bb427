"""JSONL event trace of configuration activity."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

EVENTS = frozenset({
    "join_planned", "join_committed", "join_failed", "reserved", "released",
    "left", "failed", "frozen", "promoted",
})


def _plain(x):
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    if isinstance(x, float) and x.is_integer():
        return int(x)
    return x


class Trace:
    """Ordered trace records ``{ts, ida, event, node, details}``."""

    def __init__(self) -> None:
        self.records: list = []

    def emit(self, ts: float, ida: Optional[str], event: str, node: str, **details) -> dict:
        if event not in EVENTS:
            raise ValueError(f"unknown trace event {event!r}")
        rec = {"ts": _plain(ts), "ida": ida, "event": event, "node": node,
               "details": {k: _plain(v) for k, v in details.items()}}
        self.records.append(rec)
        return rec

    def of(self, event: str) -> list:
        return [r for r in self.records if r["event"] == event]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")
