"""Sampled trajectories and their file formats."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np


class EventKind(IntEnum):
    MoranUp = 0
    MoranDown = 1
    ReinfectUp = 2
    ReinfectDown = 3
    ReplaceTo1 = 4
    ReplaceTo0 = 5
    MutateAtoB = 6
    MutateBtoA = 7


N_KINDS = len(EventKind)
MORAN_KINDS = (EventKind.MoranUp, EventKind.MoranDown)


@dataclass(frozen=True)
class EventRecord:
    time: float
    host: int
    kind: EventKind
    source_host: Optional[int] = None

    def to_json(self) -> str:
        return json.dumps(
            {"t": self.time, "host": self.host, "kind": self.kind.name, "src": self.source_host}
        )


@dataclass
class Trajectory:
    """Observations of a host population on a time grid.

    ``weights`` has one row per sample with columns ``z0, zeta, z1, ztrans``.
    ``event_counts[n, kind]`` counts events in ``(times[n-1], times[n]]``;
    a column filled with -1 means the simulator did not track that kind.
    """

    times: np.ndarray
    weights: np.ndarray
    event_counts: np.ndarray
    terminal: np.ndarray
    seed: Optional[int] = None
    snapshots: Optional[np.ndarray] = None
    events: Optional[list[EventRecord]] = None
    absorbed_at: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sums = self.weights.sum(axis=1)
        if self.weights.size and np.max(np.abs(sums - 1.0)) > 1e-12:
            raise ValueError("class masses do not sum to one")

    @property
    def z0(self) -> np.ndarray:
        return self.weights[:, 0]

    @property
    def zeta(self) -> np.ndarray:
        return self.weights[:, 1]

    @property
    def z1(self) -> np.ndarray:
        return self.weights[:, 2]

    @property
    def ztrans(self) -> np.ndarray:
        return self.weights[:, 3]

    def total_counts(self) -> dict[str, int]:
        """Totals per event kind; limit-process trajectories name their own columns."""
        names = self.meta.get("count_names") or [k.name for k in EventKind]
        tot = self.event_counts.sum(axis=0)
        out = {}
        for c, name in enumerate(names):
            col = self.event_counts[:, c]
            out[name] = -1 if np.any(col < 0) else int(tot[c])
        return out

    def to_csv(self, path=None, header: Optional[dict] = None) -> str:
        buf = io.StringIO()
        write_header(buf, header)
        buf.write("t,z0,zeta,z1,ztrans\n")
        for t, w in zip(self.times, self.weights):
            buf.write(f"{t:.10g},{w[0]:.12g},{w[1]:.12g},{w[2]:.12g},{w[3]:.12g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def events_to_jsonl(self, path) -> None:
        if self.events is None:
            raise ValueError("trajectory was simulated without an event log")
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(ev.to_json() + "\n")

    def snapshot_to_csv(self, path, index: int = -1) -> None:
        state = self.terminal if self.snapshots is None else self.snapshots[index]
        with open(path, "w") as fh:
            fh.write("host,k\n")
            for i, k in enumerate(state):
                fh.write(f"{i},{int(k)}\n")


def write_header(buf, header: Optional[dict]) -> None:
    if not header:
        return
    for key in sorted(header):
        buf.write(f"# {key}: {json.dumps(header[key], sort_keys=True)}\n")


def read_trajectory_csv(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Parse a trajectory CSV back into ``(header, times, weights)``."""
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                header[key] = json.loads(value)
            elif line.startswith("t,"):
                continue
            elif line.strip():
                rows.append([float(v) for v in line.split(",")])
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return header, arr[:, 0], arr[:, 1:]


def time_grid(t_end: float, sample_dt: float) -> np.ndarray:
    if t_end <= 0 or sample_dt <= 0:
        raise ValueError("t_end and sample_dt must be positive")
    n = int(np.floor(t_end / sample_dt + 1e-9))
    grid = sample_dt * np.arange(n + 1)
    if grid[-1] < t_end - 1e-12 * max(1.0, t_end):
        grid = np.append(grid, t_end)
    return grid
