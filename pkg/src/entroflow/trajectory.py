"""Time-series container for entropy diagnostics and density snapshots."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrajectoryLog:
    times: list = field(default_factory=list)
    columns: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)  # (t, state copy)
    meta: dict = field(default_factory=dict)

    def record(self, t: float, values: dict, state: np.ndarray | None = None) -> None:
        for v in values.values():
            if not np.isfinite(v):
                raise ValueError(f"non-finite diagnostic value at t={t}")
        if self.times and t <= self.times[-1]:
            raise ValueError("logged times must be strictly increasing")
        self.times.append(float(t))
        for k, v in values.items():
            self.columns.setdefault(k, []).append(float(v))
        if state is not None:
            self.snapshots.append((float(t), np.array(state, copy=True)))

    def t(self) -> np.ndarray:
        return np.asarray(self.times)

    def col(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name])

    def final_state(self) -> np.ndarray:
        if not self.snapshots:
            raise ValueError("no snapshots recorded")
        return self.snapshots[-1][1]

    def write_csv(self, path) -> None:
        names = list(self.columns.keys())
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + names)
            for i, t in enumerate(self.times):
                writer.writerow([repr(t)] + [repr(self.columns[n][i]) for n in names])

    def write_snapshot_csvs(self, directory, coords: np.ndarray | None = None) -> list:
        """One CSV per snapshot time; returns the written paths."""
        import os

        paths = []
        os.makedirs(directory, exist_ok=True)
        for k, (t, state) in enumerate(self.snapshots):
            path = os.path.join(directory, f"snapshot_{k:05d}.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                if coords is not None:
                    dim = coords.shape[1]
                    writer.writerow([f"x{i}" for i in range(dim)] + [f"f_t_{t!r}"])
                    for c, v in zip(coords, np.atleast_2d(state.T).T):
                        row = [repr(float(x)) for x in np.atleast_1d(c)]
                        row += [repr(float(y)) for y in np.atleast_1d(v)]
                        writer.writerow(row)
                else:
                    writer.writerow(["state", f"f_t_{t!r}"])
                    for i, v in enumerate(state):
                        writer.writerow([i, repr(float(v))])
            paths.append(path)
        return paths
