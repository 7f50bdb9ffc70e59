"""Smart-meter load histories and typical day-ahead demand patterns.

The optimizer never sees raw meter data: each node's schedule-day demand is
the trailing-window average of that node's hourly loads, and reactive
demand follows from the node's constant power factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .grid import GridSpec

__all__ = [
    "LoadDataError",
    "LoadHistory",
    "DayProfileSet",
    "ingest_csv",
    "typical_pattern",
]

HOURS = 24


class LoadDataError(ValueError):
    pass


@dataclass(frozen=True)
class LoadHistory:
    """Hourly load records; frame columns are node, day, hour (1..24), kw."""

    frame: pd.DataFrame

    @property
    def n_records(self) -> int:
        return len(self.frame)

    def days(self) -> list[int]:
        return sorted(self.frame["day"].unique())

    def nodes(self) -> list[int]:
        return sorted(self.frame["node"].unique())


@dataclass(frozen=True)
class DayProfileSet:
    """Typical active/reactive demand per node and hour, in p.u. (N x 24)."""

    p_pu: np.ndarray
    q_pu: np.ndarray

    def __post_init__(self):
        if self.p_pu.shape != self.q_pu.shape or self.p_pu.shape[1] != HOURS:
            raise LoadDataError("profiles must be N x 24")
        if not (np.all(np.isfinite(self.p_pu)) and np.all(np.isfinite(self.q_pu))):
            raise LoadDataError("profiles must be finite")
        if np.any(self.p_pu < 0) or np.any(self.q_pu < 0):
            raise LoadDataError("profiles must be nonnegative")

    @property
    def n_nodes(self) -> int:
        return self.p_pu.shape[0]

    def to_json(self, path) -> None:
        """Reproducibility export of the pattern actually optimized on."""
        payload = {
            "p_pu": [[float(v) for v in row] for row in self.p_pu],
            "q_pu": [[float(v) for v in row] for row in self.q_pu],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def from_json(path) -> "DayProfileSet":
        with open(path) as fh:
            raw = json.load(fh)
        return DayProfileSet(
            p_pu=np.array(raw["p_pu"], dtype=float),
            q_pu=np.array(raw["q_pu"], dtype=float),
        )


def ingest_csv(path) -> LoadHistory:
    """Read and validate a node_id,day,hour,kw load history file."""
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise LoadDataError(f"{path}: no records") from exc
    expected = {"node_id", "day", "hour", "kw"}
    if not expected.issubset(df.columns):
        raise LoadDataError(f"{path}: expected columns {sorted(expected)}")
    if len(df) == 0:
        raise LoadDataError(f"{path}: no records")
    df = df.rename(columns={"node_id": "node"})
    try:
        df = df.astype({"node": int, "day": int, "hour": int, "kw": float})
    except (ValueError, TypeError) as exc:
        raise LoadDataError(f"{path}: malformed values: {exc}") from exc
    if df["kw"].isna().any() or (df["kw"] < 0).any():
        raise LoadDataError(f"{path}: negative or missing power value")
    if not df["hour"].between(1, HOURS).all():
        raise LoadDataError(f"{path}: hour must be in 1..24")
    dup = df.duplicated(subset=["node", "day", "hour"])
    if dup.any():
        row = df[dup].iloc[0]
        raise LoadDataError(
            f"{path}: duplicate record for node {row['node']}, day {row['day']}, hour {row['hour']}"
        )
    return LoadHistory(frame=df[["node", "day", "hour", "kw"]].reset_index(drop=True))


def typical_pattern(
    history: LoadHistory,
    window_days: int,
    spec: GridSpec,
    end_day: int | None = None,
) -> DayProfileSet:
    """Average each node's hour-h load over the trailing window, in p.u.

    ``end_day`` selects the last history day included (defaults to the most
    recent); the window covers the ``window_days`` most recent day indices
    up to it.  Every (node, hour) needs at least one observation.
    """
    if window_days < 1:
        raise LoadDataError("window must cover at least one day")
    df = history.frame
    days = sorted(d for d in df["day"].unique() if end_day is None or d <= end_day)
    if not days:
        raise LoadDataError("history has no days in the requested window")
    window = days[-window_days:]
    sub = df[df["day"].isin(window)]

    kw_base = spec.kw_base()
    n = spec.n_nodes
    p = np.zeros((n, HOURS))
    means = sub.groupby(["node", "hour"])["kw"].mean()
    for node in spec.nodes:
        if node.is_substation:
            continue
        for hour in range(1, HOURS + 1):
            key = (node.id, hour)
            if key not in means.index:
                raise LoadDataError(
                    f"node {node.id} hour {hour}: no observation in window"
                )
            p[node.id - 1, hour - 1] = means[key] / kw_base

    tan_phi = np.array(
        [math.tan(math.acos(nd.power_factor)) for nd in spec.nodes]
    )
    q = p * tan_phi[:, None]
    return DayProfileSet(p_pu=p, q_pu=q)


def day_profile(history: LoadHistory, day: int, spec: GridSpec) -> DayProfileSet:
    """Single-day actual profile (used when replaying a schedule)."""
    if day not in set(history.frame["day"].unique()):
        raise LoadDataError(f"day {day} not present in history")
    return typical_pattern(history, window_days=1, spec=spec, end_day=day)
