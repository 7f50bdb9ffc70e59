"""First-order homogeneous Markov model of hourly wind power.

States are equal-width bins of [0, rated_kw]; a state's level is the mean
of the samples that fall in its bin (bin midpoint when empty).  State
indices are 0-based throughout the Python API.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

__all__ = [
    "WindModelError",
    "WindMarkovModel",
    "StateProbabilityPath",
    "discretize",
    "estimate_transitions",
    "propagate",
    "read_wind_csv",
]

log = logging.getLogger(__name__)

_ROW_SUM_TOL = 1e-12


class WindModelError(ValueError):
    pass


@dataclass(frozen=True)
class WindMarkovModel:
    state_levels_kw: np.ndarray   # strictly increasing, within [0, rated]
    transition: np.ndarray        # row-stochastic S x S
    rated_kw: float

    def __post_init__(self):
        levels = np.asarray(self.state_levels_kw, dtype=float)
        t = np.asarray(self.transition, dtype=float)
        s = len(levels)
        if s < 2:
            raise WindModelError("need at least two states")
        if t.shape != (s, s):
            raise WindModelError("transition matrix shape does not match state count")
        if np.any(t < -_ROW_SUM_TOL) or np.any(t > 1 + _ROW_SUM_TOL):
            raise WindModelError("transition probabilities must lie in [0,1]")
        if np.max(np.abs(t.sum(axis=1) - 1.0)) > _ROW_SUM_TOL:
            raise WindModelError("transition matrix rows must sum to 1")
        if np.any(np.diff(levels) <= 0):
            raise WindModelError("state levels must be strictly increasing")
        if levels[0] < 0 or levels[-1] > self.rated_kw:
            raise WindModelError("state levels must lie within [0, rated power]")
        object.__setattr__(self, "state_levels_kw", levels)
        object.__setattr__(self, "transition", t)

    @property
    def n_states(self) -> int:
        return len(self.state_levels_kw)

    def to_json(self, path) -> None:
        payload = {
            "levels": [float(x) for x in self.state_levels_kw],
            "matrix": [[float(x) for x in row] for row in self.transition],
            "rated_kw": float(self.rated_kw),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def from_json(path) -> "WindMarkovModel":
        with open(path) as fh:
            raw = json.load(fh)
        return WindMarkovModel(
            state_levels_kw=np.array(raw["levels"], dtype=float),
            transition=np.array(raw["matrix"], dtype=float),
            rated_kw=float(raw["rated_kw"]),
        )


@dataclass(frozen=True)
class StateProbabilityPath:
    """pi[h] for h = 0..H; each row is a probability vector over states."""

    pi: np.ndarray  # (H+1, S)

    def at(self, hour: int) -> np.ndarray:
        return self.pi[hour]

    @property
    def horizon(self) -> int:
        return self.pi.shape[0] - 1


def discretize(series_kw, n_states: int, rated_kw: float):
    """Bin a wind series into equal-width states over [0, rated_kw].

    Returns (levels, state_sequence).  Levels are per-bin sample means with
    midpoint fallback for empty bins; the sequence maps every sample to its
    0-based state.
    """
    series = np.asarray(series_kw, dtype=float)
    if series.size == 0:
        raise WindModelError("empty wind series")
    if n_states < 2:
        raise WindModelError("need at least two states")
    if rated_kw <= 0:
        raise WindModelError("rated power must be positive")
    if np.any(series < 0) or np.any(series > rated_kw):
        raise WindModelError("wind samples must lie within [0, rated power]")

    width = rated_kw / n_states
    states = np.minimum((series / width).astype(int), n_states - 1)
    levels = np.empty(n_states)
    for i in range(n_states):
        mask = states == i
        if mask.any():
            levels[i] = series[mask].mean()
        else:
            levels[i] = (i + 0.5) * width
    # sample means can collide at bin edges only in degenerate data; nudge
    # onto the strictly-increasing grid required by the model
    for i in range(1, n_states):
        if levels[i] <= levels[i - 1]:
            levels[i] = np.nextafter(levels[i - 1], np.inf)
    return levels, states


def estimate_transitions(state_sequence, n_states: int | None = None) -> np.ndarray:
    """Maximum-likelihood transition matrix from an observed state sequence.

    Entry (i, j) is n_ij / sum_j n_ij.  States never left get a self-loop
    row so the matrix stays stochastic.
    """
    seq = np.asarray(state_sequence, dtype=int)
    if seq.size < 2:
        raise WindModelError("need at least two samples to estimate transitions")
    s = int(seq.max()) + 1 if n_states is None else n_states
    if seq.min() < 0 or seq.max() >= s:
        raise WindModelError("state index out of range")
    counts = np.zeros((s, s))
    np.add.at(counts, (seq[:-1], seq[1:]), 1.0)
    row_sums = counts.sum(axis=1)
    t = np.zeros((s, s))
    for i in range(s):
        if row_sums[i] > 0:
            t[i] = counts[i] / row_sums[i]
        else:
            t[i, i] = 1.0
            log.warning("state %d never observed leaving; using self-loop row", i)
    return t


def propagate(model: WindMarkovModel, observed_state: int, hours: int) -> StateProbabilityPath:
    """Push the observed-state indicator through the chain for ``hours`` steps."""
    s = model.n_states
    if not (0 <= observed_state < s):
        raise WindModelError(f"observed state {observed_state} not in 0..{s - 1}")
    if hours < 0:
        raise WindModelError("horizon must be nonnegative")
    pi = np.zeros((hours + 1, s))
    pi[0, observed_state] = 1.0
    tt = model.transition.T
    for h in range(hours):
        pi[h + 1] = tt @ pi[h]
    return StateProbabilityPath(pi=pi)


def read_wind_csv(path) -> np.ndarray:
    """Hourly wind power series (kW) from a timestamp,power_kw CSV."""
    df = pd.read_csv(path)
    if "power_kw" not in df.columns:
        raise WindModelError(f"{path}: expected a power_kw column")
    series = df["power_kw"].to_numpy(dtype=float)
    if len(series) == 0:
        raise WindModelError(f"{path}: no records")
    if np.any(~np.isfinite(series)) or np.any(series < 0):
        raise WindModelError(f"{path}: power values must be finite and nonnegative")
    return series
