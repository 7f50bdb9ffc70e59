"""Seeded synthetic data so the full pipeline runs without private meter data.

Loads follow a residential double-peak daily shape around each node's
nominal demand, scaled so the typical-day system peak lands near 2.2-2.3 MW
on the bundled 33-node feeder.  Wind is an AR(1) latent process pushed
through a Gaussian CDF onto [0, rated] kW, which gives the persistence a
first-order Markov chain can pick up.
"""

from __future__ import annotations

import math

import numpy as np
import pandas as pd

from .case33 import NOMINAL_LOADS_KW

__all__ = ["generate_load_history", "generate_wind_series",
           "write_loads_csv", "write_wind_csv"]

# relative demand per hour 1..24 (evening peak at hour 19)
HOURLY_SHAPE = np.array([
    0.42, 0.38, 0.36, 0.35, 0.36, 0.40,
    0.50, 0.62, 0.68, 0.66, 0.64, 0.62,
    0.63, 0.62, 0.64, 0.68, 0.78, 0.92,
    1.00, 0.98, 0.92, 0.80, 0.64, 0.50,
])

DEFAULT_SCALE = 0.62   # calibrates the mean-day system peak to paper scale


def generate_load_history(
    days: int,
    seed: int,
    base_kw: dict[int, float] | None = None,
    scale: float = DEFAULT_SCALE,
    day_sigma: float = 0.08,
    hour_sigma: float = 0.12,
) -> pd.DataFrame:
    """Hourly kW records (node_id, day, hour, kw) for ``days`` days."""
    if days < 1:
        raise ValueError("need at least one day")
    if base_kw is None:
        base_kw = {node: p for node, (p, _) in NOMINAL_LOADS_KW.items()}
    rng = np.random.default_rng(seed)
    nodes = sorted(base_kw)
    records = []
    for day in range(1, days + 1):
        day_factor = rng.lognormal(mean=0.0, sigma=day_sigma, size=len(nodes))
        noise = rng.lognormal(mean=0.0, sigma=hour_sigma, size=(len(nodes), 24))
        for k, node in enumerate(nodes):
            kw = base_kw[node] * scale * day_factor[k] * HOURLY_SHAPE * noise[k]
            for hour in range(1, 25):
                records.append((node, day, hour, float(kw[hour - 1])))
    return pd.DataFrame(records, columns=["node_id", "day", "hour", "kw"])


def generate_wind_series(
    hours: int,
    seed: int,
    rated_kw: float = 1000.0,
    persistence: float = 0.85,
    shape: float = 1.4,
) -> np.ndarray:
    """Autocorrelated hourly wind power in [0, rated_kw]."""
    if hours < 1:
        raise ValueError("need at least one hour")
    rng = np.random.default_rng(seed)
    innov_sd = math.sqrt(1.0 - persistence ** 2)
    z = np.empty(hours)
    z[0] = rng.standard_normal()
    eps = rng.standard_normal(hours - 1) * innov_sd
    for t in range(1, hours):
        z[t] = persistence * z[t - 1] + eps[t - 1]
    u = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
    power = rated_kw * u ** shape
    return np.clip(power, 0.0, rated_kw)


def write_loads_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format="%.6f")


def write_wind_csv(series: np.ndarray, path, start="2026-01-01") -> None:
    stamps = pd.date_range(start=start, periods=len(series), freq="h")
    pd.DataFrame({"timestamp": stamps, "power_kw": np.round(series, 6)}).to_csv(
        path, index=False
    )
