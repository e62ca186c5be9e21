"""Synthetic multi-weather-model wind power scenarios.

A latent AR(1) wind path drives the true power through a logistic power
curve.  Every weather model sees the wind at the target time through its own
bias and noise; the noise grows with lead time (plus an emulated run age for
lagged day-ahead runs) and may depend on the wind level, so models differ
globally, per lead and per weather situation.  Five nuisance inputs are
correlated with the wind or follow their own slow processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import DAY_AHEAD, INTRADAY, DataSet, DomainError, LeadGrid, make_block

START_EPOCH = 1420070400  # 2015-01-01T00:00:00Z
FEATURE_NAMES = ("wind_100m", "wind_10m", "wind_u_100m", "wind_v_100m", "pressure", "temperature")


@dataclass(frozen=True)
class WeatherModelSpec:
    label: str
    noise: float = 0.05
    bias: float = 0.0
    growth: float = 0.0
    lag: int = 0
    wind_dependence: float = 0.0

    def __post_init__(self):
        if self.noise < 0 or self.growth < 0 or self.lag < 0:
            raise DomainError(f"{self.label}: noise, growth and lag must be >= 0")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    weather_models: tuple[WeatherModelSpec, ...]
    seed: int = 0
    n_origins: int = 1000
    grid: LeadGrid = DAY_AHEAD
    origin_stride: int = 24
    rho: float = 0.98
    innovation: float = 0.035
    mean_wind: float = 0.5
    shared_noise: float = 0.0
    cut_in: float = 0.3
    rated: float = 0.75
    feature_dims: int = 6
    forecasters: tuple[str, ...] = ("linear_regression", "knn_regressor")

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise DomainError("rho must lie in (0, 1)")
        if self.innovation < 0 or self.shared_noise < 0:
            raise DomainError("noise scales must be >= 0")
        if not 1 <= self.feature_dims <= len(FEATURE_NAMES):
            raise DomainError(f"feature_dims must be within 1..{len(FEATURE_NAMES)}")
        if self.n_origins < 1 or self.origin_stride < 1:
            raise DomainError("n_origins and origin_stride must be >= 1")
        if not 0 <= self.cut_in < self.rated <= 1:
            raise DomainError("need 0 <= cut_in < rated <= 1")

    def with_(self, **kw) -> "ScenarioSpec":
        return replace(self, **kw)


def power_curve(wind, cut_in: float, rated: float) -> np.ndarray:
    """Logistic power curve rescaled to map [0, 1] wind onto [0, 1] power."""
    center = 0.5 * (cut_in + rated)
    width = (rated - cut_in) / 8.0
    s = lambda x: 1.0 / (1.0 + np.exp(-(x - center) / width))
    lo, hi = s(0.0), s(1.0)
    return np.clip((s(np.asarray(wind, dtype=float)) - lo) / (hi - lo), 0.0, 1.0)


def ar1(n, rho, scale, rng, burn_in=500) -> np.ndarray:
    shocks = rng.standard_normal(n + burn_in) * scale
    x = np.empty(n + burn_in)
    x[0] = shocks[0] / np.sqrt(1 - rho * rho)
    for t in range(1, n + burn_in):
        x[t] = rho * x[t - 1] + shocks[t]
    return x[burn_in:]


@dataclass
class Latent:
    times: np.ndarray
    wind: np.ndarray
    power: np.ndarray
    direction: np.ndarray
    pressure: np.ndarray


def latent_path(spec: ScenarioSpec, rng) -> Latent:
    n = (spec.n_origins - 1) * spec.origin_stride + spec.grid.k_max + 1
    wind = np.clip(spec.mean_wind + ar1(n, spec.rho, spec.innovation, rng), 0.0, 1.0)
    direction = ar1(n, 0.99, 0.1, rng)
    pressure = ar1(n, 0.995, 0.1 * np.sqrt(1 - 0.995 ** 2), rng)
    times = START_EPOCH + np.arange(n, dtype=np.int64) * spec.grid.delta
    return Latent(times, wind, power_curve(wind, spec.cut_in, spec.rated), direction, pressure)


def _features(spec: ScenarioSpec, wm: WeatherModelSpec, latent: Latent, step, lead, shared, rng):
    u = latent.wind[step]
    scale = wm.noise * (1.0 + wm.growth * (lead + wm.lag))
    scale = scale * np.clip(1.0 + wm.wind_dependence * (u - 0.5), 0.0, None)
    noise = rng.standard_normal((len(step), 6))
    wind = np.clip(u + wm.bias + shared + scale * noise[:, 0], 0.0, 1.0)
    hours = (latent.times[step] - START_EPOCH) / 3600.0
    cols = [
        wind,
        np.clip(0.8 * wind + 0.05 + 0.03 * noise[:, 1], 0.0, 1.0),
        np.clip(0.5 + 0.45 * wind * np.cos(latent.direction[step]) + 0.03 * noise[:, 2], 0.0, 1.0),
        np.clip(0.5 + 0.45 * wind * np.sin(latent.direction[step]) + 0.03 * noise[:, 3], 0.0, 1.0),
        np.clip(0.5 + 0.3 * latent.pressure[step] + 0.02 * noise[:, 4], 0.0, 1.0),
        np.clip(0.5 + 0.3 * np.sin(2 * np.pi * hours / 8766.0) + 0.1 * np.sin(2 * np.pi * hours / 24.0)
                + 0.03 * noise[:, 5], 0.0, 1.0),
    ]
    return np.stack(cols[:spec.feature_dims], axis=1)


def generate(spec: ScenarioSpec) -> DataSet:
    """Deterministic dataset for ``spec`` (one block per weather model)."""
    rng = np.random.default_rng(spec.seed)
    latent = latent_path(spec, rng)
    leads = spec.grid.leads
    origin_step = np.repeat(np.arange(spec.n_origins) * spec.origin_stride, len(leads))
    lead = np.tile(leads, spec.n_origins)
    step = origin_step + lead
    shared = spec.shared_noise * rng.standard_normal(len(step))
    blocks = []
    for wm in spec.weather_models:
        feats = _features(spec, wm, latent, step, lead, shared, rng)
        blocks.append(make_block(latent.times[origin_step], lead, feats, latent.power[step]))
    return attach_recent_power(DataSet(blocks, spec.grid, [wm.label for wm in spec.weather_models]))


def attach_recent_power(data: DataSet) -> DataSet:
    """Set each row's origin power from observations whose target time equals the origin."""
    times, values = [], []
    for b in data.blocks:
        t = b.origin + b.lead * data.grid.delta
        times.append(t[b.observed])
        values.append(b.observation[b.observed])
    times = np.concatenate(times)
    values = np.concatenate(values)
    order = np.argsort(times, kind="stable")
    times, values = times[order], values[order]
    first = np.ones(len(times), dtype=bool)
    first[1:] = times[1:] != times[:-1]
    times, values = times[first], values[first]
    blocks = []
    for b in data.blocks:
        if len(times) == 0:
            hit, recent = np.zeros(len(b), dtype=bool), np.zeros(len(b))
        else:
            pos = np.minimum(np.searchsorted(times, b.origin), len(times) - 1)
            hit = times[pos] == b.origin
            recent = np.where(hit, values[pos], 0.0)
        blocks.append(replace(b, recent=recent, recent_known=hit))
    return data.with_blocks(blocks)


def scenario_catalog() -> dict[str, ScenarioSpec]:
    """The four named scenarios, each with a fixed seed."""
    return {
        "single-model": ScenarioSpec(
            "single-model",
            (WeatherModelSpec("nwp", noise=0.08, growth=0.01),),
            seed=11, n_origins=1500, grid=DAY_AHEAD, origin_stride=24,
            forecasters=("linear_regression", "knn_regressor", "persistence"),
        ),
        "mme-day-ahead": ScenarioSpec(
            "mme-day-ahead",
            (
                WeatherModelSpec("wm1", noise=0.07, growth=0.012, wind_dependence=-1.0),
                WeatherModelSpec("wm2", noise=0.10, growth=0.004, wind_dependence=1.0),
                WeatherModelSpec("wm3", noise=0.09, bias=0.03, growth=0.010),
            ),
            seed=21, n_origins=5000, grid=DAY_AHEAD, origin_stride=24, shared_noise=0.02,
        ),
        "intraday-lagged": ScenarioSpec(
            "intraday-lagged",
            (
                WeatherModelSpec("wm1", noise=0.07, growth=0.01, lag=24),
                WeatherModelSpec("wm2", noise=0.09, growth=0.01, lag=24),
                WeatherModelSpec("wm3", noise=0.10, growth=0.01, lag=24),
                WeatherModelSpec("intraday", noise=0.03, growth=0.12),
            ),
            seed=31, n_origins=3000, grid=INTRADAY, origin_stride=6, shared_noise=0.01,
            forecasters=("linear_regression", "knn_regressor", "persistence"),
        ),
        "model-count-sweep": ScenarioSpec(
            "model-count-sweep",
            (
                WeatherModelSpec("wm1", noise=0.08, growth=0.008),
                WeatherModelSpec("wm2", noise=0.10, growth=0.008),
                WeatherModelSpec("wm3-weak", noise=0.30, growth=0.008),
            ),
            seed=41, n_origins=3000, grid=DAY_AHEAD, origin_stride=24, shared_noise=0.02,
        ),
    }
