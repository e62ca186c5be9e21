import numpy as np
import pytest
from hypothesis import given, strategies as st

from csge import forecasters as fc
from csge.core import INTRADAY, LeadGrid
from csge.synth import (
    ScenarioSpec, WeatherModelSpec, ar1, generate, latent_path, power_curve, scenario_catalog,
)

GRID = LeadGrid(1, 12, 3600)


def spec_with(*wms, **kw):
    base = dict(n_origins=200, grid=GRID, origin_stride=6)
    base.update(kw)
    return ScenarioSpec("t", tuple(wms), **base)


def latent_at_rows(spec, block):
    latent = latent_path(spec, np.random.default_rng(spec.seed))
    step = (block.origin - latent.times[0]) // spec.grid.delta + block.lead
    return latent, step


def test_zero_noise_reproduces_latent_wind():
    spec = spec_with(WeatherModelSpec("a", noise=0.0), WeatherModelSpec("b", noise=0.0))
    data = generate(spec)
    for b in data.blocks:
        latent, step = latent_at_rows(spec, b)
        assert np.array_equal(b.features[:, 0], latent.wind[step])
        assert np.array_equal(b.observation, latent.power[step])


def per_lead_feature_rmse(spec, psi=0):
    data = generate(spec)
    b = data.blocks[psi]
    latent, step = latent_at_rows(spec, b)
    err = b.features[:, 0] - latent.wind[step]
    return np.array([np.sqrt(np.mean(err[b.lead == k] ** 2)) for k in spec.grid.leads])


def test_noise_growth_raises_rmse_with_lead():
    spec = spec_with(WeatherModelSpec("a", noise=0.05, growth=0.2), n_origins=1000, mean_wind=0.5,
                     innovation=0.01)
    r = per_lead_feature_rmse(spec)
    assert np.all(np.diff(r) > 0), r


def test_noise_scale_orders_linear_forecaster_rmse():
    spec = spec_with(WeatherModelSpec("a", noise=0.05), WeatherModelSpec("b", noise=0.15), n_origins=600)
    panel = generate(spec).panel()
    half = len(panel) // 2
    scores = []
    for psi in range(2):
        X = panel.features[psi]
        state = fc.fit_arrays("linear_regression", X[:half], panel.observation[:half])
        pred, _ = fc.predict_arrays(state, X[half:], panel.recent[half:], panel.recent_known[half:])
        scores.append(np.sqrt(np.mean((pred - panel.observation[half:]) ** 2)))
    assert scores[0] < scores[1]


def test_catalog():
    cat = scenario_catalog()
    assert sorted(cat) == ["intraday-lagged", "mme-day-ahead", "model-count-sweep", "single-model"]
    assert len(cat["mme-day-ahead"].weather_models) == 3
    assert len(cat["single-model"].weather_models) == 1
    assert "persistence" in cat["single-model"].forecasters
    assert len({s.seed for s in cat.values()}) == 4


def test_intraday_model_wins_at_short_leads():
    spec = scenario_catalog()["intraday-lagged"].with_(n_origins=1500)
    data = generate(spec)
    rmse = {}
    for psi, label in enumerate(data.labels):
        b = data.blocks[psi]
        latent, step = latent_at_rows(spec, b)
        err = b.features[:, 0] - latent.wind[step]
        rmse[label] = [np.sqrt(np.mean(err[b.lead == k] ** 2)) for k in range(1, 5)]
    for k in range(4):
        assert all(rmse["intraday"][k] < rmse[w][k] for w in ("wm1", "wm2", "wm3"))


def test_same_seed_same_data():
    spec = scenario_catalog()["mme-day-ahead"].with_(n_origins=50)
    assert generate(spec) == generate(spec)
    assert generate(spec) != generate(spec.with_(seed=spec.seed + 1))


@given(st.integers(0, 10_000), st.floats(0.0, 0.5), st.floats(-0.3, 0.3))
def test_power_stays_in_unit_interval(seed, noise, bias):
    spec = spec_with(WeatherModelSpec("a", noise=noise, bias=bias), n_origins=30, seed=seed, innovation=0.2)
    data = generate(spec)
    for b in data.blocks:
        assert b.observation.min() >= 0 and b.observation.max() <= 1
        assert np.all(b.recent[b.recent_known] >= 0) and np.all(b.recent[b.recent_known] <= 1)


def test_power_curve_shape():
    w = np.linspace(0, 1, 101)
    p = power_curve(w, 0.3, 0.75)
    assert p[0] == 0.0 and p[-1] == 1.0
    assert np.all(np.diff(p) >= 0)


@pytest.mark.parametrize("rho", [0.9, 0.98])
def test_ar1_lag_one_autocorrelation(rho):
    x = ar1(5000, rho, 1.0, np.random.default_rng(7))
    x = x - x.mean()
    assert abs(float(x[1:] @ x[:-1] / (x @ x)) - rho) < 0.05


def test_latent_wind_autocorrelation_matches_rho():
    spec = scenario_catalog()["mme-day-ahead"]
    latent = latent_path(spec, np.random.default_rng(spec.seed))
    x = latent.wind[:spec.n_origins] - latent.wind[:spec.n_origins].mean()
    assert abs(float(x[1:] @ x[:-1] / (x @ x)) - spec.rho) < 0.05


def test_recent_power_is_power_at_origin():
    spec = scenario_catalog()["intraday-lagged"].with_(n_origins=40)
    data = generate(spec)
    latent = latent_path(spec, np.random.default_rng(spec.seed))
    b = data.blocks[0]
    idx = (b.origin - latent.times[0]) // spec.grid.delta
    known = b.recent_known
    assert known[b.origin > b.origin.min()].all()
    assert np.array_equal(b.recent[known], latent.power[idx[known]])


def test_invalid_specs():
    with pytest.raises(ValueError):
        WeatherModelSpec("a", noise=-1)
    with pytest.raises(ValueError):
        spec_with(WeatherModelSpec("a"), rho=1.0)
