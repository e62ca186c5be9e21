import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from csge.core import DAY_AHEAD
from csge.io import (
    COLUMNS, TRACE_COLUMNS, Bundle, BundleError, FormatError, MinMaxNormalizer, bundle_bytes,
    bundle_from_bytes, config_from_dict, emit_weight_trace, format_time, ingest, load_bundle, load_config,
    parse_time, save_bundle, save_config, trace_rows, write_weather_file,
)
from csge.synth import generate, scenario_catalog
from csge.training import build_model

from conftest import small_run

HEADER = ",".join(COLUMNS)


def write_csv(path, rows, header=HEADER):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))
    return path


def row(target, lead, power, x=0.5):
    return f"{target},{lead}," + ",".join([str(x)] * 6) + f",{power}"


def test_ingest_three_rows(tmp_path):
    p = write_csv(tmp_path / "a.csv", [row("2020-01-02T00:00:00Z", 24, 0.3),
                                       row("2020-01-02T01:00:00Z", 25, 0.4),
                                       row("2020-01-03T00:00:00Z", 24, "")])
    data, (report,) = ingest([p], DAY_AHEAD)
    recs = data.records
    assert len(recs) == 3 and report.dropped == 0
    assert recs[0].origin == parse_time("2020-01-01T00:00:00Z") and recs[0].lead == 24
    assert recs[2].observation is None
    assert data.labels == ("a",)


def test_ingest_drops_out_of_range_power(tmp_path):
    p = write_csv(tmp_path / "a.csv", [row("2020-01-02T00:00:00Z", 24, 0.3),
                                       row("2020-01-02T01:00:00Z", 25, -5),
                                       row("2020-01-02T02:00:00Z", 26, 1.04)])
    data, (report,) = ingest([p], DAY_AHEAD)
    assert len(data) == 2
    assert report.dropped_range == 1 and report.dropped == 1
    assert max(r.observation for r in data.records) == 1.0          # 1.04 clipped


def test_ingest_counts_other_drops(tmp_path):
    p = write_csv(tmp_path / "a.csv", [row("2020-01-02T00:00:00Z", 24, 0.3),
                                       row("2020-01-02T00:00:00Z", 24, 0.3),
                                       row("not a time", 24, 0.3),
                                       row("2020-01-02T00:00:00Z", 3, 0.3)])
    _, (report,) = ingest([p], DAY_AHEAD)
    assert (report.rows, report.dropped_duplicate, report.dropped_parse, report.dropped_grid) == (1, 1, 1, 1)


def test_ingest_nominal_capacity(tmp_path):
    p = write_csv(tmp_path / "a.csv", [row("2020-01-02T00:00:00Z", 24, 1500)])
    data, _ = ingest([p], DAY_AHEAD, nominal_capacity=3000)
    assert data.records[0].observation == pytest.approx(0.5)


def test_two_files_align_on_shared_origin(tmp_path):
    a = write_csv(tmp_path / "a.csv", [row("2020-01-02T00:00:00Z", 24, 0.3, x=0.1),
                                       row("2020-01-05T00:00:00Z", 24, 0.6, x=0.1)])
    b = write_csv(tmp_path / "b.csv", [row("2020-01-02T00:00:00Z", 24, 0.3, x=0.9)])
    data, _ = ingest([a, b], DAY_AHEAD)
    panel = data.panel()
    shared = parse_time("2020-01-01T00:00:00Z")
    i = int(np.flatnonzero(panel.origin == shared)[0])
    assert panel.available[i].tolist() == [True, True]
    assert panel.features[0][i, 0] == 0.1 and panel.features[1][i, 0] == 0.9
    j = int(np.flatnonzero(panel.origin != shared)[0])
    assert panel.available[j].tolist() == [True, False]


def test_ingest_errors_carry_context(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest([tmp_path / "missing.csv"], DAY_AHEAD)
    bad = write_csv(tmp_path / "h.csv", [], header="timestamp,lead_hours,power")
    with pytest.raises(FormatError, match=r"h\.csv:1: header has 3 columns"):
        ingest([bad], DAY_AHEAD)
    bad = write_csv(tmp_path / "n.csv", [], header="timestamp,1.5," + ",".join(COLUMNS[2:]))
    with pytest.raises(FormatError, match=r"n\.csv:1:2"):
        ingest([bad], DAY_AHEAD)
    bad = write_csv(tmp_path / "r.csv", [row("2020-01-02T00:00:00Z", 24, 0.3), "1,2,3"])
    with pytest.raises(FormatError, match=r"r\.csv:3: 3 columns"):
        ingest([bad], DAY_AHEAD)


def test_ingest_is_idempotent_and_round_trips_synth(tmp_path):
    data = generate(scenario_catalog()["mme-day-ahead"].with_(n_origins=20))
    paths = []
    for psi in range(1, data.weather_models + 1):
        paths.append(tmp_path / f"{data.labels[psi - 1]}.csv")
        write_weather_file(data, psi, paths[-1])
    a, _ = ingest(paths, DAY_AHEAD)
    b, _ = ingest(paths, DAY_AHEAD)
    assert a == b
    assert a == data


@given(st.integers(0, 2**31))
def test_normalizer_round_trip(seed):
    r = np.random.default_rng(seed)
    data = generate(scenario_catalog()["single-model"].with_(n_origins=5, seed=seed % 1000))
    norm = MinMaxNormalizer.fit(data)
    X = data.blocks[0].features
    Z = norm.normalize(0, X)
    assert Z.min() >= 0 and Z.max() <= 1
    assert np.allclose(norm.denormalize(0, Z), X, atol=1e-12)
    inside = norm.lo[0] + r.uniform(size=X.shape) * (norm.hi[0] - norm.lo[0])
    assert np.allclose(norm.denormalize(0, norm.normalize(0, inside)), inside, atol=1e-12)


def test_normalizer_clips_unseen_range():
    data = generate(scenario_catalog()["single-model"].with_(n_origins=10))
    norm = MinMaxNormalizer.fit(data, data.origins()[:3])
    Z = norm.apply(data).blocks[0].features
    assert Z.min() >= 0 and Z.max() <= 1


def test_time_round_trip():
    assert format_time(parse_time("2021-03-04T05:06:07Z")) == "2021-03-04T05:06:07Z"
    assert parse_time("2021-03-04T05:06:07") == parse_time("2021-03-04T06:06:07+01:00")


def test_config_round_trip(tmp_path):
    cfg = config_from_dict({
        "weather_models": [{"label": "a", "path": "a.csv"}, {"label": "b", "path": "b.csv"}],
        "forecasters": [["linear_regression"], ["linear_regression", "knn_regressor"]],
        "grid": {"k_min": 1, "k_max": 4, "delta": 3600},
        "train": {"zeta": 0.01, "neighbor_count": 7},
        "split": {"seed": 4},
    }, tmp_path)
    assert cfg.paths == [tmp_path / "a.csv", tmp_path / "b.csv"]
    assert cfg.train.neighbor_count == 7 and cfg.split.seed == 4
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg
    with pytest.raises(ValueError, match="unknown"):
        config_from_dict({"weather_models": [], "forecasters": [], "bogus": 1}, tmp_path)


def test_bundle_round_trip_is_bit_exact(tmp_path, mme_small):
    data, model, _, prepared = mme_small
    b = Bundle(model, MinMaxNormalizer.fit(data), data.labels, prepared.split.test, {"seed": 0})
    save_bundle(b, tmp_path / "m.csge")
    loaded = load_bundle(tmp_path / "m.csge")
    probes = prepared.test_panel.take(np.arange(100))
    before, wb = model.predict(probes)
    after, wa = loaded.model.predict(probes)
    assert before.tobytes() == after.tobytes() and wb.tobytes() == wa.tobytes()
    assert bundle_bytes(loaded) == bundle_bytes(b)


def test_bundle_member_count(mme_small):
    _, model, _, _ = mme_small
    loaded = bundle_from_bytes(bundle_bytes(Bundle(model)))
    states = [f for row in loaded.model.forecasters for f in row if f is not None]
    assert len(loaded.model.forecasters) == 3 and len(states) == 6


def test_bundle_truncation_and_version(mme_small):
    raw = bundle_bytes(Bundle(mme_small[1]))
    for cut in (4, 30, len(raw) - 1):
        with pytest.raises(BundleError, match="truncated"):
            bundle_from_bytes(raw[:cut])
    bumped = raw[:8] + (99).to_bytes(4, "little") + raw[12:]
    with pytest.raises(BundleError, match="version 99 found, expected 1"):
        bundle_from_bytes(bumped)
    with pytest.raises(BundleError, match="magic"):
        bundle_from_bytes(b"X" * len(raw))


def test_trace_single_prediction_three_members(mme_small):
    data, _, report, prepared = mme_small
    linear = np.array([[k == "linear_regression" for k in row] for row in prepared.kinds])
    model = build_model(prepared, report.eta, linear)
    one = prepared.test_panel.take(np.arange(1))
    _, diag = model.predict(one, diagnostics=True)
    rows = trace_rows(one, diag, model.state.members, data.labels, model.kinds)
    assert rows[0] == list(TRACE_COLUMNS)
    assert len(rows) - 1 == 3
    assert {r[5] for r in rows[1:]} == {"linear_regression"}


def test_trace_weights_sum_per_group(tmp_path, mme_small):
    data, model, _, prepared = mme_small
    panel = prepared.test_panel.take(np.arange(50))
    _, diag = model.predict(panel, diagnostics=True)
    emit_weight_trace(panel, diag, model.state.members, tmp_path / "t.csv", data.labels, model.kinds)
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    sums = {}
    for r in rows:
        key = (r["origin"], r["lead"])
        sums[key] = sums.get(key, 0.0) + float(r["weight"])
        assert float(r["raw"]) == pytest.approx(
            float(r["g_wx"]) * float(r["l_wx"]) * float(r["k_wx"])
            * float(r["g_pow"]) * float(r["l_pow"]) * float(r["k_pow"]), rel=1e-12)
    assert len(sums) == 50
    assert all(abs(s - 1) < 1e-9 for s in sums.values())


def test_trace_persistence_strong_at_short_leads():
    _, model, _, prepared = small_run("intraday-lagged", 600)
    _, w = model.predict(prepared.test_panel)
    p = np.array([[k == "persistence" for k in row] for row in model.kinds])
    share = w[:, p].sum(axis=1)
    lead = prepared.test_panel.lead
    assert share[lead == 1].mean() > share[lead == 24].mean()


def test_column_mapping_reads_by_name(tmp_path):
    names = {"timestamp": "valid_time", "power": "P_norm", "wind_speed_100m": "ws100"}
    header = ["P_norm", "extra"] + [names.get(c, c) for c in COLUMNS if c != "power"]
    cells = {"P_norm": "0.25", "extra": "x", "valid_time": "2020-01-02T00:00:00Z", "lead_hours": "24",
             "ws100": "0.7"}
    line = ",".join(cells.get(h, "0.5") for h in header)
    p = write_csv(tmp_path / "m.csv", [line], header=",".join(header))
    with pytest.raises(FormatError, match="header has 10 columns"):
        ingest([p], DAY_AHEAD)
    data, _ = ingest([p], DAY_AHEAD, columns=names)
    rec = data.records[0]
    assert rec.observation == 0.25 and rec.features[0] == 0.7 and rec.lead == 24
    with pytest.raises(FormatError, match="no header cell 'P_norm'"):
        ingest([write_csv(tmp_path / "n.csv", [], header=HEADER)], DAY_AHEAD, columns={"power": "P_norm"})
