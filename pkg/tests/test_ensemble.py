import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from csge import forecasters as fc
from csge.core import DAY_AHEAD, DomainError, ForecastRecord, LeadGrid, MemberId
from csge.ensemble import (
    CSGEModel, MemberForecast, NoMembersAvailable, combine, fuse, member_weight_raw, normalize_weights,
    predict_csge,
)
from csge.neighbors import Standardizer
from csge.weighting import EtaVector, HistoricStore, WeightState

GRID = LeadGrid(1, 3, 3600)


def make_state(R, eta, q_err=None, lead_ratio=None, X=None):
    R = np.asarray(R, dtype=float)
    psi, phi = R.shape
    X = np.linspace(0, 1, 20).reshape(-1, 1) if X is None else X
    q_err = np.ones((len(X), phi)) if q_err is None else q_err
    stores = [HistoricStore.build(X, q_err, Standardizer.fit(X), 5) for _ in range(psi)]
    r = np.ones((psi, phi, GRID.n_leads)) if lead_ratio is None else lead_ratio
    return WeightState(GRID, np.ones((psi, phi), dtype=bool), R, r, stores, eta)


def test_member_weight_raw_product_examples():
    # with two equal-score competitors every factor is 0.5
    state = make_state([[0.2, 0.2], [0.2, 0.2]], EtaVector())
    assert member_weight_raw(state, MemberId(1, 2), 2, np.ones((2, 2))) == pytest.approx((0.125, 0.125))
    state = make_state([[0.1, 0.3, 0.5], [0.2, 0.2, 0.9]], EtaVector.zeros())
    w_wx, w_pow = member_weight_raw(state, MemberId(2, 3), 1, np.random.default_rng(0).uniform(size=(2, 3)))
    assert (w_wx, w_pow) == pytest.approx(((1 / 2) ** 3, (1 / 3) ** 3))
    state = make_state([[0.3]], EtaVector(5, 5, 5, 5, 5, 5))
    assert member_weight_raw(state, MemberId(1, 1), 3, [[0.7]]) == pytest.approx((1.0, 1.0))


def test_member_weight_raw_errors():
    state = make_state([[0.3]], EtaVector())
    with pytest.raises(DomainError):
        member_weight_raw(state, MemberId(1, 1), 9, [[0.7]])
    with pytest.raises(DomainError):
        member_weight_raw(None, MemberId(1, 1), 1, [[0.7]])


def test_normalize_weights_examples():
    assert normalize_weights(np.full((2, 2), 0.3), np.ones((2, 2), bool)) == pytest.approx(np.full((2, 2), 0.25))
    w = normalize_weights(np.array([[0.2, 0.6]]), np.array([[True, False]]))
    assert w.tolist() == [[1.0, 0.0]]
    w = normalize_weights(np.array([[1.0, 2.0, 1.0]]), np.ones((1, 3), bool))
    assert w == pytest.approx(np.array([[0.25, 0.5, 0.25]]))


def test_normalize_weights_degenerate_cases():
    with pytest.raises(NoMembersAvailable):
        normalize_weights(np.ones((1, 2)), np.zeros((1, 2), bool))
    with pytest.warns(RuntimeWarning, match="uniform"):
        w = normalize_weights(np.zeros((1, 3)), np.array([[True, True, False]]))
    assert w.tolist() == [[0.5, 0.5, 0.0]]


def test_combine_examples():
    m = [MemberForecast(MemberId(1, 1), 0.4, 1), MemberForecast(MemberId(1, 2), 0.4, 1)]
    assert combine(m, [0.5, 0.5]) == pytest.approx(0.4)
    m = [MemberForecast(MemberId(1, 1), 0.0, 1), MemberForecast(MemberId(1, 2), 1.0, 1)]
    assert combine(m, [0.25, 0.75]) == pytest.approx(0.75)
    m = [MemberForecast(MemberId(1, 1), 0.37, 1), MemberForecast(MemberId(1, 2), None, 1)]
    assert combine(m, [1.0, 0.0]) == pytest.approx(0.37)
    with pytest.raises(DomainError):
        combine(m, [1.0])


def _linear_state(slope):
    X = np.linspace(0, 1, 20).reshape(-1, 1)
    return fc.fit_arrays("linear_regression", X, slope * X[:, 0])


def test_predict_csge_single_member_equals_base_forecaster():
    f = _linear_state(0.8)
    model = CSGEModel(make_state([[0.2]], EtaVector()), [[f]])
    rec = ForecastRecord(0, 2, 1, (0.5,))
    value, w, _ = predict_csge(model, [rec])
    assert value == pytest.approx(fc.predict(f, rec), abs=1e-15)
    assert w.tolist() == [[1.0]]


def test_predict_csge_identical_members_split_evenly():
    f = _linear_state(0.8)
    model = CSGEModel(make_state([[0.2, 0.2]], EtaVector(3, 3, 3, 3, 3, 3)), [[f, f]])
    value, w, _ = predict_csge(model, [ForecastRecord(0, 2, 1, (0.5,))])
    assert w == pytest.approx(np.array([[0.5, 0.5]]))
    assert value == pytest.approx(0.4)


def test_predict_csge_gates_to_much_better_member():
    good, bad = _linear_state(0.8), _linear_state(0.2)
    state = make_state([[0.02, 0.2]], EtaVector(50, 0, 0, 0, 0, 0))
    model = CSGEModel(state, [[good, bad]])
    rec = ForecastRecord(0, 2, 1, (0.5,))
    value, _, diag = predict_csge(model, [rec])
    assert abs(value - fc.predict(good, rec)) < 1e-3
    assert diag.g_pow.shape == (1, 1, 2)


def test_predict_csge_handles_missing_weather_model_and_none_available():
    f = _linear_state(0.8)
    model = CSGEModel(make_state([[0.2], [0.1]], EtaVector()), [[f], [f]])
    value, w, _ = predict_csge(model, [ForecastRecord(0, 2, 1, (0.5,)), None])
    assert w.tolist() == [[1.0], [0.0]]
    with pytest.raises(NoMembersAvailable):
        predict_csge(model, [None, None])


def test_persistence_without_origin_power_is_renormalized_away():
    p = fc.fit_arrays("persistence", np.zeros((0, 1)), np.zeros(0))
    f = _linear_state(0.8)
    model = CSGEModel(make_state([[0.2, 0.1]], EtaVector()), [[f, p]])
    value, w, _ = predict_csge(model, [ForecastRecord(0, 2, 1, (0.5,), None, None)])
    assert w.tolist() == [[1.0, 0.0]]
    value, w, _ = predict_csge(model, [ForecastRecord(0, 2, 1, (0.5,), None, 0.9)])
    assert w[0, 1] > 0.5


def random_inputs(r, psi, phi, n=6):
    R = r.uniform(0.05, 0.5, size=(psi, phi))
    ratio = r.uniform(0.3, 2.0, size=(psi, phi, GRID.n_leads))
    q = r.uniform(0.01, 0.5, size=(n, psi, phi))
    lead_index = r.integers(0, GRID.n_leads, size=n)
    available = r.uniform(size=(n, psi, phi)) < 0.8
    available[:, 0, 0] = True
    values = r.uniform(size=(n, psi, phi))
    eta = EtaVector(*r.uniform(0, 10, size=6))
    return R, ratio, q, lead_index, available, values, eta


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_fused_weights_normalized_and_convex(psi, phi, seed):
    R, ratio, q, li, av, v, eta = random_inputs(np.random.default_rng(seed), psi, phi)
    out, w = fuse(R, ratio, np.ones((psi, phi), bool), q, li, av, v, eta)
    assert np.allclose(w.sum(axis=(1, 2)), 1.0, atol=1e-9)
    assert np.all(w[~av] == 0)
    lo = np.where(av, v, np.inf).min(axis=(1, 2))
    hi = np.where(av, v, -np.inf).max(axis=(1, 2))
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_relabeling_permutes_weights(psi, phi, seed):
    r = np.random.default_rng(seed)
    R, ratio, q, li, av, v, eta = random_inputs(r, psi, phi)
    members = np.ones((psi, phi), bool)
    out, w = fuse(R, ratio, members, q, li, av, v, eta)
    pa, pb = r.permutation(psi), r.permutation(phi)
    perm = lambda x, lead_axis=False: x[..., pa, :][..., pb] if not lead_axis else x[pa][:, pb]
    out2, w2 = fuse(R[pa][:, pb], perm(ratio, True), members, perm(q), li, perm(av), perm(v), eta)
    assert np.allclose(out, out2, atol=1e-12)
    assert np.allclose(perm(w), w2, atol=1e-12)


def test_full_and_partial_availability_paths_agree(rng):
    R, ratio, q, li, _, v, eta = random_inputs(rng, 3, 2, n=10)
    members = np.ones((3, 2), bool)
    full = np.ones((10, 3, 2), bool)
    a, wa = fuse(R, ratio, members, q, li, full, v, eta)
    # one extra all-unavailable row forces the general path without touching the others
    q2 = np.concatenate([q, q[:1]])
    av2 = np.concatenate([full, np.zeros((1, 3, 2), bool)])
    av2[-1, 0, 0] = True
    b, wb = fuse(R, ratio, members, q2, np.append(li, 0), av2, np.concatenate([v, v[:1]]), eta)
    assert np.allclose(a, b[:-1], atol=1e-12)
    assert np.allclose(wa, wb[:-1], atol=1e-12)


@given(st.integers(2, 6), st.integers(0, 2**31))
def test_dropping_zero_weight_member_changes_nothing(J, seed):
    r = np.random.default_rng(seed)
    raw = r.uniform(0.1, 1.0, size=(1, J))
    raw[0, -1] = 0.0
    av = np.ones((1, J), bool)
    members = [MemberForecast(MemberId(1, j + 1), float(x), 1) for j, x in enumerate(r.uniform(size=J))]
    before = combine(members, normalize_weights(raw, av))
    av[0, -1] = False
    dropped = members[:-1] + [MemberForecast(MemberId(1, J), None, 1)]
    after = combine(dropped, normalize_weights(raw, av))
    assert after == pytest.approx(before, abs=1e-12)
