"""Member fusion: combine the six weight factors, normalize, and average.

For member (psi, phi) the raw weight is::

    w_wx[psi] * w_pow[psi, phi],
    w_wx  = global * local * lead-time   (weather-model factors)
    w_pow = global * local * lead-time   (power-model factors within psi)

Raw weights are normalized over the members available for the forecast at
hand.  Every factor is gated over the currently available competing set, so a
missing member or weather model simply drops out of the competition.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import forecasters as fc
from .core import DomainError, ForecastRecord, MemberId, Panel
from .gating import gate_prepared, prepare_scores, soft_gate_all
from .weighting import EtaVector, WeightState, _member_mean

log = logging.getLogger(__name__)


class NoMembersAvailable(RuntimeError):
    pass


@dataclass(frozen=True)
class MemberForecast:
    member: MemberId
    value: float | None
    lead: int

    @property
    def available(self) -> bool:
        return self.value is not None


@dataclass
class Diagnostics:
    """Per-prediction factor breakdown; arrays are (N, Psi) or (N, Psi, Phi)."""

    g_wx: np.ndarray
    l_wx: np.ndarray
    k_wx: np.ndarray
    g_pow: np.ndarray
    l_pow: np.ndarray
    k_pow: np.ndarray
    raw: np.ndarray
    weights: np.ndarray
    available: np.ndarray
    values: np.ndarray | None = None
    ensemble: np.ndarray | None = None


def _gate_pair(scores, eta_pow, eta_wx, mask):
    w_pow = soft_gate_all(scores, eta_pow, axis=-1, mask=mask)
    mean, has = _member_mean(scores, mask)
    w_wx = soft_gate_all(mean, eta_wx, axis=-1, mask=has)
    return w_pow, w_wx


FACTOR_ORDER = ("g_wx", "l_wx", "k_wx", "g_pow", "l_pow", "k_pow")


class FactorCache:
    """Competing sets of N forecasts with per-factor memoization.

    Each of the six factors depends on one exponent only, so a search that
    moves a single exponent recomputes a single factor.
    """

    def __init__(self, global_rmse, lead_ratio, members, q, lead_index, available):
        available = np.asarray(available, dtype=bool) & members
        self.available = available
        self.n = len(lead_index)
        self.lead_index = np.asarray(lead_index)
        # competing sets are identical on every row when nothing is missing:
        # gate once (per lead) and broadcast
        self.full = bool(np.all(available == members))
        mask = members if self.full else available
        if self.full:
            g = np.asarray(global_rmse, dtype=float)
            k = np.moveaxis(lead_ratio, -1, 0)
        else:
            g = np.broadcast_to(global_rmse, available.shape)
            k = np.moveaxis(lead_ratio[:, :, self.lead_index], -1, 0)
        self._scores = {"g": g, "l": np.asarray(q, dtype=float), "k": k}
        self._masks = {"g": mask, "l": available, "k": mask}
        self._prepared = {}
        self._memo = {}

    def _expand(self, aspect, w):
        if not self.full or aspect == "l":
            return w
        if aspect == "k":
            return w[self.lead_index]
        return np.broadcast_to(w, (self.n,) + w.shape)

    def factor(self, name: str, eta: float) -> np.ndarray:
        hit = self._memo.get(name)
        if hit is not None and hit[0] == eta:
            return hit[1]
        aspect, level = name.split("_")
        if name not in self._prepared:
            scores, mask = self._scores[aspect], self._masks[aspect]
            if level == "wx":
                scores, mask = _member_mean(scores, mask)
            self._prepared[name] = prepare_scores(scores, mask)
        w = self._expand(aspect, gate_prepared(*self._prepared[name], eta))
        self._memo[name] = (eta, w)
        return w

    def factors(self, eta: EtaVector):
        return tuple(self.factor(name, getattr(eta, name)) for name in FACTOR_ORDER)

    def _product(self, level: str, eta: EtaVector) -> np.ndarray:
        names = tuple(f"{a}_{level}" for a in "glk")
        key = tuple(getattr(eta, n) for n in names)
        hit = self._memo.get(level)
        if hit is not None and hit[0] == key:
            return hit[1]
        a, b, c = (self.factor(n, v) for n, v in zip(names, key))
        w = a * b * c
        self._memo[level] = (key, w)
        return w

    def ensemble(self, eta: EtaVector, values) -> np.ndarray:
        """Ensemble values only, (N,); same result as :func:`fuse`.

        Gated factors are already zero outside the competing sets, so the
        raw products need no masking before the weighted sum.
        """
        w_wx, w_pow = self._product("wx", eta), self._product("pow", eta)
        raw = w_wx[..., None] * w_pow
        total = raw.sum(axis=(1, 2))
        if np.any(total <= 0):
            return (normalize_weights(raw, self.available) * values).sum(axis=(1, 2))
        return np.einsum("nij,nij->n", raw, values) / total


def weight_factors(global_rmse, lead_ratio, members, q, lead_index, available, eta: EtaVector):
    """All six factors for N forecasts.

    ``q`` is (N, Psi, Phi); ``lead_index`` is (N,); ``available`` is
    (N, Psi, Phi) and is combined with the structural ``members`` mask.
    Returns ``(g_wx, l_wx, k_wx, g_pow, l_pow, k_pow, available)``.
    """
    cache = FactorCache(global_rmse, lead_ratio, members, q, lead_index, available)
    return cache.factors(eta) + (cache.available,)


def raw_products(g_wx, l_wx, k_wx, g_pow, l_pow, k_pow):
    w_wx = g_wx * l_wx * k_wx
    w_pow = g_pow * l_pow * k_pow
    return w_wx, w_pow


def normalize_weights(raw, available) -> np.ndarray:
    """Normalize raw products over available members (last two axes).

    Unavailable members get zero.  A forecast whose available raw products
    are all zero falls back to uniform weights with a warning.
    """
    raw = np.asarray(raw, dtype=float)
    available = np.broadcast_to(np.asarray(available, dtype=bool), raw.shape)
    axes = tuple(range(raw.ndim - 2, raw.ndim)) if raw.ndim >= 2 else (0,)
    count = available.sum(axis=axes, keepdims=True)
    if np.any(count == 0):
        raise NoMembersAvailable("no members available")
    raw = np.where(available, raw, 0.0)
    total = raw.sum(axis=axes, keepdims=True)
    zero = total <= 0
    if np.any(zero):
        warnings.warn("all raw weights are zero for some forecasts; using uniform weights",
                      RuntimeWarning, stacklevel=2)
    uniform = available / count
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(zero, uniform, raw / np.where(zero, 1.0, total))


def combine(forecasts, weights) -> float:
    """Weighted sum of available member forecasts."""
    forecasts = list(forecasts)
    weights = np.asarray(weights, dtype=float).ravel()
    if len(forecasts) != len(weights):
        raise DomainError(f"{len(forecasts)} forecasts but {len(weights)} weights")
    values = np.array([f.value if f.available else 0.0 for f in forecasts], dtype=float)
    return float(values @ weights)


def fuse(global_rmse, lead_ratio, members, q, lead_index, available, values, eta: EtaVector,
         diagnostics: bool = False, cache: FactorCache | None = None):
    """Ensemble values (N,) for member values (N, Psi, Phi); optionally with diagnostics.

    A prebuilt ``cache`` for the same inputs skips recomputing unchanged factors.
    """
    if cache is None:
        cache = FactorCache(global_rmse, lead_ratio, members, q, lead_index, available)
    g_wx, l_wx, k_wx, g_pow, l_pow, k_pow = cache.factors(eta)
    available = cache.available
    w_wx, w_pow = raw_products(g_wx, l_wx, k_wx, g_pow, l_pow, k_pow)
    raw = w_wx[..., None] * w_pow
    weights = normalize_weights(raw, available)
    out = np.einsum("nij,nij->n", weights, np.where(available, values, 0.0))
    if not diagnostics:
        return out, weights
    diag = Diagnostics(g_wx, l_wx, k_wx, g_pow, l_pow, k_pow, raw, weights, available,
                       np.asarray(values), out)
    return out, diag


def member_weight_raw(state: WeightState, member: MemberId, lead: int, local_q) -> tuple[float, float]:
    """The two three-factor products of one member before normalization."""
    if state is None or state.global_rmse is None:
        raise DomainError("weight state is not fitted")
    if not state.grid.contains(lead):
        raise DomainError(f"lead {lead} outside grid")
    psi, phi = member.weather_model - 1, member.power_model - 1
    if not state.members[psi, phi]:
        raise DomainError(f"member {member} does not exist")
    q = np.asarray(local_q, dtype=float).reshape((1,) + state.members.shape)
    factors = weight_factors(state.global_rmse, state.lead_ratio, state.members, q,
                             np.array([state.grid.index(lead)]), state.members[None], state.eta)
    w_wx, w_pow = raw_products(*factors[:6])
    return float(w_wx[0, psi]), float(w_pow[0, psi, phi])


def member_predictions(forecasters, panel: Panel):
    """Run every base forecaster once; returns ``(values, available)``, (N, Psi, Phi)."""
    psi_count, phi_count = len(forecasters), max(len(row) for row in forecasters)
    n = len(panel)
    values = np.zeros((n, psi_count, phi_count))
    available = np.zeros((n, psi_count, phi_count), dtype=bool)
    for i, row in enumerate(forecasters):
        rows = np.flatnonzero(panel.available[:, i])
        if not len(rows):
            continue
        for j, st in enumerate(row):
            if st is None:
                continue
            v, ok = fc.predict_arrays(st, panel.features[i][rows], panel.recent[rows],
                                      panel.recent_known[rows])
            values[rows, i, j] = v
            available[rows, i, j] = ok
    return values, available


class CSGEModel:
    """Fitted ensemble: weight state plus one base forecaster per member."""

    def __init__(self, state: WeightState, forecasters: list[list[fc.ForecasterState | None]],
                 kinds: list[list[str]] | None = None):
        self.state = state
        self.forecasters = forecasters
        self.kinds = kinds or [[f.kind if f else "" for f in row] for row in forecasters]

    @property
    def members(self) -> list[MemberId]:
        psi_count, phi_count = self.state.members.shape
        return [MemberId(i + 1, j + 1) for i in range(psi_count) for j in range(phi_count)
                if self.state.members[i, j]]

    def member_predictions(self, panel: Panel):
        return member_predictions(self.forecasters, panel)

    def _check_drop(self, drop):
        psi_count, phi_count = self.state.members.shape
        for m in drop:
            if not (1 <= m.weather_model <= psi_count and 1 <= m.power_model <= phi_count
                    and self.state.members[m.weather_model - 1, m.power_model - 1]):
                raise DomainError(f"member {m} is not part of this ensemble")

    def usable_rows(self, panel: Panel, drop=()) -> np.ndarray:
        """Rows with at least one available member after dropping ``drop``."""
        self._check_drop(drop)
        _, available = self.member_predictions(panel)
        available &= self.state.members
        for m in drop:
            available[:, m.weather_model - 1, m.power_model - 1] = False
        return available.any(axis=(1, 2))

    def predict(self, panel: Panel, drop=(), eta: EtaVector | None = None, diagnostics=False):
        values, available = self.member_predictions(panel)
        self._check_drop(drop)
        for m in drop:
            available[:, m.weather_model - 1, m.power_model - 1] = False
        q = self.state.local_scores(panel.features, panel.available)
        return fuse(self.state.global_rmse, self.state.lead_ratio, self.state.members, q,
                    panel.lead_index, available, values, eta or self.state.eta, diagnostics)


def predict_csge(model: CSGEModel, records: list[ForecastRecord | None]):
    """Forecast one (origin, lead) from the per-weather-model records.

    ``records[psi - 1]`` is ``None`` when weather model psi did not deliver.
    Returns ``(value, weights (Psi, Phi), Diagnostics)``.
    """
    present = [r for r in records if r is not None]
    if not present:
        raise NoMembersAvailable("no members available")
    psi_count = model.state.members.shape[0]
    if len(records) != psi_count:
        raise DomainError(f"expected {psi_count} weather-model records, got {len(records)}")
    ref = present[0]
    recent = next((r.recent_power_at_origin for r in present if r.recent_power_at_origin is not None), None)
    feats = []
    for i, r in enumerate(records):
        d = model.state.stores[i].points.shape[1]
        feats.append(np.asarray(r.features if r is not None else np.zeros(d), dtype=float).reshape(1, -1))
    panel = Panel(model.state.grid, np.array([ref.origin]), np.array([ref.lead]),
                  np.zeros(1), np.zeros(1, dtype=bool),
                  np.array([0.0 if recent is None else recent]), np.array([recent is not None]),
                  feats, np.array([[r is not None for r in records]]))
    value, diag = model.predict(panel, diagnostics=True)
    return float(value[0]), diag.weights[0], diag
