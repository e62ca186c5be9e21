"""Quality statistics and the three weighting aspects.

Scores are kept for every (weather model psi, power model phi) pair:

* global: overall RMSE of each member on held-out rows;
* local: mean absolute error of each member over the nearest historic
  situations of the current weather forecast;
* lead time: each lead's RMSE relative to the member's mean RMSE over leads.

Weather models are never scored directly; their quality is the average over
their own power models.  Arrays use 0-based positions ``[psi - 1, phi - 1]``;
a structural ``members`` mask allows different power-model sets per weather
model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace

import numpy as np

from .core import DomainError, LeadGrid
from .gating import soft_gate_all
from .neighbors import NeighborIndex, Standardizer

log = logging.getLogger(__name__)

DEFAULT_NEIGHBORS = 30


@dataclass(frozen=True)
class EtaVector:
    g_pow: float = 1.0
    l_pow: float = 1.0
    k_pow: float = 1.0
    g_wx: float = 1.0
    l_wx: float = 1.0
    k_wx: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise DomainError(f"eta component {f.name} must be >= 0")

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=float)

    @classmethod
    def from_array(cls, values) -> "EtaVector":
        return cls(*(float(v) for v in values))

    @classmethod
    def zeros(cls) -> "EtaVector":
        return cls(0, 0, 0, 0, 0, 0)

    def with_values(self, **kw) -> "EtaVector":
        return replace(self, **kw)


@dataclass
class ErrorLedger:
    """Signed errors ``prediction - observation`` of every member on scored rows."""

    errors: np.ndarray        # (N, Psi, Phi)
    valid: np.ndarray         # (N, Psi, Phi) member produced a forecast
    lead_index: np.ndarray    # (N,)
    n_leads: int
    members: np.ndarray       # (Psi, Phi) structural member mask

    @classmethod
    def build(cls, predictions, available, observation, lead_index, n_leads, members=None):
        predictions = np.asarray(predictions, dtype=float)
        available = np.asarray(available, dtype=bool)
        if members is None:
            members = np.ones(predictions.shape[1:], dtype=bool)
        errors = np.where(available, predictions - np.asarray(observation)[:, None, None], 0.0)
        return cls(errors, available & members, np.asarray(lead_index), n_leads, members)

    def take(self, idx) -> "ErrorLedger":
        return ErrorLedger(self.errors[idx], self.valid[idx], self.lead_index[idx],
                           self.n_leads, self.members)

    @property
    def counts(self) -> np.ndarray:
        return self.valid.sum(axis=0)

    @property
    def rmse(self) -> np.ndarray:
        """Overall RMSE per member, shape (Psi, Phi)."""
        sq = np.where(self.valid, self.errors ** 2, 0.0).sum(axis=0)
        n = self.counts
        if np.any(self.members & (n == 0)):
            psi, phi = np.argwhere(self.members & (n == 0))[0] + 1
            raise DomainError(f"member {psi}:{phi} has no scored rows; RMSE undefined")
        return np.sqrt(np.where(n > 0, sq / np.maximum(n, 1), 0.0))

    def lead_stats(self):
        """Per-lead sum of squared errors and counts, each (Psi, Phi, K)."""
        psi_count, phi_count = self.members.shape
        sq = np.zeros((psi_count, phi_count, self.n_leads))
        n = np.zeros((psi_count, phi_count, self.n_leads))
        e2 = np.where(self.valid, self.errors ** 2, 0.0)
        for k in range(self.n_leads):
            rows = self.lead_index == k
            sq[:, :, k] = e2[rows].sum(axis=0)
            n[:, :, k] = self.valid[rows].sum(axis=0)
        return sq, n

    @property
    def rmse_by_lead(self) -> np.ndarray:
        """Per-lead RMSE; NaN marks leads without scored rows."""
        sq, n = self.lead_stats()
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, np.sqrt(sq / np.where(n > 0, n, 1)), np.nan)


def _member_mean(scores, mask, axis=-1):
    mask = np.broadcast_to(mask, scores.shape)
    n = mask.sum(axis=axis)
    total = np.where(mask, scores, 0.0).sum(axis=axis)
    return np.where(n > 0, total / np.maximum(n, 1), 0.0), n > 0


def global_power_weights(ledger: ErrorLedger, psi: int, eta_g: float) -> np.ndarray:
    R = ledger.rmse[psi - 1]
    m = ledger.members[psi - 1]
    return soft_gate_all(R[m], eta_g)


def global_weather_weights(ledger: ErrorLedger, eta_g: float) -> np.ndarray:
    p, _ = _member_mean(ledger.rmse, ledger.members)
    return soft_gate_all(p, eta_g)


@dataclass
class HistoricStore:
    """Standardized historic inputs of one weather model with member errors."""

    standardizer: Standardizer
    points: np.ndarray          # (N, D) standardized
    abs_errors: np.ndarray      # (N, Phi)
    neighbor_count: int = DEFAULT_NEIGHBORS

    def __post_init__(self):
        if len(self.points) != len(self.abs_errors):
            raise DomainError("historic store: row count must match error rows")
        if self.neighbor_count < 1:
            raise DomainError("neighbor count must be >= 1")
        self._index = None

    @classmethod
    def build(cls, raw_features, abs_errors, standardizer: Standardizer,
              neighbor_count: int = DEFAULT_NEIGHBORS) -> "HistoricStore":
        return cls(standardizer, standardizer(raw_features), np.asarray(abs_errors, dtype=float),
                   neighbor_count)

    def __len__(self):
        return len(self.points)

    @property
    def degraded(self) -> bool:
        return len(self) < self.neighbor_count

    @property
    def index(self) -> NeighborIndex:
        if self._index is None:
            if len(self) == 0:
                raise DomainError("historic store is empty")
            self._index = NeighborIndex(self.points)
        return self._index

    def neighbors(self, raw_queries):
        if self.degraded:
            log.warning("historic store has %d rows < C=%d; using all rows", len(self), self.neighbor_count)
        q = self.standardizer(np.atleast_2d(raw_queries))
        if q.shape[1] != self.points.shape[1]:
            raise DomainError(f"query has {q.shape[1]} dims, store has {self.points.shape[1]}")
        return self.index.query(q, self.neighbor_count)

    def quality(self, raw_queries) -> np.ndarray:
        """Mean absolute error of each power model over the neighbours, (Q, Phi)."""
        idx, _ = self.neighbors(raw_queries)
        return self.abs_errors[idx].mean(axis=1)


def local_quality(store: HistoricStore, query) -> np.ndarray:
    """Local error score ``q`` for every power model of one weather model."""
    return store.quality(np.asarray(query, dtype=float).reshape(1, -1))[0]


def local_weights(q, eta_l_pow: float, eta_l_wx: float, members=None, available=None):
    """Local weights from scores ``q`` of shape (..., Psi, Phi).

    Returns ``(power weights (..., Psi, Phi), weather weights (..., Psi))``.
    """
    q = np.asarray(q, dtype=float)
    mask = np.ones(q.shape, dtype=bool) if members is None else np.broadcast_to(members, q.shape)
    if available is not None:
        mask = mask & available
    return _two_level(q, eta_l_pow, eta_l_wx, mask)


def _two_level(scores, eta_pow, eta_wx, mask):
    w_pow = soft_gate_all(scores, eta_pow, axis=-1, mask=mask)
    mean, has = _member_mean(scores, mask)
    w_wx = soft_gate_all(mean, eta_wx, axis=-1, mask=has)
    return w_pow, w_wx


def leadtime_profile(ledger: ErrorLedger, smoothing_window: int = 1) -> np.ndarray:
    """Relative per-lead quality ``r`` of shape (Psi, Phi, K).

    Each lead's RMSE is divided by the member's mean RMSE over all leads.
    With ``smoothing_window > 1`` a centered moving average over available
    neighbouring leads is applied to the per-lead RMSE first.
    """
    if smoothing_window < 1 or smoothing_window % 2 == 0:
        raise DomainError("smoothing window must be an odd positive integer")
    Rk = ledger.rmse_by_lead
    if smoothing_window > 1:
        Rk = _moving_average(Rk, smoothing_window)
    missing = np.isnan(Rk) & ledger.members[:, :, None]
    if np.any(missing):
        psi, phi, k = np.argwhere(missing)[0]
        raise DomainError(
            f"member {psi + 1}:{phi + 1} has no forecasts at lead index {k}"
            f" (window={smoothing_window})")
    Rk = np.where(ledger.members[:, :, None], Rk, 0.0)
    mean = Rk.mean(axis=-1, keepdims=True)
    return np.where(mean > 0, Rk / np.where(mean > 0, mean, 1.0), 1.0)


def _moving_average(values, window):
    half = window // 2
    K = values.shape[-1]
    out = np.full_like(values, np.nan)
    for k in range(K):
        chunk = values[..., max(0, k - half):k + half + 1]
        n = (~np.isnan(chunk)).sum(axis=-1)
        total = np.nansum(chunk, axis=-1)
        out[..., k] = np.where(n > 0, total / np.maximum(n, 1), np.nan)
    return out


def leadtime_weights(r, eta_k_pow: float, eta_k_wx: float, members=None):
    """Lead-time weights from ``r`` of shape (Psi, Phi, K).

    Returns ``(power weights (Psi, Phi, K), weather weights (Psi, K))``.
    """
    r = np.moveaxis(np.asarray(r, dtype=float), -1, 0)          # (K, Psi, Phi)
    mask = np.ones(r.shape, dtype=bool) if members is None else np.broadcast_to(members, r.shape)
    w_pow, w_wx = _two_level(r, eta_k_pow, eta_k_wx, mask)
    return np.moveaxis(w_pow, 0, -1), np.moveaxis(w_wx, 0, -1)


@dataclass
class WeightState:
    """Everything needed to weight the members of any future forecast."""

    grid: LeadGrid
    members: np.ndarray          # (Psi, Phi) structural mask
    global_rmse: np.ndarray      # (Psi, Phi)
    lead_ratio: np.ndarray       # (Psi, Phi, K)
    stores: list[HistoricStore]  # one per weather model
    eta: EtaVector

    @property
    def shape(self) -> tuple[int, int]:
        return self.members.shape

    @property
    def global_power(self) -> np.ndarray:
        return soft_gate_all(self.global_rmse, self.eta.g_pow, mask=self.members)

    @property
    def global_weather(self) -> np.ndarray:
        p, has = _member_mean(self.global_rmse, self.members)
        return soft_gate_all(p, self.eta.g_wx, mask=has)

    @property
    def leadtime_power(self) -> np.ndarray:
        return leadtime_weights(self.lead_ratio, self.eta.k_pow, self.eta.k_wx, self.members)[0]

    @property
    def leadtime_weather(self) -> np.ndarray:
        return leadtime_weights(self.lead_ratio, self.eta.k_pow, self.eta.k_wx, self.members)[1]

    def with_eta(self, eta: EtaVector) -> "WeightState":
        return replace(self, eta=eta)

    def local_scores(self, features, available) -> np.ndarray:
        """Local scores ``q`` (N, Psi, Phi) for raw per-weather-model inputs."""
        psi_count, phi_count = self.members.shape
        n = len(available)
        q = np.zeros((n, psi_count, phi_count))
        for psi in range(psi_count):
            rows = np.flatnonzero(available[:, psi])
            if len(rows):
                q[rows, psi, :] = self.stores[psi].quality(features[psi][rows])
        return q
