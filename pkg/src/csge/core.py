"""Domain types shared across the package.

Time stamps are UTC epoch seconds and lead arithmetic is integer exact:
``target = origin + lead * grid.delta``.  Missing observations are carried by
explicit boolean masks (columnar storage) or ``None`` (record view), never by
sentinel numbers.

Weather models are indexed ``psi = 1..Psi`` and power models ``phi = 1..Phi``;
the flat member index is ``j = (psi - 1) * Phi + phi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside its documented domain."""


@dataclass(frozen=True)
class LeadGrid:
    k_min: int
    k_max: int
    delta: int = 3600

    def __post_init__(self):
        if self.k_min < 0 or self.k_max < self.k_min:
            raise DomainError(f"invalid lead grid [{self.k_min}, {self.k_max}]")
        if self.delta <= 0:
            raise DomainError(f"delta must be positive, got {self.delta}")

    @property
    def n_leads(self) -> int:
        return self.k_max - self.k_min + 1

    @property
    def leads(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1)

    def contains(self, lead) -> bool | np.ndarray:
        return (lead >= self.k_min) & (lead <= self.k_max)

    def index(self, lead):
        """Array position of ``lead``; weight tables are indexed by k - k_min."""
        return np.asarray(lead) - self.k_min

    def target_time(self, origin, lead):
        return origin + lead * self.delta


DAY_AHEAD = LeadGrid(24, 48, 3600)
INTRADAY = LeadGrid(1, 24, 3600)


@dataclass(frozen=True, order=True)
class MemberId:
    weather_model: int
    power_model: int

    def __str__(self):
        return f"{self.weather_model}:{self.power_model}"

    @classmethod
    def parse(cls, text: str) -> "MemberId":
        try:
            psi, phi = (int(part) for part in text.replace("=", ":").split(":"))
        except ValueError:
            raise DomainError(f"member id must look like 'psi:phi', got {text!r}") from None
        return cls(psi, phi)


def flat_index(member: MemberId, phi_count: int, psi_count: int | None = None) -> int:
    psi, phi = member.weather_model, member.power_model
    if phi_count < 1:
        raise DomainError("phi_count must be >= 1")
    if psi < 1 or (psi_count is not None and psi > psi_count):
        raise DomainError(f"weather model index {psi} out of range")
    if not 1 <= phi <= phi_count:
        raise DomainError(f"power model index {phi} out of range 1..{phi_count}")
    return (psi - 1) * phi_count + phi


def member_from_flat(j: int, phi_count: int) -> MemberId:
    if j < 1 or phi_count < 1:
        raise DomainError(f"flat index {j} out of range")
    return MemberId((j - 1) // phi_count + 1, (j - 1) % phi_count + 1)


@dataclass(frozen=True)
class ForecastRecord:
    origin: int
    lead: int
    weather_model: int
    features: tuple[float, ...]
    observation: float | None = None
    recent_power_at_origin: float | None = None
    origin_lag: int = 0

    def __post_init__(self):
        if self.origin_lag < 0:
            raise DomainError("origin_lag must be nonnegative")


@dataclass
class Block:
    """Columnar rows of one weather model, sorted by (origin, lead, lag)."""

    origin: np.ndarray
    lead: np.ndarray
    lag: np.ndarray
    features: np.ndarray
    observation: np.ndarray
    observed: np.ndarray
    recent: np.ndarray
    recent_known: np.ndarray

    def __len__(self):
        return len(self.origin)

    def take(self, idx) -> "Block":
        return Block(*(getattr(self, name)[idx] for name in _BLOCK_FIELDS))

    def equals(self, other: "Block") -> bool:
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in _BLOCK_FIELDS
        )


_BLOCK_FIELDS = (
    "origin", "lead", "lag", "features", "observation", "observed", "recent", "recent_known",
)


def make_block(origin, lead, features, observation=None, recent=None, lag=None) -> Block:
    """Build a sorted block; ``observation``/``recent`` may contain NaN for missing."""
    origin = np.asarray(origin, dtype=np.int64)
    n = len(origin)
    lead = np.asarray(lead, dtype=np.int64)
    lag = np.zeros(n, dtype=np.int64) if lag is None else np.asarray(lag, dtype=np.int64)
    features = np.asarray(features, dtype=float).reshape(n, -1)
    obs = np.full(n, np.nan) if observation is None else np.asarray(observation, dtype=float)
    rec = np.full(n, np.nan) if recent is None else np.asarray(recent, dtype=float)
    observed = ~np.isnan(obs)
    known = ~np.isnan(rec)
    block = Block(
        origin, lead, lag, features,
        np.where(observed, obs, 0.0), observed,
        np.where(known, rec, 0.0), known,
    )
    order = np.lexsort((lag, lead, origin))
    return block.take(order)


class DataSet:
    """Immutable collection of forecast rows for ``Psi`` weather models.

    Rows are stored per weather model in columnar form.  The ``records``
    property gives the row view sorted by (origin, lead, weather model, lag).
    """

    def __init__(self, blocks: Sequence[Block], grid: LeadGrid, labels: Sequence[str] | None = None):
        if not blocks:
            raise DomainError("a dataset needs at least one weather model")
        self.grid = grid
        self.blocks = tuple(blocks)
        self.labels = tuple(labels) if labels is not None else tuple(
            f"wm{i + 1}" for i in range(len(blocks))
        )
        if len(self.labels) != len(self.blocks):
            raise DomainError("one label per weather model required")
        for psi, block in enumerate(self.blocks, start=1):
            self._validate(psi, block)

    def _validate(self, psi: int, block: Block):
        if len(block) == 0:
            return
        if not np.all(grid_ok := self.grid.contains(block.lead)):
            bad = block.lead[~grid_ok][0]
            raise DomainError(f"weather model {psi}: lead {bad} outside grid")
        key = np.stack([block.origin, block.lead, block.lag], axis=1)
        order = np.lexsort((block.lag, block.lead, block.origin))
        if not np.array_equal(order, np.arange(len(block))):
            raise DomainError(f"weather model {psi}: rows not sorted by (origin, lead)")
        if np.any(np.all(key[1:] == key[:-1], axis=1)):
            raise DomainError(f"weather model {psi}: duplicate (origin, lead, lag) key")

    @classmethod
    def from_records(cls, records: Iterable[ForecastRecord], grid: LeadGrid,
                     weather_models: int | None = None, labels=None) -> "DataSet":
        records = list(records)
        psi_count = weather_models or max((r.weather_model for r in records), default=0)
        if psi_count < 1:
            raise DomainError("no weather models")
        blocks = []
        for psi in range(1, psi_count + 1):
            rows = [r for r in records if r.weather_model == psi]
            dims = {len(r.features) for r in rows}
            if len(dims) > 1:
                raise DomainError(f"weather model {psi}: inconsistent feature lengths {sorted(dims)}")
            d = dims.pop() if dims else 0
            blocks.append(make_block(
                [r.origin for r in rows],
                [r.lead for r in rows],
                np.array([r.features for r in rows], dtype=float).reshape(len(rows), d),
                [np.nan if r.observation is None else r.observation for r in rows],
                [np.nan if r.recent_power_at_origin is None else r.recent_power_at_origin for r in rows],
                [r.origin_lag for r in rows],
            ))
        return cls(blocks, grid, labels)

    @property
    def weather_models(self) -> int:
        return len(self.blocks)

    @property
    def feature_dims(self) -> tuple[int, ...]:
        return tuple(b.features.shape[1] for b in self.blocks)

    def __len__(self):
        return sum(len(b) for b in self.blocks)

    @property
    def records(self) -> list[ForecastRecord]:
        out = []
        for psi, b in enumerate(self.blocks, start=1):
            for i in range(len(b)):
                out.append(ForecastRecord(
                    int(b.origin[i]), int(b.lead[i]), psi,
                    tuple(float(v) for v in b.features[i]),
                    float(b.observation[i]) if b.observed[i] else None,
                    float(b.recent[i]) if b.recent_known[i] else None,
                    int(b.lag[i]),
                ))
        out.sort(key=lambda r: (r.origin, r.lead, r.weather_model, r.origin_lag))
        return out

    def origins(self) -> np.ndarray:
        return np.unique(np.concatenate([b.origin for b in self.blocks]))

    def select_origins(self, origins) -> "DataSet":
        origins = np.asarray(origins)
        blocks = [b.take(np.isin(b.origin, origins)) for b in self.blocks]
        return DataSet(blocks, self.grid, self.labels)

    def with_blocks(self, blocks) -> "DataSet":
        return DataSet(blocks, self.grid, self.labels)

    def __eq__(self, other):
        if not isinstance(other, DataSet):
            return NotImplemented
        return (self.grid == other.grid and self.labels == other.labels
                and len(self.blocks) == len(other.blocks)
                and all(a.equals(b) for a, b in zip(self.blocks, other.blocks)))

    def __repr__(self):
        return f"DataSet(Psi={self.weather_models}, rows={len(self)}, grid={self.grid})"

    def panel(self, require_observation: bool = True) -> "Panel":
        return build_panel(self, require_observation)


@dataclass
class Panel:
    """Rows aligned across weather models: one row per (origin, lead).

    ``features[psi]`` has shape (N, D_psi); ``available[:, psi]`` flags whether
    weather model psi delivered a forecast for that row.
    """

    grid: LeadGrid
    origin: np.ndarray
    lead: np.ndarray
    observation: np.ndarray
    observed: np.ndarray
    recent: np.ndarray
    recent_known: np.ndarray
    features: list[np.ndarray]
    available: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __len__(self):
        return len(self.origin)

    @property
    def weather_models(self) -> int:
        return len(self.features)

    @property
    def lead_index(self) -> np.ndarray:
        return self.grid.index(self.lead)

    def take(self, idx) -> "Panel":
        return Panel(
            self.grid, self.origin[idx], self.lead[idx], self.observation[idx],
            self.observed[idx], self.recent[idx], self.recent_known[idx],
            [f[idx] for f in self.features], self.available[idx], self.labels,
        )

    def rows_for_origins(self, origins) -> "Panel":
        return self.take(np.isin(self.origin, np.asarray(origins)))


def build_panel(data: DataSet, require_observation: bool = True) -> Panel:
    # the freshest run (smallest lag) represents a weather model at each (origin, lead)
    fresh = []
    for b in data.blocks:
        if len(b) == 0:
            fresh.append(b)
            continue
        first = np.ones(len(b), dtype=bool)
        first[1:] = (b.origin[1:] != b.origin[:-1]) | (b.lead[1:] != b.lead[:-1])
        fresh.append(b.take(first))

    origin = np.concatenate([b.origin for b in fresh])
    lead = np.concatenate([b.lead for b in fresh])
    keys, inverse = np.unique(np.stack([origin, lead], axis=1), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n = len(keys)
    psi_count = len(fresh)

    obs = np.zeros(n)
    observed = np.zeros(n, dtype=bool)
    recent = np.zeros(n)
    recent_known = np.zeros(n, dtype=bool)
    available = np.zeros((n, psi_count), dtype=bool)
    features = []
    start = 0
    for psi, b in enumerate(fresh):
        idx = inverse[start:start + len(b)]
        start += len(b)
        feats = np.zeros((n, b.features.shape[1]))
        feats[idx] = b.features
        features.append(feats)
        available[idx, psi] = True
        # first weather model carrying a value wins
        take = b.observed & ~observed[idx]
        obs[idx[take]] = b.observation[take]
        observed[idx[take]] = True
        take = b.recent_known & ~recent_known[idx]
        recent[idx[take]] = b.recent[take]
        recent_known[idx[take]] = True

    panel = Panel(data.grid, keys[:, 0].copy(), keys[:, 1].copy(), obs, observed,
                  recent, recent_known, features, available, data.labels)
    if require_observation:
        panel = panel.take(observed)
    return panel


@dataclass(frozen=True)
class AlignedRow:
    origin: int
    lead: int
    features: tuple[tuple[float, ...] | None, ...]
    observation: float


def align(data: DataSet, lead: int) -> list[AlignedRow]:
    """Group all weather models' inputs for each origin at ``lead``.

    Only rows with an observation are returned; a weather model without a
    forecast at that origin shows up as ``None``.  An empty list is valid.
    """
    if not data.grid.contains(lead):
        raise DomainError(f"lead {lead} outside grid [{data.grid.k_min}, {data.grid.k_max}]")
    panel = data.panel(require_observation=True)
    rows = np.flatnonzero(panel.lead == lead)
    out = []
    for i in rows:
        feats = tuple(
            tuple(float(v) for v in panel.features[psi][i]) if panel.available[i, psi] else None
            for psi in range(panel.weather_models)
        )
        out.append(AlignedRow(int(panel.origin[i]), int(lead), feats, float(panel.observation[i])))
    return out


def iter_members(phi_counts: Sequence[int]) -> Iterator[MemberId]:
    for psi, phi_count in enumerate(phi_counts, start=1):
        for phi in range(1, phi_count + 1):
            yield MemberId(psi, phi)
