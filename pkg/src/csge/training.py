"""Ensemble training.

The training origins are split into five blocks.  In fold ``i`` block ``i``
is the validation set, block ``i + 1`` the optimization set and the other
three the parameter set.  Per fold the base forecasters are fitted on the
parameter rows and predict the optimization and validation rows once; the
gating exponents are then tuned on the optimization rows against weighting
statistics taken from the validation rows, and each candidate is scored on
the validation rows against statistics from the optimization rows, so no row
is ever weighted by its own error.

The final model refits the base forecasters on all training rows.  Its
weighting statistics come from out-of-fold predictions: every training row
contributes the error it had as a validation row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import forecasters as fc
from .core import DataSet, DomainError, Panel
from .ensemble import CSGEModel, FactorCache, fuse, member_predictions
from .neighbors import Standardizer
from .weighting import (
    DEFAULT_NEIGHBORS, EtaVector, ErrorLedger, HistoricStore, WeightState, leadtime_profile,
)

log = logging.getLogger(__name__)

STAGE_ORDER = ("g_wx", "g_pow", "l_wx", "l_pow", "k_wx", "k_pow")
ZETA_GRID = (0.0, 0.001, 0.01, 0.1, 1.0)


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    test_fraction: float = 0.2
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise DomainError("test_fraction must lie in (0, 1)")
        if self.folds < 3:
            raise DomainError("need at least 3 folds (parameter, optimization, validation)")


@dataclass(frozen=True)
class FoldRoles:
    parameter: np.ndarray
    optimization: np.ndarray
    validation: np.ndarray


@dataclass(frozen=True)
class Split:
    folds: list[FoldRoles]
    test: np.ndarray
    train: np.ndarray


def split(origins, plan: SplitPlan) -> Split:
    """Origin-disjoint train/test split with rotating fold roles."""
    if isinstance(origins, DataSet):
        origins = origins.origins()
    origins = np.unique(np.asarray(origins))
    n = len(origins)
    n_test = int(round(plan.test_fraction * n))
    n_train = n - n_test
    if n_test < 1 or n_train < plan.folds:
        raise SplitError(f"{n} origins cannot fill a test set and {plan.folds} folds "
                         f"(test={n_test}, train={n_train})")
    rng = np.random.default_rng(plan.seed)
    perm = origins[rng.permutation(n)]
    test = np.sort(perm[:n_test])
    train = perm[n_test:]
    blocks = [np.sort(b) for b in np.array_split(train, plan.folds)]
    folds = []
    for i in range(plan.folds):
        val = blocks[i]
        opt = blocks[(i + 1) % plan.folds]
        par = np.sort(np.concatenate([blocks[j] for j in range(plan.folds)
                                      if j not in (i, (i + 1) % plan.folds)]))
        folds.append(FoldRoles(par, opt, val))
    return Split(folds, test, np.sort(train))


@dataclass(frozen=True)
class TrainConfig:
    zeta: float | None = None
    zeta_grid: tuple[float, ...] = ZETA_GRID
    eta_init: EtaVector = EtaVector()
    eta_max: float = 50.0
    fatol: float = 1e-6
    xatol: float = 1e-4
    max_iter: int = 200
    stage_order: tuple[str, ...] = STAGE_ORDER
    neighbor_count: int = DEFAULT_NEIGHBORS
    smoothing_window: int = 1
    pinned: tuple[tuple[str, float], ...] = ()
    joint_refine: bool = False
    forecaster_options: tuple[tuple[str, tuple[tuple[str, object], ...]], ...] = ()

    def __post_init__(self):
        if self.zeta is not None and self.zeta < 0:
            raise DomainError("zeta must be >= 0")
        if self.eta_max <= 0:
            raise DomainError("eta_max must be > 0")
        unknown = set(self.stage_order) | {k for k, _ in self.pinned}
        unknown -= set(EtaVector.names())
        if unknown:
            raise DomainError(f"unknown eta components {sorted(unknown)}")
        if self.joint_refine:
            raise DomainError("joint refinement after the greedy pass is not implemented")

    @property
    def pinned_map(self) -> dict[str, float]:
        return dict(self.pinned)

    def options_for(self, kind: str) -> dict:
        return dict(dict(self.forecaster_options).get(kind, ()))

    def with_pinned(self, **values) -> "TrainConfig":
        merged = {**self.pinned_map, **values}
        return replace(self, pinned=tuple(sorted(merged.items())))

    @property
    def start(self) -> EtaVector:
        return self.eta_init.with_values(**self.pinned_map)


# --- objective --------------------------------------------------------------

@dataclass
class ScoringCache:
    """Precomputed member forecasts and weighting inputs for a set of rows."""

    values: np.ndarray        # (N, Psi, Phi)
    available: np.ndarray     # (N, Psi, Phi)
    observation: np.ndarray   # (N,)
    lead_index: np.ndarray    # (N,)
    q: np.ndarray             # (N, Psi, Phi)
    global_rmse: np.ndarray   # (Psi, Phi)
    lead_ratio: np.ndarray    # (Psi, Phi, K)
    members: np.ndarray       # (Psi, Phi)

    def __len__(self):
        return len(self.observation)

    _factors: FactorCache | None = field(default=None, init=False, repr=False, compare=False)
    _masked: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def restrict(self, members) -> "ScoringCache":
        return replace(self, members=self.members & members)

    def predict(self, eta: EtaVector, diagnostics=False):
        if self._factors is None:
            self._factors = FactorCache(self.global_rmse, self.lead_ratio, self.members, self.q,
                                        self.lead_index, self.available)
        return fuse(self.global_rmse, self.lead_ratio, self.members, self.q, self.lead_index,
                    self.available, self.values, eta, diagnostics, cache=self._factors)

    def mse(self, eta: EtaVector) -> float:
        if self._factors is None:
            self._factors = FactorCache(self.global_rmse, self.lead_ratio, self.members, self.q,
                                        self.lead_index, self.available)
        if self._masked is None:
            self._masked = np.where(self._factors.available, self.values, 0.0)
        e = self._factors.ensemble(eta, self._masked) - self.observation
        return float(np.mean(e * e))

    def rmse(self, eta: EtaVector) -> float:
        return float(np.sqrt(self.mse(eta)))


def objective(eta: EtaVector, cache: ScoringCache, zeta: float) -> float:
    """Mean squared ensemble error plus ``zeta`` times the sum of exponents."""
    return cache.mse(eta) + zeta * float(eta.as_array().sum())


# --- optimizer --------------------------------------------------------------

def _fold_into(x, upper):
    """Reflect ``x`` into [0, upper] (mirror at both bounds)."""
    period = 2.0 * upper
    y = np.mod(abs(x), period)
    return period - y if y > upper else y


def optimize_eta(config: TrainConfig, func, trace: list | None = None) -> EtaVector:
    """Greedy coordinate-wise Nelder-Mead over the free exponents.

    Each stage frees one component (in ``config.stage_order``, skipping
    pinned ones) and holds the rest.  Candidates are reflected into
    ``[0, eta_max]``; after the simplex run the bound ``0`` itself is tried.
    A stage only moves the incumbent on strict improvement, so the recorded
    objective never increases.
    """
    eta = config.start
    best = func(eta)
    if not np.isfinite(best):
        raise DomainError(f"objective is not finite at the initial exponents {eta}")
    if trace is not None:
        trace.append(("init", eta, best))
    pinned = config.pinned_map
    for name in config.stage_order:
        if name in pinned:
            continue

        def stage(x, name=name, eta=eta):
            return func(eta.with_values(**{name: _fold_into(float(x[0]), config.eta_max)}))

        res = minimize(stage, x0=[getattr(eta, name)], method="Nelder-Mead",
                       options={"xatol": config.xatol, "fatol": config.fatol,
                                "maxiter": config.max_iter})
        cand = eta.with_values(**{name: _fold_into(float(res.x[0]), config.eta_max)})
        value = func(cand)
        at_zero = eta.with_values(**{name: 0.0})
        zero_value = func(at_zero)
        if zero_value <= value or not np.isfinite(value):
            cand, value = at_zero, zero_value
        if np.isfinite(value) and value < best:
            eta, best = cand, value
        if trace is not None:
            trace.append((name, eta, best))
    return eta


# --- data preparation -----------------------------------------------------

def normalize_kinds(kinds, psi_count: int) -> list[list[str]]:
    if kinds and isinstance(kinds[0], str):
        kinds = [list(kinds) for _ in range(psi_count)]
    kinds = [list(k) for k in kinds]
    if len(kinds) != psi_count or any(len(k) == 0 for k in kinds):
        raise DomainError("need a nonempty forecaster list for every weather model")
    return kinds


def member_mask(kinds: list[list[str]]) -> np.ndarray:
    phi_count = max(len(k) for k in kinds)
    mask = np.zeros((len(kinds), phi_count), dtype=bool)
    for i, k in enumerate(kinds):
        mask[i, :len(k)] = True
    return mask


def fit_forecasters(panel: Panel, kinds, config: TrainConfig):
    grid = []
    for psi, row_kinds in enumerate(kinds):
        rows = panel.available[:, psi]
        X, y = panel.features[psi][rows], panel.observation[rows]
        grid.append([fc.fit_arrays(kind, X, y, config.options_for(kind)) for kind in row_kinds])
    phi_count = max(len(k) for k in kinds)
    return [row + [None] * (phi_count - len(row)) for row in grid]


def _standardizers(panel: Panel):
    out = []
    for psi in range(panel.weather_models):
        rows = panel.available[:, psi]
        X = panel.features[psi][rows] if rows.any() else np.zeros((1, panel.features[psi].shape[1]))
        out.append(Standardizer.fit(X))
    return out


def _stats(panel: Panel, values, available, members, scalers, config: TrainConfig):
    """Ledger-derived scores and historic stores for scored rows."""
    ledger = ErrorLedger.build(values, available, panel.observation, panel.lead_index,
                               panel.grid.n_leads, members)
    R = ledger.rmse
    r = leadtime_profile(ledger, config.smoothing_window)
    stores = []
    abs_err = np.abs(ledger.errors)
    for psi in range(panel.weather_models):
        complete = panel.available[:, psi] & np.all(ledger.valid[:, psi] | ~members[psi], axis=1)
        stores.append(HistoricStore.build(panel.features[psi][complete], abs_err[complete, psi],
                                          scalers[psi], config.neighbor_count))
    return ledger, R, r, stores


def _local_scores(stores, panel: Panel, shape):
    q = np.zeros((len(panel),) + shape)
    for psi, store in enumerate(stores):
        rows = np.flatnonzero(panel.available[:, psi])
        if len(rows):
            q[rows, psi, :] = store.quality(panel.features[psi][rows])
    return q


def _cache(panel, values, available, q, R, r, members):
    return ScoringCache(values, available & members, panel.observation, panel.lead_index, q, R, r, members)


@dataclass
class Prepared:
    """Everything the exponent search needs, computed once per dataset."""

    kinds: list[list[str]]
    members: np.ndarray
    split: Split
    opt: list[ScoringCache]
    val: list[ScoringCache]
    model_forecasters: list
    final_ledger: ErrorLedger
    final_rmse: np.ndarray
    final_ratio: np.ndarray
    final_stores: list[HistoricStore]
    test_panel: Panel
    test: ScoringCache
    grid: object = None
    labels: tuple = ()


def prepare(data: DataSet, kinds, config: TrainConfig, plan: SplitPlan) -> Prepared:
    kinds = normalize_kinds(kinds, data.weather_models)
    members = member_mask(kinds)
    shape = members.shape
    panel = data.panel(require_observation=True)
    sp = split(np.unique(panel.origin), plan)

    opt_caches, val_caches = [], []
    oof_rows, oof_values, oof_available = [], [], []
    for f, roles in enumerate(sp.folds):
        par = panel.rows_for_origins(roles.parameter)
        opt = panel.rows_for_origins(roles.optimization)
        val = panel.rows_for_origins(roles.validation)
        if min(len(par), len(opt), len(val)) == 0:
            raise SplitError(f"fold {f} has an empty role")
        log.info("fold %d: %d parameter, %d optimization, %d validation rows",
                 f, len(par), len(opt), len(val))
        fold_forecasters = fit_forecasters(par, kinds, config)
        v_opt, a_opt = member_predictions(fold_forecasters, opt)
        v_val, a_val = member_predictions(fold_forecasters, val)
        scalers = _standardizers(par)
        _, R_val, r_val, st_val = _stats(val, v_val, a_val, members, scalers, config)
        _, R_opt, r_opt, st_opt = _stats(opt, v_opt, a_opt, members, scalers, config)
        opt_caches.append(_cache(opt, v_opt, a_opt, _local_scores(st_val, opt, shape), R_val, r_val, members))
        val_caches.append(_cache(val, v_val, a_val, _local_scores(st_opt, val, shape), R_opt, r_opt, members))
        oof_rows.append(np.flatnonzero(np.isin(panel.origin, roles.validation)))
        oof_values.append(v_val)
        oof_available.append(a_val)

    train = panel.rows_for_origins(sp.train)
    rows = np.concatenate(oof_rows)
    order = np.argsort(rows, kind="stable")
    oof_panel = panel.take(rows[order])
    values = np.concatenate(oof_values)[order]
    available = np.concatenate(oof_available)[order]
    ledger, R, r, stores = _stats(oof_panel, values, available, members, _standardizers(train), config)

    forecasters = fit_forecasters(train, kinds, config)
    final = CSGEModel(WeightState(panel.grid, members, R, r, stores, config.start), forecasters, kinds)
    test_panel = panel.rows_for_origins(sp.test)
    v_test, a_test = final.member_predictions(test_panel)
    test_cache = _cache(test_panel, v_test, a_test, final.state.local_scores(test_panel.features, test_panel.available),
                        R, r, members)
    return Prepared(kinds, members, sp, opt_caches, val_caches, forecasters, ledger, R, r, stores,
                    test_panel, test_cache, panel.grid, data.labels)


# --- selection --------------------------------------------------------------

@dataclass
class Candidate:
    fold: int
    zeta: float
    eta: EtaVector
    objective: float
    val_rmse: list[float] = field(default_factory=list)

    @property
    def mean_val_rmse(self) -> float:
        return float(np.mean(self.val_rmse))


@dataclass
class FitReport:
    eta: EtaVector
    zeta: float
    candidates: list[Candidate]
    members: np.ndarray
    member_rmse: np.ndarray

    def to_dict(self) -> dict:
        return {
            "eta": dict(zip(EtaVector.names(), self.eta.as_array().tolist())),
            "zeta": self.zeta,
            "members": self.members.tolist(),
            "member_rmse": np.where(self.members, self.member_rmse, np.nan).tolist(),
            "candidates": [
                {"fold": c.fold, "zeta": c.zeta, "eta": c.eta.as_array().tolist(),
                 "objective": c.objective, "val_rmse": c.val_rmse, "mean_val_rmse": c.mean_val_rmse}
                for c in self.candidates
            ],
        }


def inert_components(members) -> list[str]:
    """Exponents that cannot change any weight for this member structure."""
    out = []
    if members.sum(axis=1).max() <= 1:
        out += ["g_pow", "l_pow", "k_pow"]
    if members.any(axis=1).sum() <= 1:
        out += ["g_wx", "l_wx", "k_wx"]
    return out


def pin_inert(config: TrainConfig, members) -> TrainConfig:
    """Pin inert exponents at their start values so no search is spent on them."""
    start = config.start
    inert = {n: getattr(start, n) for n in inert_components(members) if n not in config.pinned_map}
    return config.with_pinned(**inert) if inert else config


def select(prepared: Prepared, config: TrainConfig, members=None) -> FitReport:
    """Optimize exponents per fold and zeta; keep the best mean validation RMSE."""
    members = prepared.members if members is None else prepared.members & members
    if not members.any():
        raise DomainError("empty member subset")
    opt = [c.restrict(members) for c in prepared.opt]
    val = [c.restrict(members) for c in prepared.val]
    config = pin_inert(config, members)
    free = [s for s in config.stage_order if s not in config.pinned_map]
    zetas = (config.zeta,) if config.zeta is not None else config.zeta_grid
    if not free:
        zetas = zetas[:1]
    candidates = []
    for zeta in zetas:
        for f, cache in enumerate(opt):
            func = lambda eta, cache=cache, zeta=zeta: objective(eta, cache, zeta)
            eta = optimize_eta(config, func) if free else config.start
            candidates.append(Candidate(f, zeta, eta, func(eta)))
            if not free:
                break
    for cand in candidates:
        cand.val_rmse = [v.rmse(cand.eta) for v in val]
    best = min(candidates, key=lambda c: c.mean_val_rmse)
    log.info("selected eta=%s zeta=%s (mean validation RMSE %.5f)",
             best.eta, best.zeta, best.mean_val_rmse)
    return FitReport(best.eta, best.zeta, candidates, members, prepared.final_rmse)


def build_model(prepared: Prepared, eta: EtaVector, members=None) -> CSGEModel:
    members = prepared.members if members is None else prepared.members & members
    forecasters = [[st if members[i, j] else None for j, st in enumerate(row)]
                   for i, row in enumerate(prepared.model_forecasters)]
    state = WeightState(prepared.grid, members, prepared.final_rmse, prepared.final_ratio,
                        prepared.final_stores, eta)
    return CSGEModel(state, forecasters, prepared.kinds)


def fit_csge(data: DataSet, kinds, config: TrainConfig = TrainConfig(),
             plan: SplitPlan = SplitPlan()):
    """Train the ensemble; returns ``(model, report, prepared)``."""
    prepared = prepare(data, kinds, config, plan)
    report = select(prepared, config)
    return build_model(prepared, report.eta), report, prepared
