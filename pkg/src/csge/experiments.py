"""Comparison methods built from one prepared training run.

Every method is the same ensemble with a member subset and some exponents
pinned, so all of them share the fold caches and the fitted base models:

* ``MME-Eq``: one power model per weather model, all exponents 0;
* ``MME-Fix``: one power model, ``g_wx = 2`` and everything else 0;
* ``CSGE-S``: one power model, all exponents trained;
* ``CSGE-M``: all non-persistence power models, all exponents trained;
* ``CSGE+P``: every member including persistence;
* ``Equal``: every non-persistence member with all exponents 0;
* ``Best-Single``: the member with the lowest out-of-fold RMSE.

The single power model is the kind with the lowest mean out-of-fold RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MemberId
from .ensemble import CSGEModel
from .training import FitReport, Prepared, TrainConfig, build_model, select
from .weighting import EtaVector

PERSISTENCE = "persistence"
ASPECTS = {"g": ("g_pow", "g_wx"), "l": ("l_pow", "l_wx"), "k": ("k_pow", "k_wx")}


@dataclass
class MethodResult:
    name: str
    members: np.ndarray
    report: FitReport | None
    model: CSGEModel | None
    test_prediction: np.ndarray
    test_rmse: float


def kind_mask(prepared: Prepared, keep) -> np.ndarray:
    mask = np.zeros_like(prepared.members)
    for i, row in enumerate(prepared.kinds):
        for j, kind in enumerate(row):
            mask[i, j] = keep(kind)
    return mask


def best_kind(prepared: Prepared) -> str:
    """Non-persistence kind with the lowest mean out-of-fold RMSE."""
    scores: dict[str, list[float]] = {}
    for i, row in enumerate(prepared.kinds):
        for j, kind in enumerate(row):
            if kind != PERSISTENCE:
                scores.setdefault(kind, []).append(prepared.final_rmse[i, j])
    if not scores:
        raise ValueError("no non-persistence power model to compare")
    return min(sorted(scores), key=lambda k: np.mean(scores[k]))


def best_single(prepared: Prepared, mask=None) -> MemberId:
    mask = prepared.members if mask is None else prepared.members & mask
    R = np.where(mask, prepared.final_rmse, np.inf)
    psi, phi = np.unravel_index(np.argmin(R), R.shape)
    return MemberId(int(psi) + 1, int(phi) + 1)


def pin_disabled(config: TrainConfig, aspects: str) -> TrainConfig:
    """Pin the exponents of aspects missing from ``aspects`` (subset of 'g', 'l', 'k') to 0."""
    unknown = set(aspects) - set(ASPECTS) - {","}
    if unknown:
        raise ValueError(f"unknown aspects {sorted(unknown)}; choose from g, l, k")
    pins = {name: 0.0 for a, names in ASPECTS.items() if a not in aspects for name in names}
    return config.with_pinned(**pins) if pins else config


def _evaluate(prepared: Prepared, name, members, config: TrainConfig | None, eta=None):
    report = None
    if eta is None:
        report = select(prepared, config, members)
        eta = report.eta
    test = prepared.test.restrict(members)
    pred, _ = test.predict(eta)
    rmse = float(np.sqrt(np.mean((pred - test.observation) ** 2)))
    return MethodResult(name, members & prepared.members, report,
                        build_model(prepared, eta, members), pred, rmse)


def all_zero(config: TrainConfig, **values) -> TrainConfig:
    pins = {n: 0.0 for n in EtaVector.names()}
    pins.update(values)
    return config.with_pinned(**pins)


def run_methods(prepared: Prepared, config: TrainConfig, names=None) -> dict[str, MethodResult]:
    """Evaluate the named comparison methods on the test rows."""
    has_persistence = any(PERSISTENCE in row for row in prepared.kinds)
    names = list(names or default_methods(prepared))
    non_p = kind_mask(prepared, lambda k: k != PERSISTENCE)
    single = kind_mask(prepared, lambda k, b=best_kind(prepared): k == b)
    out = {}
    for name in names:
        if name == "MME-Eq":
            out[name] = _evaluate(prepared, name, single, all_zero(config))
        elif name == "MME-Fix":
            out[name] = _evaluate(prepared, name, single, all_zero(config, g_wx=2.0))
        elif name == "CSGE-S":
            out[name] = _evaluate(prepared, name, single, config)
        elif name == "CSGE-M":
            out[name] = _evaluate(prepared, name, non_p, config)
        elif name == "CSGE+P":
            if not has_persistence:
                raise ValueError("CSGE+P needs a persistence member")
            out[name] = _evaluate(prepared, name, prepared.members, config)
        elif name == "Equal":
            out[name] = _evaluate(prepared, name, non_p, all_zero(config))
        elif name == "Best-Single":
            m = best_single(prepared, non_p)
            mask = np.zeros_like(prepared.members)
            mask[m.weather_model - 1, m.power_model - 1] = True
            out[name] = _evaluate(prepared, name, mask, None, eta=EtaVector.zeros())
        else:
            raise ValueError(f"unknown method {name!r}")
    return out


def default_methods(prepared: Prepared) -> list[str]:
    names = ["Best-Single", "Equal", "MME-Eq", "MME-Fix", "CSGE-S", "CSGE-M"]
    if any(PERSISTENCE in row for row in prepared.kinds):
        names.append("CSGE+P")
    return names
