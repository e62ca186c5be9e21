"""Forecast scores and comparison tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TIE_TOLERANCE = 1e-3


class ScoreError(ValueError):
    pass


def _pair(forecasts, observations):
    f = np.asarray(forecasts, dtype=float).ravel()
    o = np.asarray(observations, dtype=float).ravel()
    if f.shape != o.shape:
        raise ScoreError(f"length mismatch: {f.size} forecasts vs {o.size} observations")
    if f.size == 0:
        raise ScoreError("cannot score an empty vector")
    return f, o


def rmse(forecasts, observations) -> float:
    f, o = _pair(forecasts, observations)
    e = f - o
    return float(np.sqrt(np.mean(e * e)))


def r_squared(forecasts, observations) -> float | None:
    """Squared Pearson correlation; ``None`` when either input is constant.

    The forecast mean is the mean of the issued forecasts themselves.
    """
    f, o = _pair(forecasts, observations)
    fc = f - f.mean()
    oc = o - o.mean()
    sff = float(fc @ fc)
    soo = float(oc @ oc)
    if sff == 0.0 or soo == 0.0:
        return None
    sfo = float(fc @ oc)
    return sfo * sfo / (sff * soo)


def skill(e_base: float, e_eval: float) -> float:
    """Fractional improvement of ``e_eval`` over ``e_base``."""
    if e_base == 0:
        raise ScoreError("baseline score is zero; skill undefined")
    return (e_base - e_eval) / e_base


def wins(scores, higher_is_better: bool = False, tolerance: float = TIE_TOLERANCE) -> np.ndarray:
    """Per-method win counts over a (methods x datasets) score matrix.

    Each dataset hands out one point, split equally among the methods within
    ``tolerance`` of the best score.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2:
        raise ScoreError("scores must be a (methods x datasets) matrix")
    if not higher_is_better:
        s = -s
    best = s.max(axis=0)
    tied = s >= best - tolerance
    return (tied / tied.sum(axis=0)).sum(axis=1)


@dataclass
class ScoreTable:
    """RMSE and R^2 per (dataset, method) with the summary rows of a results table."""

    methods: list[str]
    datasets: list[str] = field(default_factory=list)
    rmse: list[list[float]] = field(default_factory=list)
    r2: list[list[float | None]] = field(default_factory=list)

    def add(self, dataset: str, rmse_row, r2_row):
        if len(rmse_row) != len(self.methods) or len(r2_row) != len(self.methods):
            raise ScoreError("row length must match the number of methods")
        self.datasets.append(dataset)
        self.rmse.append([float(v) for v in rmse_row])
        self.r2.append([None if v is None else float(v) for v in r2_row])

    def _matrix(self, which):
        rows = self.rmse if which == "rmse" else self.r2
        return np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=float)

    def summary(self, baseline: str) -> dict[str, dict[str, list[float]]]:
        """Avg, Std, two Skill variants and #Wins for both scores.

        ``Skill`` applies the skill formula to the Avg row and ``Skill (mean
        per dataset)`` averages per-dataset skills.  R^2 skill has its sign
        flipped so that positive always means better than the baseline.
        """
        if baseline not in self.methods:
            raise ScoreError(f"unknown baseline {baseline!r}; methods are {self.methods}")
        b = self.methods.index(baseline)
        out = {}
        for which, higher in (("rmse", False), ("r2", True)):
            m = self._matrix(which)
            avg = np.nanmean(m, axis=0)
            std = np.nanstd(m, axis=0)
            sign = -1.0 if higher else 1.0
            skill_avg = [sign * skill(avg[b], a) + 0.0 if avg[b] != 0 else np.nan for a in avg]
            per = np.array([[sign * skill(row[b], v) + 0.0 if row[b] not in (0,) and np.isfinite(row[b])
                             else np.nan for v in row] for row in m])
            w = wins(np.where(np.isnan(m), -np.inf if higher else np.inf, m).T, higher_is_better=higher)
            out[which] = {
                "Avg.": list(avg), "Std.": list(std),
                "Skill": skill_avg, "Skill (mean per dataset)": list(np.nanmean(per, axis=0)),
                "#Wins": list(w),
            }
        return out

    def to_csv_rows(self, baseline: str) -> list[list[str]]:
        header = ["dataset"] + [f"rmse:{m}" for m in self.methods] + [f"r2:{m}" for m in self.methods]
        rows = [header]
        fmt = lambda v: "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))
        for name, r, q in zip(self.datasets, self.rmse, self.r2):
            rows.append([name] + [fmt(v) for v in r] + [fmt(v) for v in q])
        summary = self.summary(baseline)
        for label in ("Avg.", "Std.", "Skill", "Skill (mean per dataset)", "#Wins"):
            rows.append([label] + [fmt(v) for v in summary["rmse"][label]]
                        + [fmt(v) for v in summary["r2"][label]])
        return rows
