"""Files: CSV ingestion, normalization, experiment configs, bundles and traces.

CSV layout (one file per weather model, header row mandatory, matched by
position)::

    timestamp, lead_hours, wind_speed_100m, wind_speed_10m, wind_u_100m,
    wind_v_100m, air_pressure, air_temperature, power

``timestamp`` is the ISO-8601 UTC target time of the row, so the forecast
origin is ``timestamp - lead_hours``.  An empty ``power`` cell marks a missing
observation.  Files with other header names or column order can be read
through a ``columns`` mapping (canonical name -> header name), which matches
by name instead of position.

Bundles are ``MAGIC``, a little-endian uint32 format version, a uint64
payload length and a gzip-compressed JSON payload (``mtime=0``, sorted keys,
arrays as base64 of their raw little-endian bytes), so equal models give
byte-identical files.
"""

from __future__ import annotations

import base64
import csv
import gzip
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import DataSet, DomainError, LeadGrid, make_block
from .ensemble import CSGEModel, Diagnostics
from .forecasters import ForecasterState
from .neighbors import Standardizer
from .synth import attach_recent_power
from .training import SplitPlan, TrainConfig
from .weighting import EtaVector, HistoricStore, WeightState

log = logging.getLogger(__name__)

COLUMNS = (
    "timestamp", "lead_hours", "wind_speed_100m", "wind_speed_10m", "wind_u_100m",
    "wind_v_100m", "air_pressure", "air_temperature", "power",
)
FEATURE_COLUMNS = COLUMNS[2:-1]
POWER_RANGE = (-0.01, 1.05)

MAGIC = b"CSGEBNDL"
BUNDLE_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class FormatError(ValueError):
    """Malformed input file."""


class BundleError(ValueError):
    """Unreadable, truncated or incompatible bundle."""


# --- atomic output ----------------------------------------------------------

def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows) -> str:
    from io import StringIO
    buf = StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def fmt_float(v) -> str:
    return "" if v is None or not np.isfinite(v) else repr(float(v))


# --- time stamps ------------------------------------------------------------

def parse_time(text: str) -> int:
    """ISO-8601 to epoch seconds; naive stamps are read as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    t = datetime.fromisoformat(text)
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return int(t.timestamp())


def format_time(epoch) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# --- ingestion --------------------------------------------------------------

@dataclass
class IngestReport:
    path: str
    rows: int = 0
    dropped_range: int = 0
    dropped_parse: int = 0
    dropped_duplicate: int = 0
    dropped_grid: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_range + self.dropped_parse + self.dropped_duplicate + self.dropped_grid


def _column_positions(header, columns, path) -> list[int]:
    unknown = set(columns) - set(COLUMNS)
    if unknown:
        raise FormatError(f"{path}: column mapping names unknown columns {sorted(unknown)}")
    names = [h.strip() for h in header]
    pos = []
    for canonical in COLUMNS:
        wanted = columns.get(canonical, canonical)
        if wanted not in names:
            raise FormatError(f"{path}:1: no header cell {wanted!r} for column {canonical!r}")
        pos.append(names.index(wanted))
    return pos


def read_weather_file(path, grid: LeadGrid, nominal_capacity: float | None = None, columns=None):
    """Parse one weather model's CSV into a block plus an :class:`IngestReport`.

    ``columns`` optionally maps canonical column names to header names; columns
    are then located by name and extra columns are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    report = IngestReport(str(path))
    origin, lead, feats, power = [], [], [], []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}:1: empty file, header row expected")
        if not columns and len(header) != len(COLUMNS):
            raise FormatError(f"{path}:1: header has {len(header)} columns, expected {len(COLUMNS)}"
                              f" ({', '.join(COLUMNS)})")
        for col, name in enumerate(header, start=1):
            if not name.strip() or _is_number(name):
                raise FormatError(f"{path}:1:{col}: header cell {name!r} is not a column name")
        pos = _column_positions(header, columns, path) if columns else None
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{line}: {len(row)} columns, expected {len(header)}")
            if pos is not None:
                row = [row[i] for i in pos]
            try:
                target = parse_time(row[0])
                hours = float(row[1])
                x = [float(v) for v in row[2:-1]]
                p = float(row[-1]) if row[-1].strip() else np.nan
            except ValueError:
                report.dropped_parse += 1
                continue
            if not np.all(np.isfinite(x)) or (row[-1].strip() and not np.isfinite(p)):
                report.dropped_parse += 1
                continue
            seconds = hours * 3600.0
            k = int(round(seconds / grid.delta))
            if abs(k * grid.delta - seconds) > 1e-6:
                report.dropped_parse += 1
                continue
            if not grid.contains(k):
                report.dropped_grid += 1
                continue
            if nominal_capacity is not None and np.isfinite(p):
                p = p / nominal_capacity
            if np.isfinite(p) and not POWER_RANGE[0] <= p <= POWER_RANGE[1]:
                report.dropped_range += 1
                continue
            t0 = target - k * grid.delta
            if (t0, k) in seen:
                report.dropped_duplicate += 1
                continue
            seen.add((t0, k))
            origin.append(t0)
            lead.append(k)
            feats.append(x)
            power.append(np.clip(p, 0.0, 1.0) if np.isfinite(p) else np.nan)
    report.rows = len(origin)
    if report.dropped:
        log.info("%s: kept %d rows, dropped %d (range %d, parse %d, duplicate %d, grid %d)",
                 path, report.rows, report.dropped, report.dropped_range, report.dropped_parse,
                 report.dropped_duplicate, report.dropped_grid)
    block = make_block(origin, lead, np.array(feats, dtype=float).reshape(len(origin), len(FEATURE_COLUMNS)),
                       power)
    return block, report


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def ingest(paths, grid: LeadGrid, labels=None, nominal_capacity: float | None = None, columns=None):
    """Read one CSV per weather model; returns ``(DataSet, [IngestReport])``.

    Features are left in their file units; see :class:`MinMaxNormalizer`.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise DomainError("at least one weather-model file is required")
    blocks, reports = [], []
    for p in paths:
        block, report = read_weather_file(p, grid, nominal_capacity, columns)
        blocks.append(block)
        reports.append(report)
    labels = labels or [p.stem for p in paths]
    return attach_recent_power(DataSet(blocks, grid, labels)), reports


def write_weather_file(data: DataSet, psi: int, path):
    """Write weather model ``psi`` (1-based) of ``data`` in the CSV layout."""
    b = data.blocks[psi - 1]
    if b.features.shape[1] != len(FEATURE_COLUMNS):
        raise DomainError(f"CSV layout needs {len(FEATURE_COLUMNS)} features, got {b.features.shape[1]}")
    rows = [list(COLUMNS)]
    hours = data.grid.delta / 3600.0
    for i in range(len(b)):
        lead_h = b.lead[i] * hours
        rows.append([format_time(data.grid.target_time(b.origin[i], b.lead[i])),
                     str(int(lead_h)) if lead_h == int(lead_h) else repr(lead_h)]
                    + [repr(float(v)) for v in b.features[i]]
                    + [repr(float(b.observation[i])) if b.observed[i] else ""])
    atomic_write(path, csv_text(rows))


# --- normalization ----------------------------------------------------------

@dataclass(frozen=True)
class MinMaxNormalizer:
    """Per weather model, per feature min-max scaling fitted on training origins."""

    lo: tuple[np.ndarray, ...]
    hi: tuple[np.ndarray, ...]

    @classmethod
    def fit(cls, data: DataSet, origins=None) -> "MinMaxNormalizer":
        lo, hi = [], []
        for b in data.blocks:
            X = b.features if origins is None else b.features[np.isin(b.origin, origins)]
            if len(X) == 0:
                raise DomainError("cannot fit normalization on an empty block")
            lo.append(X.min(axis=0))
            hi.append(X.max(axis=0))
        return cls(tuple(lo), tuple(hi))

    def _span(self, psi):
        span = self.hi[psi] - self.lo[psi]
        return np.where(span > 0, span, 1.0)

    def normalize(self, psi: int, X) -> np.ndarray:
        """Scale weather model ``psi`` (0-based) inputs; values outside the fit range are clipped."""
        return np.clip((np.asarray(X, dtype=float) - self.lo[psi]) / self._span(psi), 0.0, 1.0)

    def denormalize(self, psi: int, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self._span(psi) + self.lo[psi]

    def apply(self, data: DataSet) -> DataSet:
        from dataclasses import replace
        return data.with_blocks([replace(b, features=self.normalize(i, b.features))
                                 for i, b in enumerate(data.blocks)])


# --- experiment configuration ----------------------------------------------

@dataclass
class ExperimentConfig:
    """JSON experiment description; relative paths resolve against the file."""

    weather_models: list[tuple[str, Path]]
    forecasters: list[list[str]]
    grid: LeadGrid = LeadGrid(24, 48, 3600)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitPlan = field(default_factory=SplitPlan)
    output_dir: Path = Path("out")
    nominal_capacity: float | None = None
    name: str = "experiment"
    columns: dict[str, str] | None = None

    def __post_init__(self):
        if not self.weather_models:
            raise DomainError("config needs at least one weather model")
        if not self.forecasters or not all(self.forecasters):
            raise DomainError("config needs at least one forecaster per weather model")

    @property
    def paths(self) -> list[Path]:
        return [p for _, p in self.weather_models]

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.weather_models]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        from dataclasses import replace
        return replace(self, split=replace(self.split, seed=seed))

    def to_dict(self, base: Path | None = None) -> dict:
        t = self.train
        rel = (lambda p: os.path.relpath(p, base)) if base else str
        return {
            "name": self.name,
            "weather_models": [{"label": label, "path": rel(p)} for label, p in self.weather_models],
            "forecasters": self.forecasters,
            "grid": {"k_min": self.grid.k_min, "k_max": self.grid.k_max, "delta": self.grid.delta},
            "train": {
                "zeta": t.zeta, "zeta_grid": list(t.zeta_grid),
                "eta_init": dict(zip(EtaVector.names(), t.eta_init.as_array().tolist())),
                "eta_max": t.eta_max, "fatol": t.fatol, "xatol": t.xatol, "max_iter": t.max_iter,
                "stage_order": list(t.stage_order), "neighbor_count": t.neighbor_count,
                "smoothing_window": t.smoothing_window, "pinned": dict(t.pinned),
                "joint_refine": t.joint_refine,
                "forecaster_options": {k: dict(v) for k, v in t.forecaster_options},
            },
            "split": {"test_fraction": self.split.test_fraction, "folds": self.split.folds,
                      "seed": self.split.seed},
            "output_dir": rel(self.output_dir),
            "nominal_capacity": self.nominal_capacity,
            "columns": self.columns,
        }


_TRAIN_KEYS = {"zeta", "zeta_grid", "eta_init", "eta_max", "fatol", "xatol", "max_iter", "stage_order",
               "neighbor_count", "smoothing_window", "pinned", "joint_refine", "forecaster_options"}


def _train_config(d: dict) -> TrainConfig:
    unknown = set(d) - _TRAIN_KEYS
    if unknown:
        raise DomainError(f"unknown train keys {sorted(unknown)}")
    kw = dict(d)
    if "zeta_grid" in kw:
        kw["zeta_grid"] = tuple(float(z) for z in kw["zeta_grid"])
    if "eta_init" in kw:
        kw["eta_init"] = EtaVector(**{k: float(v) for k, v in kw["eta_init"].items()})
    if "stage_order" in kw:
        kw["stage_order"] = tuple(kw["stage_order"])
    if "pinned" in kw:
        kw["pinned"] = tuple(sorted((k, float(v)) for k, v in kw["pinned"].items()))
    if "forecaster_options" in kw:
        kw["forecaster_options"] = tuple(sorted(
            (kind, tuple(sorted(opts.items()))) for kind, opts in kw["forecaster_options"].items()))
    return TrainConfig(**kw)


def config_from_dict(d: dict, base: Path = Path(".")) -> ExperimentConfig:
    known = {"name", "weather_models", "forecasters", "grid", "train", "split", "output_dir",
             "nominal_capacity", "columns"}
    unknown = set(d) - known
    if unknown:
        raise DomainError(f"unknown config keys {sorted(unknown)}")
    wms = d.get("weather_models") or []
    models = []
    for i, wm in enumerate(wms):
        if "path" not in wm:
            raise DomainError(f"weather_models[{i}] needs a 'path'")
        p = Path(wm["path"])
        models.append((wm.get("label", p.stem), p if p.is_absolute() else base / p))
    kinds = d.get("forecasters", ["linear_regression", "knn_regressor"])
    if kinds and isinstance(kinds[0], str):
        kinds = [list(kinds) for _ in models]
    grid = LeadGrid(**d["grid"]) if "grid" in d else LeadGrid(24, 48, 3600)
    out = Path(d.get("output_dir", "out"))
    return ExperimentConfig(
        models, [list(k) for k in kinds], grid, _train_config(d.get("train", {})),
        SplitPlan(**d.get("split", {})), out if out.is_absolute() else base / out,
        d.get("nominal_capacity"), d.get("name", "experiment"), d.get("columns"),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    return config_from_dict(d, path.parent)


def save_config(cfg: ExperimentConfig, path):
    path = Path(path)
    atomic_write(path, json.dumps(cfg.to_dict(path.parent), indent=2, sort_keys=True) + "\n")


# --- bundles ----------------------------------------------------------------

def _enc(x):
    if isinstance(x, np.ndarray):
        a = np.ascontiguousarray(x)
        dtype = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        return {"__nd__": dtype.str, "shape": list(a.shape),
                "data": base64.b64encode(a.astype(dtype).tobytes()).decode("ascii")}
    if isinstance(x, dict):
        return {str(k): _enc(v) for k, v in x.items() if not str(k).startswith("_")}
    if isinstance(x, (list, tuple)):
        return [_enc(v) for v in x]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _dec(x):
    if isinstance(x, dict):
        if "__nd__" in x:
            raw = base64.b64decode(x["data"])
            return np.frombuffer(raw, dtype=np.dtype(x["__nd__"])).reshape(x["shape"]).copy()
        return {k: _dec(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_dec(v) for v in x]
    return x


@dataclass
class Bundle:
    model: CSGEModel
    normalizer: MinMaxNormalizer | None = None
    labels: tuple[str, ...] = ()
    test_origins: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _bundle_payload(b: Bundle) -> dict:
    st = b.model.state
    return {
        "grid": {"k_min": st.grid.k_min, "k_max": st.grid.k_max, "delta": st.grid.delta},
        "members": st.members,
        "global_rmse": st.global_rmse,
        "lead_ratio": st.lead_ratio,
        "eta": dict(zip(EtaVector.names(), st.eta.as_array().tolist())),
        "stores": [{"mean": s.standardizer.mean, "scale": s.standardizer.scale, "points": s.points,
                    "abs_errors": s.abs_errors, "neighbor_count": s.neighbor_count} for s in st.stores],
        "forecasters": [[None if f is None else {
            "kind": f.kind, "params": f.params, "feature_dims": f.feature_dims,
            "clip_range": list(f.clip_range), "ridge": f.ridge} for f in row] for row in b.model.forecasters],
        "kinds": b.model.kinds,
        "normalizer": None if b.normalizer is None else {"lo": list(b.normalizer.lo), "hi": list(b.normalizer.hi)},
        "labels": list(b.labels),
        "test_origins": b.test_origins,
        "meta": b.meta,
    }


def bundle_bytes(b: Bundle) -> bytes:
    text = json.dumps(_enc(_bundle_payload(b)), sort_keys=True, separators=(",", ":"), allow_nan=True)
    payload = gzip.compress(text.encode("utf-8"), mtime=0)
    return _HEADER.pack(MAGIC, BUNDLE_VERSION, len(payload)) + payload


def save_bundle(b: Bundle, path):
    atomic_write(path, bundle_bytes(b))


def load_bundle(path) -> Bundle:
    raw = Path(path).read_bytes()
    return bundle_from_bytes(raw, str(path))


def bundle_from_bytes(raw: bytes, name: str = "<bundle>") -> Bundle:
    if len(raw) < _HEADER.size:
        raise BundleError(f"{name}: truncated header ({len(raw)} bytes)")
    magic, version, length = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BundleError(f"{name}: not a bundle (bad magic {magic!r})")
    if version != BUNDLE_VERSION:
        raise BundleError(f"{name}: bundle version {version} found, expected {BUNDLE_VERSION}")
    payload = raw[_HEADER.size:]
    if len(payload) != length:
        raise BundleError(f"{name}: truncated payload ({len(payload)} of {length} bytes)")
    try:
        d = _dec(json.loads(gzip.decompress(payload).decode("utf-8")))
    except (OSError, EOFError, ValueError) as e:
        raise BundleError(f"{name}: corrupt payload ({e})") from None
    grid = LeadGrid(**d["grid"])
    stores = [HistoricStore(Standardizer(s["mean"], s["scale"]), s["points"], s["abs_errors"],
                            int(s["neighbor_count"])) for s in d["stores"]]
    state = WeightState(grid, d["members"].astype(bool), d["global_rmse"], d["lead_ratio"], stores,
                        EtaVector(**d["eta"]))
    forecasters = [[None if f is None else ForecasterState(
        f["kind"], f["params"], int(f["feature_dims"]), tuple(f["clip_range"]), bool(f["ridge"]))
        for f in row] for row in d["forecasters"]]
    norm = d["normalizer"]
    normalizer = None if norm is None else MinMaxNormalizer(tuple(norm["lo"]), tuple(norm["hi"]))
    return Bundle(CSGEModel(state, forecasters, d["kinds"]), normalizer, tuple(d["labels"]),
                  d["test_origins"], d["meta"])


# --- traces and reports ----------------------------------------------------

TRACE_COLUMNS = (
    "origin", "lead", "weather_model", "power_model", "weather_label", "power_kind",
    "g_wx", "l_wx", "k_wx", "g_pow", "l_pow", "k_pow", "raw", "weight", "member_value",
    "ensemble", "observation",
)


def trace_rows(panel, diag: Diagnostics, members, labels=(), kinds=()):
    """One row per available member per prediction."""
    rows = [list(TRACE_COLUMNS)]
    for n in range(len(panel)):
        for psi, phi in zip(*np.nonzero(members)):
            if not diag.available[n, psi, phi]:
                continue
            rows.append([
                format_time(panel.origin[n]), str(int(panel.lead[n])), str(psi + 1), str(phi + 1),
                labels[psi] if psi < len(labels) else "", kinds[psi][phi] if kinds else "",
                fmt_float(diag.g_wx[n, psi]), fmt_float(diag.l_wx[n, psi]), fmt_float(diag.k_wx[n, psi]),
                fmt_float(diag.g_pow[n, psi, phi]), fmt_float(diag.l_pow[n, psi, phi]),
                fmt_float(diag.k_pow[n, psi, phi]), fmt_float(diag.raw[n, psi, phi]),
                fmt_float(diag.weights[n, psi, phi]), fmt_float(diag.values[n, psi, phi]),
                fmt_float(diag.ensemble[n]),
                fmt_float(panel.observation[n]) if panel.observed[n] else "",
            ])
    return rows


def emit_weight_trace(panel, diag: Diagnostics, members, path, labels=(), kinds=()):
    atomic_write(path, csv_text(trace_rows(panel, diag, members, labels, kinds)))


def write_json(path, obj):
    atomic_write(path, json.dumps(_enc(obj), indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_score_table(table, baseline: str, path):
    atomic_write(path, csv_text(table.to_csv_rows(baseline)))
