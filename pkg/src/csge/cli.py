"""Command-line entry point.

Subcommands::

    synth-gen   write a catalog scenario as CSV files plus a config
    train       fit the ensemble described by a config and save a bundle
    predict     forecast with a bundle, optionally dropping members
    evaluate    score a bundle against simple comparison methods
    ablate      train the comparison methods of one or more configs
    trace       write per-member weight factors for a range of origins

Failures print one JSON line ``{"error": ..., "message": ...}`` to stderr
and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import DomainError, MemberId
from .experiments import ASPECTS, default_methods, pin_disabled, run_methods
from .metrics import ScoreTable, r_squared, rmse
from .synth import generate, scenario_catalog
from .training import SplitPlan, fit_csge, prepare, split
from .weighting import EtaVector

log = logging.getLogger("csge")


# --- shared helpers ---------------------------------------------------------

def _load(args):
    if not args.config:
        raise DomainError("--config is required")
    cfg = io.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg=None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None:
        return cfg.output_dir
    raise DomainError("--out is required")


def _ingest(cfg):
    data, reports = io.ingest(cfg.paths, cfg.grid, cfg.labels, cfg.nominal_capacity, cfg.columns)
    for r in reports:
        if r.dropped:
            log.warning("%s: dropped %d rows", r.path, r.dropped)
    return data, reports


def _normalized_training_data(cfg):
    raw, reports = _ingest(cfg)
    origins = np.unique(raw.panel(require_observation=True).origin)
    sp = split(origins, cfg.split)
    normalizer = io.MinMaxNormalizer.fit(raw, sp.train)
    return normalizer.apply(raw), normalizer, sp, reports


def _bundle_data(args, bundle: io.Bundle):
    """Data for bundle commands: ``--data`` files, else the ``--config`` files."""
    grid = bundle.model.state.grid
    if args.data:
        paths, labels, capacity, columns = args.data, list(bundle.labels), None, None
        if args.config:
            cfg = _load(args)
            capacity, columns = cfg.nominal_capacity, cfg.columns
    else:
        cfg = _load(args)
        paths, labels, capacity, columns = cfg.paths, cfg.labels, cfg.nominal_capacity, cfg.columns
    if len(paths) != bundle.model.state.members.shape[0]:
        raise DomainError(f"bundle has {bundle.model.state.members.shape[0]} weather models, "
                          f"got {len(paths)} data files")
    data, _ = io.ingest(paths, grid, labels, capacity, columns)
    if bundle.normalizer is not None:
        data = bundle.normalizer.apply(data)
    return data


def _parse_drop(values) -> list[MemberId]:
    return [MemberId.parse(v) for v in values or ()]


def _score_row(pred, obs):
    return rmse(pred, obs), r_squared(pred, obs)


# --- commands -----------------------------------------------------------------

def cmd_synth_gen(args):
    catalog = scenario_catalog()
    if args.scenario not in catalog:
        raise DomainError(f"unknown scenario {args.scenario!r}; choose from {sorted(catalog)}")
    spec = catalog[args.scenario]
    if args.seed is not None:
        spec = spec.with_(seed=args.seed)
    if args.n_origins is not None:
        spec = spec.with_(n_origins=args.n_origins)
    out = _out_dir(args)
    data = generate(spec)
    models = []
    for psi, label in enumerate(data.labels, start=1):
        path = out / f"{label}.csv"
        io.write_weather_file(data, psi, path)
        models.append((label, path))
    cfg = io.ExperimentConfig(models, [list(spec.forecasters)] * len(models), spec.grid,
                              split=SplitPlan(seed=spec.seed), output_dir=out / "run", name=spec.name)
    io.save_config(cfg, out / "config.json")
    print(out / "config.json")


def cmd_train(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    data, normalizer, sp, reports = _normalized_training_data(cfg)
    model, report, prepared = fit_csge(data, cfg.forecasters, cfg.train, cfg.split)
    meta = {"name": cfg.name, "seed": cfg.split.seed, "report": report.to_dict(),
            "dropped_rows": {r.path: r.dropped for r in reports}}
    bundle = io.Bundle(model, normalizer, data.labels, sp.test, meta)
    io.save_bundle(bundle, out / "bundle.csge")
    test_pred, _ = prepared.test.predict(report.eta)
    summary = {"eta": report.to_dict()["eta"], "zeta": report.zeta,
               "test_rmse": rmse(test_pred, prepared.test.observation),
               "member_oof_rmse": report.to_dict()["member_rmse"]}
    io.write_json(out / "train_report.json", {**meta, "summary": summary})
    print(out / "bundle.csge")


def cmd_predict(args):
    bundle = io.load_bundle(args.bundle)
    data = _bundle_data(args, bundle)
    drop = _parse_drop(args.drop_member)
    panel = data.panel(require_observation=False)
    keep = bundle.model.usable_rows(panel, drop)
    if not keep.all():
        log.warning("%d rows have no available member and are skipped", int((~keep).sum()))
    panel = panel.take(keep)
    pred, weights = bundle.model.predict(panel, drop=drop)
    rows = [["origin", "lead", "target_time", "prediction", "observation", "weight_sum"]]
    grid = panel.grid
    for i in range(len(panel)):
        rows.append([io.format_time(panel.origin[i]), str(int(panel.lead[i])),
                     io.format_time(grid.target_time(panel.origin[i], panel.lead[i])),
                     io.fmt_float(pred[i]),
                     io.fmt_float(panel.observation[i]) if panel.observed[i] else "",
                     io.fmt_float(weights[i].sum())])
    out = _out_dir(args)
    io.atomic_write(out / "predictions.csv", io.csv_text(rows))
    print(out / "predictions.csv")


def evaluate_bundle(bundle: io.Bundle, data, rows: str = "test"):
    """Score table of the bundle against members, equal weights and the best member."""
    model = bundle.model
    panel = data.panel(require_observation=True)
    if rows == "test":
        if bundle.test_origins is None:
            raise DomainError("bundle has no test origins; use --rows all")
        panel = panel.rows_for_origins(bundle.test_origins)
    panel = panel.take(model.usable_rows(panel))
    if len(panel) == 0:
        raise DomainError("no scorable rows")
    obs = panel.observation
    methods, preds = [], []
    methods.append("CSGE")
    preds.append(model.predict(panel)[0])
    methods.append("Equal")
    preds.append(model.predict(panel, eta=EtaVector.zeros())[0])
    values, available = model.member_predictions(panel)
    members = model.state.members
    R = np.where(members, model.state.global_rmse, np.inf)
    best = np.unravel_index(np.argmin(R), R.shape)
    for psi, phi in zip(*np.nonzero(members)):
        name = f"{psi + 1}:{phi + 1} {bundle.labels[psi] if psi < len(bundle.labels) else ''}/{model.kinds[psi][phi]}"
        ok = available[:, psi, phi]
        if not ok.all():
            log.warning("member %s misses %d rows; scored where available", name, int((~ok).sum()))
        # fall back to the ensemble where the member is missing so rows stay comparable
        pred = np.where(ok, values[:, psi, phi], preds[0])
        if (psi, phi) == best:
            methods.insert(2, "Best-Single")
            preds.insert(2, pred)
        methods.append(name)
        preds.append(pred)
    table = ScoreTable(methods)
    scores = [_score_row(p, obs) for p in preds]
    table.add(bundle.meta.get("name", "data"), [s[0] for s in scores], [s[1] for s in scores])
    return table


def cmd_evaluate(args):
    bundle = io.load_bundle(args.bundle)
    data = _bundle_data(args, bundle)
    table = evaluate_bundle(bundle, data, args.rows)
    out = _out_dir(args)
    io.write_score_table(table, args.baseline, out / "scores.csv")
    io.write_json(out / "scores.json", {"methods": table.methods, "datasets": table.datasets,
                                        "rmse": table.rmse, "r2": table.r2,
                                        "summary": table.summary(args.baseline)})
    print(out / "scores.csv")


def cmd_ablate(args):
    aspects = args.aspects.replace(",", "")
    if not aspects or set(aspects) - set(ASPECTS):
        raise DomainError(f"--aspects must be a subset of g,l,k; got {args.aspects!r}")
    configs = [io.load_config(p) for p in args.config]
    if args.seed is not None:
        configs = [c.with_seed(args.seed) for c in configs]
    results, names = [], None
    for cfg in configs:
        data, _, _, _ = _normalized_training_data(cfg)
        prepared = prepare(data, cfg.forecasters, cfg.train, cfg.split)
        methods = default_methods(prepared)
        res = run_methods(prepared, cfg.train, methods)
        if aspects != "glk":
            variant = f"CSGE-{aspects}"
            sub = run_methods(prepared, pin_disabled(cfg.train, aspects), ["CSGE-M"])["CSGE-M"]
            sub.name = variant
            res[variant] = sub
        obs = prepared.test.observation
        results.append((cfg.name, res, obs))
        names = list(res) if names is None else [n for n in names if n in res]
    table = ScoreTable(names)
    detail = {}
    for dataset, res, obs in results:
        scores = [_score_row(res[n].test_prediction, obs) for n in names]
        table.add(dataset, [s[0] for s in scores], [s[1] for s in scores])
        detail[dataset] = {n: {"eta": None if res[n].report is None else
                               dict(zip(EtaVector.names(), res[n].report.eta.as_array().tolist())),
                               "test_rmse": res[n].test_rmse} for n in names}
    baseline = args.baseline if args.baseline in names else names[0]
    out = _out_dir(args, configs[0])
    io.write_score_table(table, baseline, out / "ablation.csv")
    io.write_json(out / "ablation.json", {"aspects": aspects, "baseline": baseline, "methods": names,
                                          "datasets": table.datasets, "detail": detail,
                                          "summary": table.summary(baseline)})
    print(out / "ablation.csv")


def _time_arg(text: str) -> int:
    text = text.strip()
    return int(text) if text.lstrip("-").isdigit() else io.parse_time(text)


def cmd_trace(args):
    bundle = io.load_bundle(args.bundle)
    data = _bundle_data(args, bundle)
    panel = data.panel(require_observation=False)
    if args.origin_range:
        if "/" in args.origin_range:
            lo, hi = args.origin_range.split("/", 1)
        elif args.origin_range.count(":") == 1 and "T" not in args.origin_range:
            lo, hi = args.origin_range.split(":")
        else:
            raise DomainError("--origin-range must be START/END (ISO-8601) or START:END (epoch seconds)")
        lo, hi = _time_arg(lo), _time_arg(hi)
        panel = panel.take((panel.origin >= lo) & (panel.origin <= hi))
    panel = panel.take(bundle.model.usable_rows(panel))
    if len(panel) == 0:
        raise DomainError("no predictions in the requested origin range")
    _, diag = bundle.model.predict(panel, diagnostics=True)
    out = _out_dir(args)
    io.emit_weight_trace(panel, diag, bundle.model.state.members, out / "trace.csv",
                         bundle.labels, bundle.model.kinds)
    print(out / "trace.csv")


# --- parser -------------------------------------------------------------------

class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises on bad usage so that ``main`` reports it like any other failure."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the split / scenario seed (default: from config or catalog)")
    common.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    common.add_argument("--log-level", default="WARNING", help="logging level (default: %(default)s)")

    def with_config(p, repeatable=False):
        if repeatable:
            p.add_argument("--config", action="append", required=True,
                           help="experiment config (JSON); repeat for several datasets")
        else:
            p.add_argument("--config", default=None, help="experiment config (JSON)")

    def with_bundle(p):
        p.add_argument("--bundle", required=True, help="bundle written by 'train'")
        p.add_argument("--data", action="append", default=None,
                       help="weather-model CSV, one per weather model in bundle order "
                            "(default: files of --config)")

    parser = _Parser(prog="csge", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", parents=[common], help="generate a synthetic scenario",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("scenario", help=f"one of {', '.join(sorted(scenario_catalog()))}")
    p.add_argument("--n-origins", type=int, default=None, help="override the number of origins")
    with_config(p)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", parents=[common], help="train and save a bundle",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    with_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict with a bundle",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    with_config(p)
    with_bundle(p)
    p.add_argument("--drop-member", action="append", default=None, metavar="PSI:PHI",
                   help="treat a member as unavailable (repeatable)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="score a bundle",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    with_config(p)
    with_bundle(p)
    p.add_argument("--baseline", default="Best-Single", help="method the skill rows refer to")
    p.add_argument("--rows", choices=("test", "all"), default="test",
                   help="score the bundle's test origins or every row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="compare ensemble variants",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    with_config(p, repeatable=True)
    p.add_argument("--aspects", default="g,l,k",
                   help="enabled weighting aspects for the extra CSGE variant (subset of g,l,k)")
    p.add_argument("--baseline", default="Best-Single", help="method the skill rows refer to")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trace", parents=[common], help="write weight traces",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    with_config(p)
    with_bundle(p)
    p.add_argument("--origin-range", default=None,
                   help="inclusive START/END (ISO-8601) or START:END (epoch seconds)")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except Exception as e:  # one parsable line for any failure
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
