"""Command-line entry point: ``atc-demand <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 invalid data or configuration,
3 numeric failure. All randomness derives from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .errors import AtcDemandError, CheckpointError, ConfigError, DataError, NumericError

log = logging.getLogger("atc_demand")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        sys.stderr.write(f"\n{self.prog}: error: {message}\n")
        raise _UsageError(message)


# --- helpers ----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h) for h in header]
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _load_config(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{args.config}: top level must be a mapping")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(sec)


def _build(cls, options: dict, what: str):
    try:
        return cls.from_dict(options) if hasattr(cls, "from_dict") else cls(**options)
    except TypeError as exc:
        raise ConfigError(f"invalid {what} options: {exc}") from None


def _out(args, default: str) -> Path:
    return Path(args.out if args.out else default)


def _read(path, **kw):
    from .synth.io import read_dataset
    return read_dataset(path, **kw)


def _ensemble(path):
    from .gnn.checkpoint import load_ensemble
    return load_ensemble(path)


def _fl_buffer(ens) -> float:
    return float(ens.members[0].config.fl_buffer)


def _labels(scenarios) -> np.ndarray:
    if any(s.labels is None for s in scenarios):
        raise DataError("this command needs a labelled dataset")
    return np.array([s.label_total for s in scenarios], dtype=float)


# --- commands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    from .synth import OracleConfig, SynthConfig, generate_dataset, write_dataset

    cfg = _load_config(args)
    synth = _section(cfg, "synth")
    synth["seed"] = args.seed
    if args.hours is not None:
        synth["hours"] = args.hours
    if args.interval is not None:
        synth["snapshot_interval"] = args.interval
    sc = _build(SynthConfig, synth, "synth")
    oc = _build(OracleConfig, _section(cfg, "oracle"), "oracle")
    data = generate_dataset(sc, oc)
    meta = {"generator": sc.to_dict(), "oracle": dict(oc.__dict__), "version": __version__}
    if not args.deterministic:
        meta["created"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    lo, hi = sc.fl_band
    out = write_dataset(_out(args, "data.jsonl"), data, (lo, hi), sc.fl_clamp, meta)
    log.info("wrote %d scenarios to %s", len(data), out)
    return EXIT_OK


def cmd_features(args) -> int:
    from .scenario import EDGE_FEATURES, NODE_FEATURES

    rows = [("node", k, n, kind) for k, (n, kind) in enumerate(NODE_FEATURES)]
    rows += [("edge", k, n, kind) for k, (n, kind) in enumerate(EDGE_FEATURES)]
    if args.manifest and args.checkpoint:
        ens = _ensemble(args.checkpoint)
        stats = ens.members[0].stats
        stat_of = {("node", s.name): s for s in stats.node} | {("edge", s.name): s for s in stats.edge}
        detail = [stat_of[(r[0], r[2])].to_dict() for r in rows]
    else:
        detail = None
    if args.out:
        header = ["kind", "index", "name", "encoding"]
        write_csv(args.out, header, rows)
    else:
        for k, r in enumerate(rows):
            extra = "" if detail is None else "  " + json.dumps(detail[k], sort_keys=True)
            print(f"{r[0]:4s} {r[1]:2d}  {r[2]:20s} {r[3]}{extra}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .gnn.checkpoint import save_ensemble
    from .gnn.training import TrainConfig, cross_validate

    cfg = _section(_load_config(args), "train")
    cfg["seed"] = args.seed
    if args.epochs is not None:
        cfg["epochs"] = args.epochs
    tc = _build(TrainConfig, cfg, "train")
    data = _read(args.data)
    if args.folds < 2:
        raise ConfigError("--folds must be >= 2")
    log.info("training %d folds on %d scenarios", args.folds, len(data))
    result = cross_validate(data, args.folds, tc, workers=max(1, args.threads or 1))
    out_dir = Path(args.out_dir or args.out or "checkpoints")
    save_ensemble(result.ensemble.members, out_dir, deterministic=args.deterministic)
    write_csv(out_dir / "folds.csv", ["fold", "n_train", "n_val", "n_test", "test_mae", "test_ci95", "best_epoch"],
              [[f.fold, f.n_train, f.n_val, f.n_test, f.test_mae, f.test_ci95, f.best_epoch] for f in result.folds])
    log.info("wrote ensemble to %s", out_dir)
    return EXIT_OK


def _baseline_predictions(scenarios, method: str, cfg: dict) -> np.ndarray:
    from .baselines import FactorConfig, linear_complexity, minimum_clearance

    if method == "min-clearance":
        return np.array([minimum_clearance(s) for s in scenarios], dtype=float)
    sec = _section(cfg, "baseline")
    weights = sec.get("weights")
    if not isinstance(weights, dict) or not weights:
        raise ConfigError("the linear baseline needs baseline.weights (factor name -> weight) in --config")
    fc = _build(FactorConfig, {k: tuple(v) if isinstance(v, list) else v
                               for k, v in (sec.get("factors") or {}).items()}, "factor")
    return np.array([linear_complexity(s, weights, fc) for s in scenarios], dtype=float)


def cmd_evaluate(args) -> int:
    from .analysis import bucketed_errors, mae_with_ci, wilcoxon_test
    from .graphs import build_graphs

    cfg = _load_config(args)
    ens = _ensemble(args.checkpoint)
    data = _read(args.data)
    truth = _labels(data)
    pred = ens.predict(build_graphs(data, ens.members[0].stats, _fl_buffer(ens)))
    methods = {"gnn": pred.graph_median, "min-clearance": _baseline_predictions(data, "min-clearance", cfg)}
    if _section(cfg, "baseline").get("weights"):
        methods["linear"] = _baseline_predictions(data, "linear", cfg)
    out = _out(args, "evaluation")
    out.mkdir(parents=True, exist_ok=True)
    gnn_err = np.abs(methods["gnn"] - truth)
    rows = []
    for name, p in methods.items():
        mae, ci = mae_with_ci(p, truth)
        p_value = None
        if name != "gnn":
            try:
                p_value = wilcoxon_test(gnn_err, np.abs(p - truth)).p_value
            except DataError:
                p_value = None
        rows.append([name, mae, ci, len(truth), p_value])
    write_csv(out / "evaluation.csv", ["method", "mae", "ci95", "n", "wilcoxon_p_vs_gnn"], rows)
    edges = np.percentile(truth, ens.members[0].config.bucket_percentiles)
    brows = []
    for name, p in methods.items():
        for b in bucketed_errors(p, truth, edges):
            brows.append([name, b.bucket, b.lo, b.hi, b.mae, b.median_signed_error, b.count])
    write_csv(out / "buckets.csv", ["method", "bucket", "lo", "hi", "mae", "median_signed_error", "count"], brows)
    write_csv(out / "predictions.csv", ["timestamp", "target", "p10", "p50", "p90"],
              [[s.timestamp, t, *q] for s, t, q in zip(data, truth, pred.graph_quantiles)])
    _report_svg(out / "buckets.csv", out / "buckets.svg")
    log.info("quantile crossing rate before sorting: %.4f", pred.crossing_rate)
    return EXIT_OK


def _bucket_label(lo: str, hi: str) -> str:
    lo_v, hi_v = float(lo), float(hi)
    if math.isinf(lo_v):
        return f"<= {hi_v:g}"
    if math.isinf(hi_v):
        return f"> {lo_v:g}"
    return f"({lo_v:g}, {hi_v:g}]"


def _report_svg(buckets_csv, out_svg) -> Path:
    from .plots import bucket_chart

    rows = read_csv(buckets_csv)
    if not rows:
        raise DataError(f"{buckets_csv} has no rows")
    series: dict[str, list] = {}
    labels: dict[int, str] = {}
    try:
        for r in rows:
            k = int(r["bucket"])
            series.setdefault(r["method"], []).append(float(r["mae"]) if r["mae"] else math.nan)
            labels.setdefault(k, _bucket_label(r["lo"], r["hi"]))
    except (KeyError, ValueError) as exc:
        raise DataError(f"{buckets_csv}: not a bucket table ({exc})") from None
    return bucket_chart(out_svg, [labels[k] for k in sorted(labels)], series)


def cmd_importance(args) -> int:
    from .analysis import all_feature_importances, structure_ablation_eval
    from .plots import bar_chart
    from .scenario import NODE_FEATURE_NAMES

    ens = _ensemble(args.checkpoint)
    data = _read(args.data)
    buf = _fl_buffer(ens)
    results = all_feature_importances(ens, data, args.repeats, args.seed, fl_buffer=buf)
    rows = [[r.name, "node" if r.name in NODE_FEATURE_NAMES else "edge", r.delta_mae, r.ci95,
             r.repeat_ci95, r.mae_orig] for r in results]
    if args.structure_samples:
        for mode, n in (("random", args.structure_samples), ("edgeless", 1)):
            r = structure_ablation_eval(ens, data, mode, n, args.seed, buf)
            rows.append([f"{mode}_edges" if mode == "random" else mode, "structure", r.delta_mae, r.ci95,
                         r.repeat_ci95, r.mae_orig])
    out = _out(args, "importance.csv")
    write_csv(out, ["feature", "kind", "delta_mae", "ci95", "repeat_ci95", "mae_orig"], rows)
    ordered = sorted(rows, key=lambda r: -r[2])
    bar_chart(out.with_suffix(".svg"), [r[0] for r in ordered], [r[2] for r in ordered], [r[3] for r in ordered])
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .demand import demand_rows, demand_timeline, scenario_demand
    from .graphs import build_graph

    ens = _ensemble(args.checkpoint_dir)
    data = _read(args.scenario_file)
    buf = _fl_buffer(ens)
    if args.interval:
        reports = demand_timeline(ens, data, args.interval, buf)
    else:
        reports = [scenario_demand(ens, build_graph(s, ens.members[0].stats, buf)) for s in data if s.aircraft]
    write_csv(_out(args, "report.csv"), ["timestamp", "callsign", "phi", "C_of_G", "p10", "p90"],
              demand_rows(reports))
    return EXIT_OK


def _indicator_config(args, cfg: dict) -> tuple[float, float]:
    from .indicators import DEFAULT_H_THRESH_NM, DEFAULT_V_THRESH_FT

    sec = _section(cfg, "indicators")
    h = args.h_thresh if args.h_thresh is not None else float(sec.get("h_thresh_nm", DEFAULT_H_THRESH_NM))
    v = args.v_thresh if args.v_thresh is not None else float(sec.get("v_thresh_ft", DEFAULT_V_THRESH_FT))
    return h, v


INDICATOR_COLUMNS = ("edge_density", "strength", "clustering_coefficient", "nearest_neighbour_degree")


def cmd_indicators(args) -> int:
    from .indicators import scenario_indicators

    h, v = _indicator_config(args, _load_config(args))
    data = _read(args.scenario_file)
    rows = []
    for s in data:
        ind = scenario_indicators(s, h, v).as_dict()
        rows.append([s.timestamp, len(s.aircraft)] + [ind[c] for c in INDICATOR_COLUMNS])
    write_csv(_out(args, "indicators.csv"), ["timestamp", "n_aircraft", *INDICATOR_COLUMNS], rows)
    return EXIT_OK


def _pearson_or_none(x, y) -> Optional[float]:
    from .analysis import pearson

    pairs = [(a, b) for a, b in zip(x, y) if a is not None and b is not None]
    if len(pairs) < 2:
        return None
    try:
        return pearson([a for a, _ in pairs], [b for _, b in pairs])
    except DataError:
        return None


def cmd_timeline(args) -> int:
    from .demand import demand_timeline
    from .indicators import lag_correlation, scenario_indicators

    cfg = _load_config(args)
    h, v = _indicator_config(args, cfg)
    ens = _ensemble(args.checkpoint_dir)
    data = _read(args.scenario_file)
    reports = demand_timeline(ens, data, args.interval, _fl_buffer(ens))
    t0 = data[0].timestamp if data else 0.0
    first: dict[int, object] = {}
    for s in data:
        first.setdefault(int(math.floor((s.timestamp - t0) / args.interval + 1e-9)), s)
    series: dict[str, list] = {"demand": [], "traffic_count": [], "clearances": []}
    series.update({c: [] for c in INDICATOR_COLUMNS})
    timestamps = []
    for k, r in enumerate(reports):
        s = first.get(k)
        if r is None or s is None:
            timestamps.append(t0 + k * args.interval)
            for col in series.values():
                col.append(None)
            continue
        timestamps.append(s.timestamp)
        series["demand"].append(r.scenario_total)
        series["traffic_count"].append(len(s.aircraft))
        series["clearances"].append(None if s.labels is None else s.label_total)
        ind = scenario_indicators(s, h, v).as_dict()
        for c in INDICATOR_COLUMNS:
            series[c].append(ind[c])
    out = _out(args, "timeline")
    out.mkdir(parents=True, exist_ok=True)
    names = list(series)
    write_csv(out / "timeline.csv", ["tick", "timestamp", *names],
              [[k, timestamps[k], *[series[n][k] for n in names]] for k in range(len(timestamps))])
    corr = []
    for n in ["demand", *INDICATOR_COLUMNS]:
        corr.append([n, _pearson_or_none(series[n], series["clearances"]),
                     _pearson_or_none(series[n], series["traffic_count"])])
    write_csv(out / "correlations.csv", ["signal", "r_clearances", "r_traffic_count"], corr)
    lags = []
    for c in INDICATOR_COLUMNS:
        try:
            res = lag_correlation(series["demand"], series[c], args.max_lag)
            lags.append([c, res.best_lag, res.best_lag * args.interval, res.best_r])
        except DataError:
            lags.append([c, None, None, None])
    write_csv(out / "lags.csv", ["indicator", "best_lag", "best_lag_s", "r"], lags)
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .analysis import mae_with_ci

    data = _read(args.data)
    pred = _baseline_predictions(data, args.method, _load_config(args))
    labelled = all(s.labels is not None for s in data)
    rows = [[s.timestamp, p, s.label_total if labelled else None] for s, p in zip(data, pred)]
    write_csv(_out(args, f"baseline_{args.method}.csv"), ["timestamp", "estimate", "target"], rows)
    if labelled and len(data) >= 2:
        mae, ci = mae_with_ci(pred, _labels(data))
        print(f"{args.method}: MAE {mae:.4f} +/- {ci:.4f} (n={len(data)})")
    return EXIT_OK


def cmd_report(args) -> int:
    from .plots import bar_chart

    src = Path(args.inputs)
    buckets = src / "buckets.csv" if src.is_dir() else src
    if not buckets.exists():
        raise DataError(f"no bucket table at {buckets}")
    out = _out(args, "report.svg")
    _report_svg(buckets, out)
    if args.importance:
        rows = read_csv(args.importance)
        try:
            rows.sort(key=lambda r: -float(r["delta_mae"]))
            bar_chart(out.with_name(out.stem + "_importance.svg"), [r["feature"] for r in rows],
                      [float(r["delta_mae"]) for r in rows], [float(r["ci95"] or 0) for r in rows])
        except (KeyError, ValueError) as exc:
            raise DataError(f"{args.importance}: not an importance table ({exc})") from None
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def _shared(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="root seed for every random sub-stream")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--deterministic", action="store_true", help="omit wall-clock timestamps from outputs")
    p.add_argument("--threads", type=int, default=None, help="worker processes for fold training")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atc-demand", description="Clearance prediction and per-aircraft task demand for air-traffic scenarios.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("generate", help="simulate traffic and write a labelled dataset")
    _shared(p)
    p.add_argument("--hours", type=float)
    p.add_argument("--interval", type=float, help="snapshot interval in seconds")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("features", help="print the feature manifest")
    _shared(p)
    p.add_argument("--manifest", action="store_true", help="include fitted statistics (with --checkpoint)")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="k-fold training of the ensemble")
    _shared(p)
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="MAE table, bucketed errors and chart")
    _shared(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", help="permutation feature importance")
    _shared(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--structure-samples", type=int, default=0,
                   help="also report random-edge (this many samples) and edgeless ablations")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("ablate", help="per-aircraft task demand")
    _shared(p)
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--scenario-file", required=True)
    p.add_argument("--interval", type=float, help="one report per tick of this many seconds")
    p.set_defaults(func=cmd_ablate)

    for name, fn, helptext in (("indicators", cmd_indicators, "graph complexity indicators per snapshot"),
                               ("timeline", cmd_timeline, "demand, indicator and count series with correlations")):
        p = sub.add_parser(name, help=helptext)
        _shared(p)
        p.add_argument("--scenario-file", required=True)
        p.add_argument("--h-thresh", type=float, help="horizontal threshold, NM")
        p.add_argument("--v-thresh", type=float, help="vertical threshold, ft")
        if name == "timeline":
            p.add_argument("--checkpoint-dir", required=True)
            p.add_argument("--interval", type=float, default=60.0)
            p.add_argument("--max-lag", type=int, default=20)
        p.set_defaults(func=fn)

    p = sub.add_parser("baseline", help="heuristic clearance estimates")
    _shared(p)
    p.add_argument("--method", choices=("min-clearance", "linear"), required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="charts from evaluation outputs")
    _shared(p)
    p.add_argument("--inputs", required=True, help="evaluation directory or bucket CSV")
    p.add_argument("--importance", help="importance CSV for a bar chart")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_USAGE
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"atc-demand: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, CheckpointError) as exc:
        print(f"atc-demand: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AtcDemandError as exc:
        print(f"atc-demand: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
