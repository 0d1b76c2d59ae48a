"""Command-line entry point.

Every command takes ``--seed`` (all randomness derives from it), ``--jobs``
and ``--config`` (a YAML or JSON file whose keys set flag defaults). Output
files start with ``#`` provenance lines: package version, command, seed and
a hash of the effective configuration. The output directory defaults to
``$HOUSING_ABM_OUTPUT_DIR`` or the working directory.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from housing_abm import __version__
from housing_abm.analysis import affordability_curve, area_regression, band_summary, coverage, mobility_heatmap
from housing_abm.behavior import BehaviorConstants, ParameterVector
from housing_abm.calibration import (
    PARAM_NAMES, SEARCH_SPACE, CalibrationProblem, apply_global_constraint, optimize, train_test_split,
)
from housing_abm.engine import ConservationError, run
from housing_abm.ensemble import monte_carlo
from housing_abm.loss import combined_loss
from housing_abm.scenario import Scenario, ScenarioError, generate_synthetic_scenario, load_scenario, save_scenario
from housing_abm.sensitivity import MorrisDesign, morris_screen, oat_sweep
from housing_abm.trace import MOVE_DTYPE, MoverKind, read_moves_csv, read_region_series, read_trace_csv, write_json

OUTPUT_ENV = "HOUSING_ABM_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("housing_abm")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    """Effective configuration of one command, minus execution-only flags."""

    command: str
    seed: int
    options: dict

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        skip = {"func", "command", "seed", "jobs", "config", "out", "verbose"}
        opts = {k: _plain(v) for k, v in sorted(vars(args).items()) if k not in skip}
        return cls(args.command, args.seed, opts)

    def to_json(self) -> dict:
        return {"command": self.command, "seed": self.seed, **self.options}

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def header(self) -> dict:
        return {"version": __version__, "command": self.command, "seed": self.seed, "config_hash": self.digest}


def _plain(v):
    if isinstance(v, ParameterVector):
        return ",".join(f"{k}={x!r}" for k, x in v.as_dict().items())
    return v


# --------------------------------------------------------------------------
# helpers


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _params(text: str) -> ParameterVector:
    try:
        return ParameterVector.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def resolve_scenario(spec: str, scale: float | None = None) -> Scenario:
    """Scenario from a bundle directory or ``synthetic:key=value,...``.

    Synthetic keys: seed, areas, months, scale, topology, households.
    """
    if spec.startswith("synthetic"):
        kw = {"seed": 0, "areas": 20, "months": 36}
        _, _, rest = spec.partition(":")
        for part in filter(None, rest.split(",")):
            k, _, v = part.partition("=")
            kw[k.strip()] = v.strip()
        try:
            sc = generate_synthetic_scenario(
                int(kw.pop("seed")), int(kw.pop("areas")), int(kw.pop("months")),
                scale=float(kw.pop("scale", 100.0)), topology=str(kw.pop("topology", "adjacency")),
                households=float(kw.pop("households", 1.8e6)),
            )
        except TypeError as exc:
            raise UsageError(str(exc)) from exc
        if kw:
            raise UsageError(f"unknown synthetic keys {sorted(kw)}")
    else:
        path = Path(spec)
        if not path.is_dir():
            raise DataError(f"scenario directory not found: {spec}")
        sc = load_scenario(path)
    if scale is not None:
        sc = dataclasses.replace(sc, scale=float(scale))
    return sc


def _out_dir(args) -> Path:
    base = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ENV, "."))
    base.mkdir(parents=True, exist_ok=True)
    return base


def _out_file(args, default: str) -> Path:
    if args.out and Path(args.out).suffix:
        p = Path(args.out)
        if not p.is_absolute() and os.environ.get(OUTPUT_ENV):
            p = Path(os.environ[OUTPUT_ENV]) / p
    else:
        p = _out_dir(args) / default
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _header_lines(header: dict) -> list[str]:
    return [f"# {k}: {v}" for k, v in sorted(header.items())]


def _write_csv(path: Path, header: dict, columns: list[str], rows) -> Path:
    lines = _header_lines(header) + [",".join(columns)]
    lines += [",".join(_cell(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    if isinstance(v, np.floating):
        return _cell(float(v))
    return str(v)


def _actual_series(args, scenario: Scenario) -> np.ndarray:
    if args.actual:
        path = Path(args.actual)
        if not path.exists():
            raise DataError(f"actual series not found: {path}")
        return read_region_series(path)
    obs = scenario.observed_median()
    if obs is None or not np.isfinite(obs).any():
        raise DataError("scenario has no observed price series; pass --actual")
    return obs


def _split_months(actual: np.ndarray, split: float) -> int:
    train, _ = train_test_split(actual, split)
    return int(train.size)


def _pool(jobs: int | None):
    n = (os.cpu_count() or 1) if jobs is None else jobs
    return ProcessPoolExecutor(max_workers=n) if n > 1 else None


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    sc = generate_synthetic_scenario(
        args.seed, args.areas, args.months, households=args.households, equilibration=args.equilibration,
        scale=args.scale, topology=args.topology,
    )
    out = save_scenario(sc, _out_dir(args) if args.out else _out_dir(args) / "scenario")
    print(out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = RunConfig.from_args(args)
    sc = resolve_scenario(args.scenario, args.scale)
    ens = monte_carlo(sc, args.params, args.months, args.runs, args.seed, args.jobs)
    header = {**cfg.header(), **ens.provenance(sc)}
    out = _out_dir(args)
    (out / "traces.csv").write_text(ens.traces_csv_text(header))
    (out / "summary.csv").write_text(ens.summary_csv_text(header))
    write_json(ens.summary_json(header), out / "summary.json")
    move_lines = _header_lines(header) + ["run,month,household,from_area,to_area,kind"]
    for i, tr in enumerate(ens.traces):
        for m in tr.moves:
            move_lines.append(f"{i}," + ",".join(str(int(m[k])) for k in m.dtype.names))
    (out / "moves.csv").write_text("\n".join(move_lines) + "\n")
    write_json(cfg.to_json(), out / "run_config.json")
    print(out / "traces.csv")
    return EXIT_OK


def cmd_score(args) -> int:
    for p in (args.actual, args.simulated):
        if not Path(p).exists():
            raise DataError(f"file not found: {p}")
    a, s = read_region_series(args.actual), read_region_series(args.simulated)
    rep = combined_loss(a, s, args.lam)
    out = {"dtw": rep.shape, "tdi": rep.temporal, "combined": rep.combined, "lam": args.lam}
    if args.out:
        write_json({"provenance": RunConfig.from_args(args).header(), **out}, _out_file(args, "score.json"))
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def _problem(args, sc: Scenario, pool) -> CalibrationProblem:
    actual = _actual_series(args, sc)
    months = _split_months(actual, args.split)
    return CalibrationProblem(sc, actual, months, args.repeats, args.seed, args.lam, pool=pool)


def cmd_calibrate(args) -> int:
    cfg = RunConfig.from_args(args)
    sc = resolve_scenario(args.scenario, args.scale)
    pool = _pool(args.jobs)
    try:
        prob = _problem(args, sc, pool)
        cb = (lambda t: log.info("trial %d loss %.6g", t.index, t.loss)) if args.verbose else None
        res = optimize(prob, args.trials, args.seed, callback=cb)
    finally:
        if pool is not None:
            pool.shutdown()
    path = res.write_jsonl(_out_file(args, "trials.jsonl"), header=cfg.header())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        chosen = apply_global_constraint(res.trials, args.constraint)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    best = {
        "provenance": cfg.header(),
        "best": {"index": res.best.index, "loss": res.best.loss, "params": res.best.params.as_dict()},
        "constrained": {"index": chosen.index, "loss": chosen.loss, "params": chosen.params.as_dict(),
                        "constraint": args.constraint, "satisfied": not caught},
        "train_months": prob.train_months,
    }
    write_json(best, path.with_name(path.stem + "_best.json"))
    print(json.dumps({"best": best["best"], "constrained": best["constrained"]}, sort_keys=True))
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    cfg = RunConfig.from_args(args)
    sc = resolve_scenario(args.scenario, args.scale)
    design = MorrisDesign(tuple(SEARCH_SPACE[k] for k in PARAM_NAMES), PARAM_NAMES, args.r, args.p)
    pool = _pool(args.jobs)
    try:
        prob = _problem(args, sc, pool)
        res = morris_screen(lambda x: prob.evaluate(ParameterVector(*map(float, x)))[0], design, args.seed)
    finally:
        if pool is not None:
            pool.shutdown()
    path = _out_file(args, "morris.csv")
    rows = [(r["parameter"], r["mu_star"], r["sigma"], r["mu_star_ci"], r["mu"], r["class"]) for r in res.rows()]
    _write_csv(path, cfg.header(), ["parameter", "mu_star", "sigma", "ci95", "mu", "class"], rows)
    raw = [(n, j, float(e)) for n, ee in zip(res.names, res.effects) for j, e in enumerate(ee)]
    _write_csv(path.with_name(path.stem + "_effects.csv"), cfg.header(), ["parameter", "index", "effect"], raw)
    print(path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = RunConfig.from_args(args)
    sc = resolve_scenario(args.scenario, args.scale)
    path = _out_file(args, f"sweep_{args.mode}.csv")
    if args.mode == "pm20":
        base = BehaviorConstants()
        names = args.names.split(",") if args.names else [
            f.name for f in dataclasses.fields(base)
            if isinstance(getattr(base, f.name), float) and sc.constants.get(f.name) is None]
        center = {n: getattr(base, n) for n in names}

        def trace_of(point):
            consts = dataclasses.replace(base, **{k: type(center[k])(v) for k, v in point.items()})
            return run(sc, args.params, args.months, args.seed, consts).region_median

        sweep = oat_sweep(trace_of, center, names, "pm20", args.width, args.points)
        rows = [(p.parameter, p.value, i, float(v)) for p in sweep.points for i, v in enumerate(p.output)]
        _write_csv(path, cfg.header(), ["parameter", "value", "month", "median_price"], rows)
    else:
        pool = _pool(args.jobs)
        try:
            prob = _problem(args, sc, pool)
            center = args.params.as_dict()
            names = args.names.split(",") if args.names else list(PARAM_NAMES)
            sweep = oat_sweep(lambda p: prob.evaluate(ParameterVector(**p))[0], center, names, "levels100",
                              n_points=args.points, bounds=SEARCH_SPACE)
        finally:
            if pool is not None:
                pool.shutdown()
        _write_csv(path, cfg.header(), ["parameter", "value", "loss"],
                   [(p.parameter, p.value, float(p.output)) for p in sweep.points])
    print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = RunConfig.from_args(args)
    if not Path(args.traces).exists():
        raise DataError(f"traces not found: {args.traces}")
    runs = read_trace_csv(args.traces)
    header = cfg.header()
    if args.kind == "coverage":
        if not args.actual:
            raise UsageError("coverage needs --actual")
        series = np.stack([r.region_median for r in runs.values()])
        actual = read_region_series(args.actual)
        split = None
        if args.split is not None:
            split = int(args.split) if args.split >= 1 else _split_months(actual, args.split)
        rep = coverage(band_summary(series), actual[: series.shape[1]], split)
        path = write_json({"provenance": header, **rep.to_json()}, _out_file(args, "coverage.json"))
    elif args.kind == "regression":
        if not args.actual:
            raise UsageError("regression needs --actual")
        first = next(iter(runs.values()))
        i = -1 if args.month is None else int(np.searchsorted(first.month, args.month))
        pred = np.stack([r.area_median[i] for r in runs.values()])
        act_runs = read_trace_csv(args.actual)
        actual = next(iter(act_runs.values())).area_median[i]
        fc = area_regression(pred, actual)
        path = write_json({"provenance": header, **fc.to_json(first.area_names)}, _out_file(args, "regression.json"))
    else:
        if not args.moves or not Path(args.moves).exists():
            raise DataError("mobility needs an existing --moves file")
        moves = read_moves_csv(args.moves)
        kind = MoverKind[args.mover_kind.upper()]
        out = _out_dir(args) if not (args.out and Path(args.out).suffix) else Path(args.out).parent
        total = None
        for r, stored in runs.items():
            # runs are averaged with equal weight
            hm = mobility_heatmap(moves.get(r, np.zeros(0, dtype=MOVE_DTYPE)), stored.area_households,
                                  np.nanmedian(np.stack([s.area_median[-1] for s in runs.values()]), axis=0),
                                  kind, stored.month)
            total = hm.matrix if total is None else total + hm.matrix
        hm.matrix = total / max(total.sum(), 1e-300) if total.sum() > 0 else total
        hm.names = next(iter(runs.values())).area_names
        path = out / f"mobility_{kind.name.lower()}.csv"
        path.write_text("\n".join(_header_lines(header)) + "\n" + hm.to_csv_text())
        curve = affordability_curve(hm)
        write_json({"provenance": header, "kind": kind.name, "order": [hm.names[i] for i in hm.order],
                    "affordability_curve": curve.tolist()}, out / f"mobility_{kind.name.lower()}.json")
    print(path)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    common.add_argument("--config", default=None, help="YAML/JSON file of flag defaults")
    common.add_argument("--out", default=None, help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", required=True, help="bundle directory or synthetic:seed=..,areas=..,months=..")
    scen.add_argument("--scale", type=float, default=None, help="override the scenario's agent scale")

    fit = argparse.ArgumentParser(add_help=False)
    fit.add_argument("--actual", default=None, help="observed series (trace CSV or month,price CSV)")
    fit.add_argument("--split", type=float, default=0.75, help="training fraction of the observed series")
    fit.add_argument("--repeats", type=_positive_int, default=3)
    fit.add_argument("--lam", type=float, default=0.5, help="weight of the time-distortion term")

    p = argparse.ArgumentParser(prog="housing-abm", description="Agent-based housing market simulator.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic scenario bundle")
    g.add_argument("--areas", type=_positive_int, required=True)
    g.add_argument("--months", type=_positive_int, default=48)
    g.add_argument("--scale", type=float, default=100.0)
    g.add_argument("--households", type=float, default=1.8e6)
    g.add_argument("--equilibration", type=int, default=12)
    g.add_argument("--topology", choices=("adjacency", "complete", "singleton"), default="adjacency")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", parents=[common, scen], help="Monte Carlo ensemble of runs")
    s.add_argument("--runs", type=_positive_int, default=1)
    s.add_argument("--months", type=_positive_int, default=None)
    s.add_argument("--params", type=_params, default=ParameterVector())
    s.set_defaults(func=cmd_simulate)

    sc = sub.add_parser("score", parents=[common], help="DTW/TDI loss between two series")
    sc.add_argument("--actual", required=True)
    sc.add_argument("--simulated", required=True)
    sc.add_argument("--lam", type=float, default=0.5)
    sc.set_defaults(func=cmd_score)

    c = sub.add_parser("calibrate", parents=[common, scen, fit], help="TPE search over (h, beta, alpha)")
    c.add_argument("--trials", type=_positive_int, default=50)
    c.add_argument("--constraint", choices=("peak", "none"), default="peak")
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("sensitivity", parents=[common, scen, fit], help="Morris screening")
    m.add_argument("--r", type=_positive_int, default=20)
    m.add_argument("--p", type=_positive_int, default=10)
    m.set_defaults(func=cmd_sensitivity)

    w = sub.add_parser("sweep", parents=[common, scen, fit], help="one-at-a-time sweeps")
    w.add_argument("--mode", choices=("pm20", "levels100"), default="pm20")
    w.add_argument("--params", type=_params, default=ParameterVector())
    w.add_argument("--names", default=None, help="comma-separated names to vary")
    w.add_argument("--width", type=float, default=0.2)
    w.add_argument("--points", type=_positive_int, default=None)
    w.add_argument("--months", type=_positive_int, default=None)
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", parents=[common], help="coverage, regression and mobility reports")
    r.add_argument("--kind", choices=("coverage", "regression", "mobility"), required=True)
    r.add_argument("--traces", required=True)
    r.add_argument("--actual", default=None)
    r.add_argument("--split", type=float, default=None, help="split month (>= 1) or training fraction")
    r.add_argument("--month", type=int, default=None, help="month for the area regression (default: last)")
    r.add_argument("--moves", default=None)
    r.add_argument("--mover-kind", default="first_time_buyer",
                   choices=[k.name.lower() for k in MoverKind])
    r.set_defaults(func=cmd_report)
    return p


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config not found: {path}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise DataError("config must be a mapping")
    return {k.replace("-", "_"): v for k, v in data.items() if k != "command"}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        defaults = _load_config(known.config)
        cmd = next((a for a in argv if not a.startswith("-")), None)
        choices = parser._subparsers._group_actions[0].choices
        if cmd not in choices:
            raise UsageError("a command must precede --config")
        actions = {a.dest: a for a in choices[cmd]._actions}
        for k, v in defaults.items():
            if k not in actions:
                raise UsageError(f"unknown config key {k!r}")
            act = actions[k]
            if isinstance(v, dict) and k == "params":
                v = ",".join(f"{a}={b}" for a, b in v.items())
            if act.type is not None and isinstance(v, str):
                v = act.type(v)
            act.default = v
            act.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.verbose:
        logging.getLogger("housing_abm").setLevel(logging.INFO)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, ConservationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ScenarioError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
