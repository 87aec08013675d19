"""Command line pipeline driver.

Subcommands: init, synth, train, detect, isolate, sweep, report.
Exit codes: 0 success (or clean detection), 2 fault declared by detect,
1 usage or configuration error, 3 numeric failure. Runs are
deterministic in the seed (flag > SFDSFI_SEED > config) and reruns with
--force produce byte-identical artifacts.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .dataset import (GeneratorConfig, SensorSeries, SplitSpec, fit_normalizer,
                      gen_synthetic, load_csv, save_csv, split)
from .errors import (CalibrationError, ConfigError, Error, NumericError,
                     ParseError)
from .numerics import labeled_rng
from .persist import Checkpoint, load_checkpoint, save_checkpoint
from .predictor import FfnnModel, GruModel, TrainConfig, predict_series, train
from .residuals import calibrate_profile, residual_stream
from .sfd import FusionConfig, detect_stream
from .sfi import SfiWindow, SparseSolveConfig, greedy_isolation, greedy_isolation_sparse

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "data": {
        "csv": None,
        "synth": {
            "n_sensors": 8,
            "n_samples": 120000,
            **GeneratorConfig().to_dict(),
        },
    },
    "split": {"train": 0.661, "validation": 0.073, "test": 0.266},
    "train": {
        "model": "gru",
        "hidden_size": 32,
        "window": 8,
        "ffnn_hidden": 30,
        "epochs": 8,
        "batch_size": 110,
        "lr": 0.001,
        "lambda": 0.01,
        "target_sensor": None,
    },
    "fusion": {"m": 60, "alpha": 0.1, "p_fa": 0.01},
    "sfi": {"length": 60, "eta": 0.0, "warmup": 120, "algo": "greedy"},
    "sweep": {
        "betas": [0.0, 0.025, 0.05, 0.075, 0.1, 0.15, 0.2, 0.25, 0.3],
        "channels": None,
        "runs_per_point": 20,
        "battery_runs": 100,
        "eta_grid": [0.0, 0.01, 1.0, 10.0, 100.0, 500.0, 1000.0],
        "smearing_channel": 0,
    },
}


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = dict(defaults)
    for key, val in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and isinstance(val, dict):
            out[key] = _merge(defaults[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: invalid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return _merge(DEFAULT_CONFIG, user)


def resolve_seed(cfg: dict, flag_seed: int | None) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("SFDSFI_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SFDSFI_SEED must be an integer, got {env!r}") from None
    return int(cfg["seed"])


def _fresh(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")
    return path


def _load_series(cfg: dict, seed: int, data_arg: str | None) -> SensorSeries:
    if data_arg is not None:
        return load_csv(data_arg)
    if cfg["data"]["csv"]:
        return load_csv(cfg["data"]["csv"])
    synth = dict(cfg["data"]["synth"])
    s = int(synth.pop("n_sensors"))
    n = int(synth.pop("n_samples"))
    return gen_synthetic(s, n, seed, GeneratorConfig.from_dict(synth))


def _split_spec(cfg: dict) -> SplitSpec:
    sp = cfg["split"]
    return SplitSpec(sp["train"], sp["validation"], sp["test"])


def _fusion(cfg: dict) -> FusionConfig:
    f = cfg["fusion"]
    return FusionConfig.design(int(f["m"]), float(f["p_fa"]), float(f["alpha"]))


def _build_model(cfg: dict, n_sensors: int, seed: int):
    tr = cfg["train"]
    if tr["model"] == "gru":
        return GruModel(n_sensors, int(tr["hidden_size"]), seed=seed)
    if tr["model"] == "ffnn":
        return FfnnModel(n_sensors, int(tr["window"]), int(tr["ffnn_hidden"]),
                         seed=seed)
    raise ConfigError(f"train.model must be 'gru' or 'ffnn', got {tr['model']!r}")


def _train_one(cfg: dict, series: SensorSeries, seed: int, lam: float,
               target_sensor: int | None = None):
    tr = cfg["train"]
    train_raw, val_raw, _ = split(series.values, _split_spec(cfg))
    stats = fit_normalizer(train_raw)
    tconf = TrainConfig(epochs=int(tr["epochs"]), batch_size=int(tr["batch_size"]),
                        lr=float(tr["lr"]), lam=lam, target_sensor=target_sensor,
                        seed=seed)
    model = _build_model(cfg, series.n_sensors, seed)
    result = train(model, stats.apply(train_raw), stats.apply(val_raw), tconf)
    profile = calibrate_profile(model, stats.apply(val_raw),
                                float(cfg["fusion"]["p_fa"]))
    return Checkpoint(model, stats, tconf, profile, result.history)


def _stack(ckpt: Checkpoint, fusion: FusionConfig) -> ev.DetectorStack:
    if ckpt.profile is None:
        raise ConfigError("checkpoint has no residual profile; re-run train")
    return ev.DetectorStack(ckpt.model, ckpt.stats, ckpt.profile, fusion)


# -- subcommands ---------------------------------------------------------------

def cmd_init(args) -> int:
    out = _fresh(Path(args.out), args.force)
    out.write_text(json.dumps(DEFAULT_CONFIG, indent=2, sort_keys=True) + "\n")
    print(f"wrote default config to {out}")
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    _split_spec(cfg)  # surface bad fractions before generating anything
    seed = resolve_seed(cfg, args.seed)
    series = _load_series(cfg, seed, None)
    out = _fresh(Path(args.out), args.force)
    save_csv(out, series)
    print(f"wrote {series.n_sensors}x{series.n_samples} series to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    lam = cfg["train"]["lambda"] if args.lam is None else args.lam
    target = cfg["train"]["target_sensor"]
    series = _load_series(cfg, seed, args.data)
    out = Path(args.out)

    def emit(ckpt: Checkpoint, path: Path):
        save_checkpoint(_fresh(path, args.force), ckpt)
        hist = path.with_name(path.stem + "-history.json")
        _fresh(hist, args.force).write_text(
            json.dumps(ckpt.history, indent=1, sort_keys=True) + "\n")
        final = ckpt.history[-1]
        print(f"wrote {path} (val mse {final['val_mse']:.5g})")

    if args.two_stage:
        det = _train_one(cfg, series, seed, lam=0.0)
        iso = _train_one(cfg, series, seed + 1, lam=lam, target_sensor=target)
        emit(det, out.with_name(out.stem + "-detector.json"))
        emit(iso, out.with_name(out.stem + "-isolator.json"))
    else:
        emit(_train_one(cfg, series, seed, lam=lam, target_sensor=target), out)
    return 0


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    ckpt = load_checkpoint(args.ckpt)
    series = load_csv(args.data)
    expected = ckpt.model.n_sensors
    if series.n_sensors != expected:
        raise ConfigError(f"checkpoint expects {expected} channels, "
                          f"data has {series.n_sensors}")
    stack = _stack(ckpt, _fusion(cfg))
    values = ckpt.stats.apply(series.values)
    run = predict_series(ckpt.model, values)
    stream = residual_stream(values, run)
    verdicts = detect_stream(stream.norms, stack.profile.gamma, stack.fusion,
                             labeled_rng(seed, "detect"), start_index=stream.start)
    out = _fresh(Path(args.out), args.force)
    with open(out, "w") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_dict(), sort_keys=True) + "\n")
    n_h1 = sum(v.verdict == "H1" for v in verdicts)
    print(f"{len(verdicts)} batches, {n_h1} declared faulty; wrote {out}")
    return 2 if n_h1 else 0


def _first_h1(verdicts_path: str) -> int | None:
    with open(verdicts_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            v = json.loads(line)
            if v.get("verdict") == "H1":
                return int(v["t_star"])
    return None


def cmd_isolate(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    del seed  # isolation itself is deterministic
    ckpt = load_checkpoint(args.ckpt)
    series = load_csv(args.data)
    if series.n_sensors != ckpt.model.n_sensors:
        raise ConfigError(f"checkpoint expects {ckpt.model.n_sensors} channels, "
                          f"data has {series.n_sensors}")
    fusion = _fusion(cfg)
    sfi_cfg = cfg["sfi"]
    warmup = int(sfi_cfg["warmup"])
    length = int(sfi_cfg["length"])

    if args.t_star is not None:
        t_star = args.t_star
    else:
        if args.verdicts is None:
            raise ConfigError("isolate needs --verdicts (from detect) or --t-star")
        t_star = _first_h1(args.verdicts)
        if t_star is None:
            if not args.force:
                raise ConfigError("no faulty batch in the verdict file; "
                                  "pass --force to isolate anyway")
            t_star = warmup + 1
    lo = t_star - warmup
    hi = t_star + fusion.m + 1 + length
    if lo < 0 or hi > series.n_samples:
        raise ConfigError(f"isolation window [{lo}, {hi}) overruns the series")
    block = ckpt.stats.apply(series.values[:, lo:hi])
    window = SfiWindow(block, t_star=warmup, t_i=warmup + fusion.m + 1,
                       length=length)
    algo = args.algo or sfi_cfg["algo"]
    profile = _stack(ckpt, fusion).profile
    if algo == "greedy":
        report = greedy_isolation(ckpt.model, window, profile, fusion)
    elif algo == "sparse":
        eta = float(sfi_cfg["eta"] if args.eta is None else args.eta)
        report = greedy_isolation_sparse(ckpt.model, window, profile, fusion,
                                         SparseSolveConfig(eta=eta))
    else:
        raise ConfigError(f"sfi.algo must be 'greedy' or 'sparse', got {algo!r}")
    doc = report.to_dict()
    doc["t_star"] = t_star
    # report biases in raw sensor units
    doc["delta_hat"] = [d * ckpt.stats.std[c]
                        for c, d in zip(report.fault_list, report.delta_hat)]
    doc["delta_hat_normalized"] = report.delta_hat
    out = _fresh(Path(args.out), args.force)
    out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    names = [series.names[c] for c in report.fault_list]
    print(f"isolated {names or 'no faults'}; wrote {out}")
    return 0


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(cfg, args.seed)
    det_ckpt = load_checkpoint(args.ckpt)
    iso_ckpt = load_checkpoint(args.isolator) if args.isolator else det_ckpt
    series = _load_series(cfg, seed, args.data)
    _, _, test_raw = split(series.values, _split_spec(cfg))
    fusion = _fusion(cfg)
    det = _stack(det_ckpt, fusion)
    iso = _stack(iso_ckpt, fusion)
    sw = cfg["sweep"]
    outdir = _ensure_dir(Path(args.out))
    for name in ("sweep.csv", "curves.csv", "contrib.csv", "battery.json"):
        _fresh(outdir / name, args.force)

    spec = ev.SweepSpec(betas=tuple(sw["betas"]),
                        channels=tuple(sw["channels"]) if sw["channels"] else None,
                        runs_per_point=int(sw["runs_per_point"]),
                        warmup=int(cfg["sfi"]["warmup"]), seed=seed)
    result = ev.pd_sweep(det, test_raw, spec, jobs=args.jobs)
    ev.write_sweep_csv(outdir / "sweep.csv", result.rows)
    ev.write_curves_csv(outdir / "curves.csv",
                        result.points + ev.average_curve(result, seed=seed))

    smear = ev.smearing_experiment(
        {"detector": det, "isolator": iso}, test_raw,
        channel=int(sw["smearing_channel"]), betas=tuple(sw["betas"]),
        length=int(cfg["sfi"]["length"]), warmup=int(cfg["sfi"]["warmup"]),
        seed=seed)
    ev.write_contrib_csv(outdir / "contrib.csv", smear["rows"])

    bspec = ev.BatterySpec(n_runs=int(sw["battery_runs"]),
                           etas=tuple(sw["eta_grid"]),
                           length=int(cfg["sfi"]["length"]),
                           warmup=int(cfg["sfi"]["warmup"]), seed=seed)
    battery = ev.fault_battery(det, iso.model, iso.profile, test_raw, bspec,
                               jobs=args.jobs)
    synth = cfg["data"]["synth"]
    (outdir / "battery.json").write_text(json.dumps({
        "spec": {"n_runs": bspec.n_runs, "etas": list(bspec.etas),
                 "length": bspec.length, "seed": bspec.seed},
        "rows": battery.rows,
        "miou": battery.miou,
        "detection_rate": battery.detection_rate,
        "crossover": smear["crossover"],
        "hard_channel": synth.get("hard_channel"),
    }, indent=1, sort_keys=True) + "\n")
    print(f"wrote sweep artifacts to {outdir}")
    return 0


def cmd_report(args) -> int:
    outdir = Path(args.out)
    bat_path = outdir / "battery.json"
    if not bat_path.exists():
        raise ConfigError(f"{bat_path} not found; run sweep first")
    battery = json.loads(bat_path.read_text())
    rows = battery["rows"]
    methods = sorted(rows[0]["methods"]) if rows else []
    seed = int(battery["spec"]["seed"])

    def method_metrics(subset):
        out = {}
        for name in methods:
            ious = [r["methods"][name]["iou"] for r in subset]
            exact = [set(r["methods"][name]["set"]) == set(r["channels"])
                     for r in subset]
            lo, hi = ev.bootstrap_ci(ious, seed=seed)
            out[name] = {
                "miou": float(np.mean(ious)),
                "miou_ci": [lo, hi],
                "acc": float(np.mean(exact)),
                "max_iterations": max(r["methods"][name]["iterations"]
                                      for r in subset),
            }
        return out

    metrics: dict = {"n_runs": len(rows),
                     "detection_rate": battery["detection_rate"],
                     "crossover": battery.get("crossover"),
                     "methods": method_metrics(rows) if rows else {}}
    hard = battery.get("hard_channel")
    if hard is not None and rows:
        # second table over runs untouched by the known-hard channel
        easy = [r for r in rows if hard not in r["channels"]]
        if easy:
            metrics["methods_excluding_hard_channel"] = method_metrics(easy)
            metrics["n_runs_excluding_hard_channel"] = len(easy)
    mpath = _fresh(outdir / "metrics.json", args.force)
    mpath.write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    spath = _fresh(outdir / "summary.csv", args.force)
    with open(spath, "w") as fh:
        fh.write("method,acc,miou,miou_ci_lo,miou_ci_hi\n")
        for name in methods:
            m = metrics["methods"][name]
            fh.write(f"{name},{m['acc']!r},{m['miou']!r},"
                     f"{m['miou_ci'][0]!r},{m['miou_ci'][1]!r}\n")
    print(f"wrote {mpath} and {spath}")
    return 0


# -- argument wiring -------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(
        prog="sfdsfi",
        description="Sensor fault detection and isolation pipeline.",
        epilog="examples:\n"
               "  sfdsfi init --out config.json\n"
               "  sfdsfi synth --config config.json --out data.csv\n"
               "  sfdsfi train --config config.json --two-stage --out ckpt.json\n"
               "  sfdsfi detect --ckpt ckpt-detector.json --data data.csv "
               "--out verdicts.jsonl\n"
               "  sfdsfi isolate --ckpt ckpt-isolator.json --data data.csv "
               "--verdicts verdicts.jsonl --out report.json\n",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override config seed (SFDSFI_SEED also honored)")
        p.add_argument("--out", default=out_default)
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")

    p = sub.add_parser("init", help="write the default config")
    common(p, "config.json")
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    common(p, "data.csv")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train predictor(s) and calibrate thresholds")
    common(p, "ckpt.json")
    p.add_argument("--data", default=None, help="training CSV (default: config data)")
    p.add_argument("--two-stage", action="store_true",
                   help="train a plain detector and a decorrelated isolator")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="decorrelation weight (default from config)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("detect", help="run batch detection over a CSV")
    common(p, "verdicts.jsonl")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("isolate", help="isolate faulty sensors after a detection")
    common(p, "report.json")
    p.add_argument("--ckpt", required=True, help="isolator checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--verdicts", default=None, help="JSONL from detect")
    p.add_argument("--t-star", type=int, default=None,
                   help="suspicion index (overrides --verdicts)")
    p.add_argument("--algo", choices=("greedy", "sparse"), default=None)
    p.add_argument("--eta", type=float, default=None,
                   help="L1 weight for --algo sparse")
    p.set_defaults(fn=cmd_isolate)

    p = sub.add_parser("sweep", help="detection sweep + isolation battery")
    common(p, "runs")
    p.add_argument("--ckpt", required=True, help="detector checkpoint")
    p.add_argument("--isolator", default=None, help="isolator checkpoint")
    p.add_argument("--data", default=None, help="CSV (default: config data)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="summarize sweep artifacts")
    common(p, "runs")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParseError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
