"""Command-line entry point.

Exit codes:
    0  success
    1  unexpected internal error
    2  bad arguments or config file
    3  data error (unreadable dataset, dimension mismatch, inconsistent orbit)
    4  numeric failure during training or evaluation
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import _kernels
from .codec import ZERO, Task, TaskConfig
from .config import ConfigError, load_spec, save_spec, task_to_dict
from .dataset import PROFILES, DatasetError, SplitSpec, read_header, read_packed, rule_set, write_split
from .eca import LatticeError, Orbit
from .experiments import (
    ConstantPredictor,
    DataMismatchError,
    ExperimentSpec,
    LookupPredictor,
    ModelPredictor,
    RuleInferencePredictor,
    ar_vs_la,
    autoregressive_rollout,
    depth_sweep,
    encode_dataset,
    eval_accuracy,
    metrics_row,
    plot_rows,
    train_model,
    write_curve_csv,
    write_metrics_csv,
)
from .inference import InconsistentOrbitError, complete_rule, coverage, coverage_curve, observe, tmin_estimate, write_curve_csv as write_coverage_csv
from .model import CheckpointError, NumericError, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("eca_lab")


def _setup_logging(out_dir=None, verbose=False):
    handlers = [logging.StreamHandler(sys.stderr)]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(out_dir) / "run.log", mode="w"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        handlers=handlers,
        force=True,
    )


def _write_ini(path, sections):
    parser = configparser.ConfigParser()
    for name, values in sections.items():
        parser[name] = {k: str(v) for k, v in values.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def cmd_gen_data(args):
    base = PROFILES[args.profile]
    spec = SplitSpec(
        train_count=args.train_count if args.train_count is not None else base.train_count,
        test_count=args.test_count if args.test_count is not None else base.test_count,
        master_seed=args.seed,
        radius=args.radius,
        width=args.width,
        steps=args.steps,
    )
    if spec.train_count + spec.test_count >= 500_000:
        log.warning("generating %d samples; this is the paper-scale profile and takes a while", spec.train_count + spec.test_count)
    out = Path(args.out)
    train_path, test_path = write_split(spec, out)
    train, test = read_packed(train_path), read_packed(test_path)
    shared = rule_set(train) & rule_set(test)
    if shared:
        raise DatasetError(f"post-write check failed: {len(shared)} rules appear in both splits")
    _write_ini(out / "gen_data.ini", {"split": {k: getattr(spec, k) for k in spec.__dataclass_fields__}})
    manifest = {
        "spec": {k: getattr(spec, k) for k in spec.__dataclass_fields__},
        "files": {"train": train_path.name, "test": test_path.name},
        "train_samples": len(train),
        "test_samples": len(test),
        "distinct_train_rules": len(rule_set(train)),
        "distinct_test_rules": len(rule_set(test)),
        "disjoint": True,
        "kernel_backend": _kernels.BACKEND,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {train_path} ({len(train)} samples) and {test_path} ({len(test)} samples); rule sets disjoint")
    return EXIT_OK


def cmd_dump_header(args):
    with open(args.path, "rb") as fh:
        print(read_header(fh).describe())
    return EXIT_OK


def cmd_infer_rule(args):
    text = Path(args.orbit_file).read_text() if args.orbit_file else args.text.replace(",", "\n")
    orbit = Orbit.from_text(text)
    r, w = args.radius, orbit.width
    print(f"radius {r}, width {w}, states {len(orbit)}, T_min estimate {tmin_estimate(r, w):.2f}")
    try:
        partial = observe(orbit, r)
    except InconsistentOrbitError as exc:
        print(f"inconsistent orbit: {exc}", file=sys.stderr)
        return EXIT_DATA
    rep = coverage(partial)
    print(f"coverage {rep.observed_count}/{rep.total} ({rep.coverage_fraction:.4f})")
    print(f"undetermined entries {rep.consistent_rule_count_log2} (2^{rep.consistent_rule_count_log2} consistent rules)")
    table = "".join(str(partial.entries[n]) if n in partial.entries else "?" for n in range(rep.total))
    print(f"partial table (n=0..{rep.total - 1}) {table}")
    rule = complete_rule(partial)
    print(f"rule number {rule.number}" if rule is not None else "rule number undetermined")
    return EXIT_OK


def cmd_coverage(args):
    rows = coverage_curve(args.radius, args.width, args.max_t, args.samples, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_coverage_csv(rows, out)
    print(f"T_min estimate {tmin_estimate(args.radius, args.width):.2f}")
    for t, mean_cov, frac in rows:
        print(f"t={t:3d}  coverage {mean_cov:.4f}  determined {frac:.4f}")
    return EXIT_OK


def _spec_from_args(args) -> ExperimentSpec:
    spec = load_spec(args.config)
    updates = {}
    for key in ("steps", "batch_size", "lr", "seed", "eval_every"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = value
    return replace(spec, **updates) if updates else spec


def _save_model(result, spec, out):
    extra = {"task": task_to_dict(spec.task), "best_step": result.best_step, "experiment_id": spec.experiment_id}
    save_checkpoint(result.model, out / "model.pt", extra)


def cmd_train(args):
    spec = _spec_from_args(args)
    out = Path(args.out)
    _setup_logging(out, args.verbose)
    save_spec(spec, out / "run.ini")
    result = train_model(spec)
    _save_model(result, spec, out)
    write_curve_csv(result.curve, out / "curve.csv")
    test = read_packed(spec.test_path)
    rec = eval_accuracy(ModelPredictor(result.model, spec.task), test, spec.task)
    rows = [metrics_row(spec.experiment_id, spec.task, spec.model.num_layers, i + 1, a, len(test) * spec.task.width) for i, a in enumerate(rec.per_step)]
    write_metrics_csv(rows, out / "metrics.csv")
    print(f"best held-out accuracy {result.best_accuracy:.4f} at step {result.best_step}; test accuracy {rec.accuracy:.4f}")
    return EXIT_OK


def _task_from_args(args, extra) -> TaskConfig:
    values = dict(extra.get("task", {}))
    if args.task is not None and values.get("task") not in (None, args.task):
        # the stored horizon belongs to the checkpoint's own task
        values.pop("horizon", None)
    for key in ("task", "prefix_len", "lookahead", "horizon", "width", "radius"):
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    if "task" not in values:
        raise ConfigError("the task must be given (checkpoint has no task metadata)")
    return TaskConfig(**values)


def _predictor(args, config, data):
    extra = {}
    if args.predictor == "model":
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required for the model predictor")
        model, _, extra = load_checkpoint(args.checkpoint)
        return ModelPredictor(model, config), extra
    if args.predictor == "oracle":
        x, y, _ = encode_dataset(data, config)
        return LookupPredictor(x, y), extra
    if args.predictor == "inference":
        return RuleInferencePredictor(config), extra
    return ConstantPredictor(ZERO, config), extra


def cmd_eval(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = read_packed(args.dataset)
    extra = load_checkpoint(args.checkpoint)[2] if args.checkpoint else {}
    config = _task_from_args(args, extra)
    predictor, _ = _predictor(args, config, data)
    rec = eval_accuracy(predictor, data, config)
    depth = ""
    if args.checkpoint:
        depth = load_checkpoint(args.checkpoint)[1].num_layers
    exp_id = args.experiment_id or f"eval-{args.predictor}"
    rows = [metrics_row(exp_id, config, depth, i + 1, a, len(data) * config.width) for i, a in enumerate(rec.per_step)]
    rows.append(metrics_row(exp_id, config, depth, "all", rec.accuracy, rec.n_bits))
    write_metrics_csv(rows, out / "metrics.csv")
    _write_ini(out / "eval.ini", {"eval": {k: v for k, v in vars(args).items() if k != "func"}, "task": task_to_dict(config)})
    print(f"accuracy {rec.accuracy:.4f} over {rec.n_bits} bits")
    if rec.rule_accuracy is not None:
        print(f"rule-bit accuracy {rec.rule_accuracy:.4f}")
    return EXIT_OK


def cmd_rollout(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = read_packed(args.dataset)
    extra = load_checkpoint(args.checkpoint)[2] if args.checkpoint else {}
    config = _task_from_args(args, extra)
    predictor, _ = _predictor(args, config, data)
    records = autoregressive_rollout(predictor, data, config, args.steps, teacher_forcing=args.teacher_forcing)
    exp_id = args.experiment_id or "rollout"
    depth = load_checkpoint(args.checkpoint)[1].num_layers if args.checkpoint else ""
    rows = [metrics_row(exp_id, config, depth, i + 1, r.accuracy, r.n_bits) for i, r in enumerate(records)]
    write_metrics_csv(rows, out / "rollout.csv")
    _write_ini(out / "rollout.ini", {"rollout": {k: v for k, v in vars(args).items() if k != "func"}, "task": task_to_dict(config)})
    if args.plot:
        plot_rows(rows, out / "rollout.svg", group="task", title="autoregressive rollout")
    for r in rows:
        print(f"step {r['step']}: accuracy {r['accuracy']}")
    return EXIT_OK


def cmd_ar_vs_la(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = read_packed(args.dataset)
    ar_model, _, ar_extra = load_checkpoint(args.ar)
    base = TaskConfig(**ar_extra["task"])
    la = {}
    for item in args.la:
        k, _, path = item.partition("=")
        model, _, extra = load_checkpoint(path)
        la[int(k)] = ModelPredictor(model, TaskConfig(**extra["task"]))
    horizons = [int(h) for h in args.horizons.split(",")]
    rows = ar_vs_la(ModelPredictor(ar_model, base), la, data, base, horizons)
    csv_rows = [
        {"experiment_id": f"{args.experiment_id}-{r['mode']}", "task": base.task.value, "k": r["horizon"] - 1, "depth": "", "step": r["horizon"], "accuracy": f"{r['accuracy']:.6f}", "n_bits": r["n_bits"]}
        for r in rows
    ]
    write_metrics_csv(csv_rows, out / "ar_vs_la.csv")
    if args.plot:
        plot_rows([dict(r, mode=r["experiment_id"]) for r in csv_rows], out / "ar_vs_la.svg", group="mode", title="AR vs LA")
    for r in rows:
        print(f"horizon {r['horizon']} {r['mode']}: {r['accuracy']:.4f}")
    return EXIT_OK


def cmd_depth_sweep(args):
    spec = _spec_from_args(args)
    out = Path(args.out)
    _setup_logging(out, args.verbose)
    save_spec(spec, out / "run.ini")
    layers = [int(x) for x in args.layers.split(",")]
    rows = depth_sweep(layers, spec)
    write_metrics_csv(rows, out / "depth_sweep.csv")
    if args.plot:
        plot_rows(rows, out / "depth_sweep.svg", group="depth", title="OO accuracy by depth")
    for r in rows:
        print(f"depth {r['depth']} step {r['step']}: {r['accuracy']}")
    return EXIT_OK


def _task_flags(p, with_task=True):
    if with_task:
        p.add_argument("--task", choices=[t.value for t in Task], help="task (default: from checkpoint)")
    p.add_argument("--prefix-len", dest="prefix_len", type=int)
    p.add_argument("--lookahead", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--radius", type=int)


def _budget_flags(p):
    p.add_argument("--config", required=True, help="INI run config with [data], [task], [model], [train] sections")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="eca-lab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a rule-disjoint train/test split")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--width", type=int, default=20)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--train-count", dest="train_count", type=int)
    p.add_argument("--test-count", dest="test_count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("dump-header", help="print a dataset header")
    p.add_argument("path")
    p.set_defaults(func=cmd_dump_header)

    p = sub.add_parser("infer-rule", help="recover the local rule from an orbit")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--orbit-file", help="text file, one state of 0/1 characters per line")
    g.add_argument("--text", help="states separated by commas, e.g. 00100,01100")
    p.add_argument("--radius", type=int, default=2)
    p.set_defaults(func=cmd_infer_rule)

    p = sub.add_parser("coverage", help="Monte Carlo truth-table coverage versus orbit length")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--width", type=int, default=20)
    p.add_argument("--max-t", dest="max_t", type=int, default=20)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("train", help="train one model from a run config")
    _budget_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (
        ("eval", cmd_eval, "per-bit accuracy of a predictor on a dataset"),
        ("rollout", cmd_rollout, "autoregressive rollout accuracy per step"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint")
        p.add_argument("--dataset", required=True)
        p.add_argument("--predictor", choices=["model", "oracle", "inference", "zero"], default="model")
        p.add_argument("--experiment-id", dest="experiment_id")
        p.add_argument("--out", required=True)
        _task_flags(p)
        if name == "rollout":
            p.add_argument("--steps", type=int, default=10)
            p.add_argument("--teacher-forcing", action="store_true")
            p.add_argument("--plot", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("ar-vs-la", help="compare autoregressive rollout with direct look-ahead models")
    p.add_argument("--ar", required=True, help="next-state checkpoint")
    p.add_argument("--la", action="append", default=[], help="k=CHECKPOINT, repeatable")
    p.add_argument("--dataset", required=True)
    p.add_argument("--horizons", default="2,3,4")
    p.add_argument("--experiment-id", dest="experiment_id", default="ar-vs-la")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ar_vs_la)

    p = sub.add_parser("depth-sweep", help="train OO models of several depths with matched budgets")
    _budget_flags(p)
    p.add_argument("--layers", default="1,2,4")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_depth_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not logging.getLogger().handlers:
        _setup_logging()
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, DataMismatchError, LatticeError, InconsistentOrbitError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
