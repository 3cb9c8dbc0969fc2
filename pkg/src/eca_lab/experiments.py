"""Training and evaluation protocols: per-bit accuracy, look-ahead planning,
autoregressive rollout, AR-vs-LA comparison and depth sweeps."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import _kernels
from .codec import ONE, ZERO, Task, TaskConfig, build_inputs, encode_arrays
from .dataset import PackedSamples, read_packed
from .eca import pack_rows, unpack_rows
from .model import Batch, EncoderModel, ModelConfig, ShapeError, init_params, make_optimizer, train_step

log = logging.getLogger(__name__)

CSV_COLUMNS = ["experiment_id", "task", "k", "depth", "step", "accuracy", "n_bits"]

Predictor = Callable[[np.ndarray], np.ndarray]


class DataMismatchError(ValueError):
    """Dataset dimensions disagree with the task configuration."""


@dataclass
class ExperimentSpec:
    task: TaskConfig
    model: ModelConfig
    train_path: str
    test_path: str
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-4
    warmup_steps: int = 0
    cosine_decay: bool = False
    eval_every: int = 250
    eval_samples: int = 1000
    seed: int = 0
    experiment_id: str = "run"

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("training budget must be non-negative and batch size positive")


@dataclass
class MetricsRecord:
    accuracy: float
    n_bits: int
    n_samples: int
    per_step: list = field(default_factory=list)
    task: str = ""
    lookahead: int = 0
    rule_accuracy: Optional[float] = None

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("a metrics record needs at least one sample")


@dataclass
class TrainResult:
    model: EncoderModel
    curve: list
    best_step: int
    best_accuracy: float


def check_data(data: PackedSamples, config: TaskConfig):
    h = data.header
    if h.width != config.width or h.radius != config.radius:
        raise DataMismatchError(f"dataset has W={h.width}, r={h.radius}; task expects W={config.width}, r={config.radius}")
    if h.steps < config.required_steps:
        raise DataMismatchError(f"dataset orbits have {h.steps} states, task needs {config.required_steps}")


def encode_dataset(data: PackedSamples, config: TaskConfig, chunk=20000):
    """Encode every sample; inputs and targets are stored as uint8."""
    check_data(data, config)
    inputs, targets = [], []
    for start in range(0, len(data), chunk):
        x, y, pos = encode_arrays(data.orbit_bits(start, start + chunk), data.rule_bits(start, start + chunk), config)
        inputs.append(x.astype(np.uint8))
        targets.append(y)
    if not inputs:
        return np.zeros((0, config.sequence_length), np.uint8), np.zeros((0, config.target_length), np.uint8), config.mask_positions()
    return np.concatenate(inputs), np.concatenate(targets), pos


class ModelPredictor:
    """Argmax token at every masked position."""

    def __init__(self, model: EncoderModel, config: TaskConfig, batch_size=500):
        self.model = model
        self.positions = torch.as_tensor(config.mask_positions())
        self.batch_size = batch_size
        self.max_seq_len = model.config.max_seq_len

    @torch.no_grad()
    def __call__(self, inputs):
        self.model.eval()
        out = []
        for start in range(0, len(inputs), self.batch_size):
            tokens = torch.as_tensor(np.asarray(inputs[start : start + self.batch_size]), dtype=torch.long)
            logits = self.model(tokens, positions=self.positions)
            out.append(logits.argmax(-1).numpy())
        return np.concatenate(out) if out else np.zeros((0, len(self.positions)), np.int64)


class LookupPredictor:
    """Returns stored targets for inputs it has seen; used as a perfect-predictor fixture."""

    def __init__(self, inputs, targets):
        self.table = {bytes(np.asarray(x, np.uint8)): np.asarray(y) for x, y in zip(inputs, targets)}

    def __call__(self, inputs):
        return np.stack([self.table[bytes(np.asarray(x, np.uint8))] for x in inputs])


class ConstantPredictor:
    def __init__(self, token, config: TaskConfig):
        self.token = token
        self.n = config.target_length

    def __call__(self, inputs):
        return np.full((len(inputs), self.n), self.token, dtype=np.int64)


class RuleInferencePredictor:
    """Exact in-context baseline: recover the partial rule from the prefix and simulate.

    Neighborhoods never observed in the prefix are predicted as ``fallback``.
    For ROS the rule is read from the input and is therefore complete. Rule
    targets of OSR are filled from the partial rule in the same way.
    """

    def __init__(self, config: TaskConfig, fallback=ZERO):
        if not _kernels.supports(config.width, config.radius):
            raise ValueError("the inference baseline needs W <= 64 and r <= 2")
        self.config = config
        self.fallback = fallback

    def __call__(self, inputs):
        cfg = self.config
        inputs = np.asarray(inputs)
        n, w, p, k = len(inputs), cfg.width, cfg.prefix_len, cfg.rule_size
        offset = k + 1 if cfg.task is Task.ROS else 0
        ctx = inputs[:, offset : offset + p * (w + 1)].reshape(n, p, w + 1)[:, :, :w].astype(np.uint8)
        rows = pack_rows(ctx)
        known = np.zeros((n, k), dtype=bool)
        value = np.zeros((n, k), dtype=np.uint8)
        if cfg.task is Task.ROS:
            known[:] = True
            value[:] = inputs[:, :k]
        else:
            idx = _kernels.neighborhood_indices(rows[:, :-1], w, cfg.radius).reshape(n, -1)
            nxt = ctx[:, 1:].reshape(n, -1)
            rows_i = np.repeat(np.arange(n), idx.shape[1])
            known[rows_i, idx.ravel()] = True
            value[rows_i, idx.ravel()] = nxt.ravel()
        table = np.where(known, value, self.fallback).astype(np.uint64)
        numbers = pack_rows(table) if k <= 64 else None
        steps_needed = cfg.target_states[-1] - (p - 1) + 1
        future = _kernels.evolve(numbers, rows[:, -1], w, cfg.radius, steps_needed)
        states = [unpack_rows(future[:, t - (p - 1)], w) for t in cfg.target_states]
        out = np.concatenate(states, axis=1).astype(np.int64)
        if cfg.task is Task.OSR:
            out = np.concatenate([out, table.astype(np.int64)], axis=1)
        return out


def eval_accuracy(predictor: Predictor, data: PackedSamples, config: TaskConfig, chunk=5000) -> MetricsRecord:
    """Micro-averaged per-bit accuracy over all masked bits.

    A masked position predicted as SEP or MASK never equals a 0/1 target and
    so counts as wrong.
    """
    check_data(data, config)
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    n_states = len(config.target_states)
    correct_states = np.zeros(n_states, dtype=np.int64)
    correct_rule = 0
    for start in range(0, len(data), chunk):
        x, y, _ = encode_arrays(data.orbit_bits(start, start + chunk), data.rule_bits(start, start + chunk), config)
        pred = np.asarray(predictor(x))
        if pred.shape != y.shape:
            raise ShapeError(f"predictor returned {pred.shape}, expected {y.shape}")
        hits = pred == y
        for i, s in enumerate(config.state_mask_slices()):
            correct_states[i] += int(hits[:, s].sum())
        if config.task is Task.OSR:
            correct_rule += int(hits[:, -config.rule_size :].sum())
    n = len(data)
    state_bits = n * config.width
    total_bits = n * config.target_length
    per_step = [float(c / state_bits) for c in correct_states]
    rule_acc = correct_rule / (n * config.rule_size) if config.task is Task.OSR else None
    return MetricsRecord(
        accuracy=float((correct_states.sum() + correct_rule) / total_bits),
        n_bits=total_bits,
        n_samples=n,
        per_step=per_step,
        task=config.task.value,
        lookahead=config.lookahead,
        rule_accuracy=rule_acc,
    )


def autoregressive_rollout(
    predictor: Predictor,
    data: PackedSamples,
    config: TaskConfig,
    steps: int,
    teacher_forcing: bool = False,
    max_seq_len: Optional[int] = None,
) -> list[MetricsRecord]:
    """Predict one state at a time, feeding predictions back as context.

    The context is a sliding window of the latest ``prefix_len`` states so the
    layout always matches training. Only the first predicted state of each
    layout is used (the next state); its 0/1 decoding is the hard argmax, and
    any SEP/MASK prediction is fed back as 0 and scored as wrong.
    """
    if config.lookahead != 0:
        raise ValueError("rollout needs a next-state model (lookahead 0)")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    check_data(data, config)
    p, w = config.prefix_len, config.width
    if p + steps > data.header.steps:
        raise DataMismatchError(f"rollout to state {p + steps - 1} exceeds the {data.header.steps}-state orbits")
    limit = max_seq_len or getattr(predictor, "max_seq_len", None)
    if limit is not None and config.sequence_length > limit:
        raise ShapeError(f"layout of {config.sequence_length} tokens overflows max_seq_len {limit}")
    orbits = data.orbit_bits()
    rules = data.rule_bits()
    n = len(data)
    context = orbits[:, :p].copy()
    records = []
    for s in range(steps):
        assert context.shape[1] == p
        inputs = build_inputs(context, config, rules)
        assert inputs.shape[1] == config.sequence_length
        pred = np.asarray(predictor(inputs))[:, :w]
        truth = orbits[:, p + s]
        hits = int((pred == truth).sum())
        records.append(
            MetricsRecord(
                accuracy=hits / (n * w),
                n_bits=n * w,
                n_samples=n,
                per_step=[hits / (n * w)],
                task=config.task.value,
                lookahead=s,
            )
        )
        fed = truth if teacher_forcing else (pred == ONE).astype(np.uint8)
        context = np.concatenate([context[:, 1:], fed[:, None]], axis=1)
    return records


def ar_vs_la(
    ar_predictor: Predictor,
    la_predictors: dict,
    data: PackedSamples,
    config: TaskConfig,
    horizons: Sequence[int] = (2, 3, 4),
) -> list[dict]:
    """Accuracy at each horizon for autoregressive rollout versus direct look-ahead.

    Horizon ``h`` compares rollout step ``h`` with the look-ahead model for
    ``k = h - 1``; both predict state ``prefix_len + h - 1``.
    """
    missing = [h for h in horizons if h - 1 not in la_predictors]
    if missing:
        raise KeyError(f"no look-ahead predictor for k={[h - 1 for h in missing]}")
    base = replace(config, lookahead=0)
    rollout = autoregressive_rollout(ar_predictor, data, base, max(horizons))
    rows = []
    for h in horizons:
        ar = rollout[h - 1]
        la = eval_accuracy(la_predictors[h - 1], data, replace(config, lookahead=h - 1))
        rows.append({"horizon": h, "mode": "AR", "accuracy": ar.accuracy, "n_bits": ar.n_bits})
        rows.append({"horizon": h, "mode": "LA", "accuracy": la.accuracy, "n_bits": la.n_bits})
    return rows


def _batches(n, batch_size, rng):
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start : start + batch_size]


def train_model(spec: ExperimentSpec, train_data: Optional[PackedSamples] = None, progress=None) -> TrainResult:
    """Train one model on ``spec``; keeps the parameters with the best held-out accuracy.

    The last ``eval_samples`` training samples are held out for evaluation
    and never trained on.
    """
    cfg = spec.task
    if spec.model.max_seq_len < cfg.sequence_length:
        raise ShapeError(f"max_seq_len {spec.model.max_seq_len} < layout length {cfg.sequence_length}")
    data = train_data if train_data is not None else read_packed(spec.train_path)
    check_data(data, cfg)
    n_eval = min(spec.eval_samples, max(1, len(data) // 10))
    fit, held = data.subset(0, len(data) - n_eval), data.subset(len(data) - n_eval, len(data))
    if spec.steps and len(fit) < spec.batch_size:
        raise DataMismatchError(f"{len(fit)} training samples is fewer than one batch of {spec.batch_size}")

    torch.manual_seed(spec.seed)
    model = init_params(spec.model, spec.seed)
    opt, sched = make_optimizer(
        model, lr=spec.lr, warmup_steps=spec.warmup_steps, total_steps=spec.steps if spec.cosine_decay else None
    )
    predictor = ModelPredictor(model, cfg)

    def evaluate():
        return eval_accuracy(predictor, held, cfg).accuracy

    acc = evaluate()
    curve = [{"step": 0, "loss": float("nan"), "eval_accuracy": acc}]
    best = (acc, 0, {k: v.clone() for k, v in model.state_dict().items()})
    if spec.steps == 0:
        return TrainResult(model, curve, 0, acc)

    x, y, pos = encode_dataset(fit, cfg)
    pos_t = torch.as_tensor(pos)
    rng = np.random.default_rng(spec.seed)
    batches = _batches(len(fit), spec.batch_size, rng)
    t0 = time.time()
    running = []
    for step in range(1, spec.steps + 1):
        idx = next(batches)
        batch = Batch(torch.as_tensor(x[idx], dtype=torch.long), torch.as_tensor(y[idx], dtype=torch.long), pos_t)
        running.append(train_step(opt, model, batch, sched))
        if step % spec.eval_every == 0 or step == spec.steps:
            acc = evaluate()
            curve.append({"step": step, "loss": float(np.mean(running)), "eval_accuracy": acc})
            running = []
            if acc > best[0]:
                best = (acc, step, {k: v.clone() for k, v in model.state_dict().items()})
            log.info("step %d loss %.4f eval %.4f (%.0fs)", step, curve[-1]["loss"], acc, time.time() - t0)
            if progress is not None:
                progress(curve[-1])
    model.load_state_dict(best[2])
    model.eval()
    return TrainResult(model, curve, best[1], best[0])


def depth_sweep(layers: Sequence[int], spec: ExperimentSpec, test_data: Optional[PackedSamples] = None) -> list[dict]:
    """One OO model per depth with an identical budget; per-future-step test accuracy."""
    if spec.task.task is not Task.OO:
        raise ValueError("the depth sweep uses the OO task")
    test = test_data if test_data is not None else read_packed(spec.test_path)
    train = read_packed(spec.train_path)
    rows = []
    for depth in layers:
        run = replace(spec, model=replace(spec.model, num_layers=int(depth)), experiment_id=f"{spec.experiment_id}-L{depth}")
        result = train_model(run, train)
        rec = eval_accuracy(ModelPredictor(result.model, spec.task), test, spec.task)
        for step, acc in enumerate(rec.per_step, start=1):
            rows.append(
                metrics_row(run.experiment_id, spec.task, depth, step, acc, len(test) * spec.task.width)
            )
    return rows


def metrics_row(experiment_id, config: TaskConfig, depth, step, accuracy, n_bits) -> dict:
    return {
        "experiment_id": experiment_id,
        "task": config.task.value,
        "k": config.lookahead,
        "depth": depth,
        "step": step,
        "accuracy": f"{accuracy:.6f}",
        "n_bits": n_bits,
    }


def write_metrics_csv(rows, path, columns=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})


def write_curve_csv(curve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "eval_accuracy"])
        for row in curve:
            writer.writerow([row["step"], f"{row['loss']:.6f}", f"{row['eval_accuracy']:.6f}"])


def plot_rows(rows, path, x="step", group="depth", title=""):
    """Accuracy lines grouped by ``group``; returns False if matplotlib is missing."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key in sorted({r[group] for r in rows}, key=str):
        pts = sorted((float(r[x]), float(r["accuracy"])) for r in rows if r[group] == key)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{group}={key}")
    ax.set_xlabel(x)
    ax.set_ylabel("per-bit accuracy")
    ax.set_ylim(0.4, 1.02)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True
