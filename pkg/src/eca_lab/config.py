"""Flat INI run configs mapped onto :class:`ExperimentSpec`."""

from __future__ import annotations

import configparser
from dataclasses import asdict, fields

from .codec import Task, TaskConfig
from .experiments import ExperimentSpec
from .model import ModelConfig


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = {
    "steps": int,
    "batch_size": int,
    "lr": float,
    "warmup_steps": int,
    "cosine_decay": bool,
    "eval_every": int,
    "eval_samples": int,
    "seed": int,
    "experiment_id": str,
}


def _typed(section, cls, overrides=None):
    out = {}
    for f in fields(cls):
        if f.name not in section:
            continue
        raw = section[f.name]
        if f.name == "task":
            out[f.name] = Task(raw.upper())
        elif f.name == "horizon":
            out[f.name] = None if raw in ("", "none", "None") else int(raw)
        elif f.type in ("float", float):
            out[f.name] = float(raw)
        else:
            out[f.name] = int(raw)
    out.update(overrides or {})
    return cls(**out)


def spec_from_parser(parser: configparser.ConfigParser) -> ExperimentSpec:
    try:
        data = parser["data"]
        task = _typed(parser["task"] if parser.has_section("task") else {}, TaskConfig)
        model = _typed(parser["model"] if parser.has_section("model") else {}, ModelConfig)
        train = parser["train"] if parser.has_section("train") else {}
        kwargs = {}
        for key, kind in _TRAIN_KEYS.items():
            if key in train:
                if kind is bool:
                    kwargs[key] = parser.getboolean("train", key)
                else:
                    kwargs[key] = kind(train[key])
        return ExperimentSpec(task=task, model=model, train_path=data["train"], test_path=data["test"], **kwargs)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc


def load_spec(path) -> ExperimentSpec:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    return spec_from_parser(parser)


def spec_to_parser(spec: ExperimentSpec) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser["data"] = {"train": str(spec.train_path), "test": str(spec.test_path)}
    task = asdict(spec.task)
    task["task"] = spec.task.task.value
    parser["task"] = {k: str(v) for k, v in task.items()}
    parser["model"] = {k: str(v) for k, v in asdict(spec.model).items()}
    parser["train"] = {k: str(getattr(spec, k)) for k in _TRAIN_KEYS}
    return parser


def save_spec(spec: ExperimentSpec, path):
    with open(path, "w") as fh:
        spec_to_parser(spec).write(fh)


def task_to_dict(config: TaskConfig) -> dict:
    d = asdict(config)
    d["task"] = config.task.value
    return d
