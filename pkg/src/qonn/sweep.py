"""Experiment sweeps: declarative grids of training runs.

A sweep iterates the cartesian product of the declared axes, trains one
network per grid point (times the repeat count) and records one result
row per run.  Each point's seed is derived by hashing the run seed with
the point's coordinates, so results do not depend on execution order and
an interrupted sweep can be resumed: completed points are read back from
the results CSV and skipped.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .configfile import ConfigError, load_config
from .data import (
    MNIST_FILES,
    SAT6_FILES,
    Dataset,
    load_mnist,
    load_sat6_csv,
    subsample,
)
from .network import Network, build_conv_network, build_mlp
from .neuron import DetuningSpec
from .training import TrainConfig, train

__all__ = [
    "ExperimentConfig",
    "PointRecord",
    "SweepResult",
    "build_network",
    "resolve_datasets",
    "run_experiment",
    "emit_results",
    "load_results",
    "point_seed",
]

DATA_DIR_ENV = "QONN_DATA_DIR"

_SWEEP_AXES = ("t", "t1", "t2", "delta0", "pass_rate", "conv_channels", "hidden1")

_SUBSAMPLE_TRAIN_TAG = 71
_SUBSAMPLE_TEST_TAG = 73


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment family: base parameters plus optional sweep axes."""

    task: str = "mnist"
    data_dir: str = ""
    subsample_train: int = 0  # 0 = use the full split
    subsample_test: int = 0
    hidden: tuple[int, ...] = (512, 512)
    conv_channels: int = 0  # 0 = fully connected network
    kernel: int = 5
    stride: int = 1
    pool: int = 2
    g: float = 1.0
    t_abs: tuple[float, ...] = (1.0,)
    detuning_mode: str = "zero"
    delta0: float = 0.0
    pass_rate: float = 1.0  # 1.0 = stochastic layer physically absent
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: dict = field(default_factory=dict)  # axis -> list of values
    repeats: int = 1
    out: str = ""
    workers: int = 1

    # -- parsing -----------------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(load_config(path))

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        """Build from flat dotted keys, rejecting unknown or malformed ones."""
        pending = dict(raw)

        def take(key, default, conv):
            if key not in pending:
                return default
            value = pending.pop(key)
            try:
                return conv(value)
            except ConfigError:
                raise
            except (ValueError, TypeError) as e:
                raise ConfigError(key, str(e)) from e

        task = take("task", "mnist", str)
        if task not in ("mnist", "sat6"):
            raise ConfigError("task", f"expected 'mnist' or 'sat6', got {task!r}")
        detuning_mode = take("detuning.mode", "zero", str)
        try:
            DetuningSpec(detuning_mode, 0.0)
        except ValueError as e:
            raise ConfigError("detuning.mode", str(e)) from e

        cfg = cls(
            task=task,
            data_dir=take("data.dir", "", str),
            subsample_train=take("data.subsample_train", 0, int),
            subsample_test=take("data.subsample_test", 0, int),
            hidden=take("arch.hidden", (512, 512), _int_tuple),
            conv_channels=take("arch.conv_channels", 0, int),
            kernel=take("arch.kernel", 5, int),
            stride=take("arch.stride", 1, int),
            pool=take("arch.pool", 2, int),
            g=take("neuron.g", 1.0, float),
            t_abs=take("neuron.t", (1.0,), _float_tuple),
            detuning_mode=detuning_mode,
            delta0=take("detuning.delta0", 0.0, float),
            pass_rate=take("stochastic.pass_rate", 1.0, float),
            train=TrainConfig(
                batch_size=take("train.batch_size", 64, int),
                learning_rate=take("train.lr", 1e-3, float),
                epochs=take("train.epochs", 10, int),
                seed=take("train.seed", 0, int),
                shuffle=take("train.shuffle", True, _bool),
                eval_repeats=take("train.eval_repeats", 1, int),
            ),
            sweep={
                axis: take(f"sweep.{axis}", None, _value_list)
                for axis in _SWEEP_AXES
                if f"sweep.{axis}" in pending
            },
            repeats=take("sweep.repeats", 1, int),
            out=take("out", "", str),
            workers=take("workers", 1, int),
        )
        if pending:
            raise ConfigError(next(iter(pending)), "unknown key")
        cfg.validate()
        return cfg

    def validate(self):
        if not 0.0 <= self.pass_rate <= 1.0:
            raise ConfigError("stochastic.pass_rate", f"must be in [0, 1], got {self.pass_rate}")
        if self.conv_channels < 0:
            raise ConfigError("arch.conv_channels", "must be >= 0")
        if self.conv_channels > 0 and self.task != "sat6":
            raise ConfigError(
                "arch.conv_channels", "convolutional front end requires the sat6 task"
            )
        if self.repeats < 1:
            raise ConfigError("sweep.repeats", "must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        for axis, values in self.sweep.items():
            if not values:
                raise ConfigError(f"sweep.{axis}", "empty sweep grid")
        if "t2" in self.sweep and len(self.hidden) < 2:
            raise ConfigError("sweep.t2", "needs at least two hidden layers")

    # -- grid enumeration ---------------------------------------------------

    def grid_points(self) -> list[dict]:
        """Cartesian product of the sweep axes, in declaration order."""
        if not self.sweep:
            return [{}]
        axes = list(self.sweep)
        return [
            dict(zip(axes, combo))
            for combo in itertools.product(*(self.sweep[a] for a in axes))
        ]

    def at_point(self, point: dict) -> "ExperimentConfig":
        """The base config with one grid point's overrides applied."""
        cfg = self
        n_hidden = len(cfg.hidden) + (1 if cfg.conv_channels or "conv_channels" in point else 0)
        for axis, value in point.items():
            if axis == "t":
                cfg = replace(cfg, t_abs=(float(value),))
            elif axis in ("t1", "t2"):
                n_layers = len(cfg.hidden) + (1 if cfg.conv_channels > 0 else 0)
                ts = list(cfg.t_abs) * n_layers if len(cfg.t_abs) == 1 else list(cfg.t_abs)
                ts = ts[:n_layers]
                ts[0 if axis == "t1" else 1] = float(value)
                cfg = replace(cfg, t_abs=tuple(ts))
            elif axis == "delta0":
                cfg = replace(cfg, delta0=float(value))
            elif axis == "pass_rate":
                cfg = replace(cfg, pass_rate=float(value))
            elif axis == "conv_channels":
                cfg = replace(cfg, conv_channels=int(value))
            elif axis == "hidden1":
                cfg = replace(cfg, hidden=(int(value),) + cfg.hidden[1:])
            else:
                raise ConfigError(f"sweep.{axis}", "unknown sweep axis")
        del n_hidden
        return cfg


def _int_tuple(text) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(","))


def _float_tuple(text) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(","))


def _value_list(text) -> list[float]:
    return [float(v) for v in str(text).split(",")]


def _bool(text) -> bool:
    v = str(text).strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# ---------------------------------------------------------------------------
# Datasets and per-point networks
# ---------------------------------------------------------------------------

def _find(data_dir: Path, name: str) -> Path:
    for candidate in (data_dir / name, data_dir / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(
        f"dataset file {name}(.gz) not found under {data_dir}; "
        f"set --data-dir or ${DATA_DIR_ENV}"
    )


def resolve_data_dir(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.data_dir:
        return Path(cfg.data_dir)
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def resolve_datasets(cfg: ExperimentConfig, data_dir=None) -> tuple[Dataset, Dataset]:
    """Load (and optionally subsample) the configured task's train/test splits."""
    base = resolve_data_dir(cfg, data_dir)
    if cfg.task == "mnist":
        files = MNIST_FILES
        loader = load_mnist
    else:
        files = SAT6_FILES
        loader = load_sat6_csv
    train_ds = loader(_find(base, files["train"][0]), _find(base, files["train"][1]))
    test_ds = loader(_find(base, files["test"][0]), _find(base, files["test"][1]))
    if cfg.subsample_train:
        train_ds = subsample(
            train_ds, cfg.subsample_train, [cfg.train.seed, _SUBSAMPLE_TRAIN_TAG]
        )
    if cfg.subsample_test:
        test_ds = subsample(test_ds, cfg.subsample_test, [cfg.train.seed, _SUBSAMPLE_TEST_TAG])
    return train_ds, test_ds


def build_network(cfg: ExperimentConfig, feature_shape: tuple[int, ...], n_classes: int,
                  seed: int) -> Network:
    """Construct the network a config point describes, for the given data shape."""
    detuning = DetuningSpec(cfg.detuning_mode, cfg.delta0)
    pass_rate = None if cfg.pass_rate >= 1.0 else cfg.pass_rate
    if cfg.conv_channels > 0:
        if len(feature_shape) != 3:
            raise ValueError(
                f"convolutional network needs (H, W, C) inputs, got {feature_shape}"
            )
        return build_conv_network(
            feature_shape,
            cfg.conv_channels,
            cfg.hidden[1:] if len(cfg.hidden) > 1 else cfg.hidden[-1:],
            n_classes,
            t_abs=cfg.t_abs,
            detuning=detuning,
            g=cfg.g,
            kernel=cfg.kernel,
            stride=cfg.stride,
            pool=cfg.pool,
            pass_rate=pass_rate,
            seed=seed,
        )
    in_dim = feature_shape if len(feature_shape) > 1 else feature_shape[0]
    return build_mlp(
        in_dim,
        cfg.hidden,
        n_classes,
        t_abs=cfg.t_abs,
        detuning=detuning,
        g=cfg.g,
        pass_rate=pass_rate,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Sweep execution
# ---------------------------------------------------------------------------

@dataclass
class PointRecord:
    point_id: str
    params: dict
    repeat: int
    seed: int
    final_test_accuracy: float
    epoch_losses: list[float]
    epoch_test_accuracies: list[float]
    runtime_seconds: float

    @property
    def key(self) -> tuple[str, int]:
        return (self.point_id, self.repeat)


@dataclass
class SweepResult:
    records: list[PointRecord]
    config_echo: dict


def point_id_for(point: dict) -> str:
    if not point:
        return "base"
    return ",".join(f"{axis}={point[axis]:g}" for axis in point)


def point_seed(run_seed: int, point: dict, repeat: int) -> int:
    """Stable 63-bit seed from run seed + grid coordinates + repeat index.

    Hash-derived so it is independent of execution order and of which
    other points exist in the grid.
    """
    text = f"{run_seed}|{point_id_for(point)}|{repeat}"
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _run_point(cfg: ExperimentConfig, point: dict, repeat: int,
               train_ds: Dataset, test_ds: Dataset) -> PointRecord:
    sub_cfg = cfg.at_point(point)
    seed = point_seed(cfg.train.seed, point, repeat)
    t0 = time.perf_counter()
    net = build_network(sub_cfg, train_ds.feature_shape, train_ds.n_classes, seed)
    report = train(net, train_ds, test_ds, replace(sub_cfg.train, seed=seed))
    return PointRecord(
        point_id=point_id_for(point),
        params=dict(point),
        repeat=repeat,
        seed=seed,
        final_test_accuracy=report.final_test_accuracy,
        epoch_losses=[e.loss for e in report.epochs],
        epoch_test_accuracies=[e.test_accuracy for e in report.epochs],
        runtime_seconds=time.perf_counter() - t0,
    )


def run_experiment(cfg: ExperimentConfig, data_dir=None, datasets=None,
                   progress=None) -> SweepResult:
    """Train every (grid point, repeat) and collect one record per run.

    When ``cfg.out`` is set, records are appended to ``<out>.csv`` as they
    finish; on restart, completed (point, repeat) pairs found there are
    skipped, and the final files are identical to an uninterrupted run
    apart from the measured runtimes.  ``datasets`` can inject preloaded
    (train, test) splits, bypassing file resolution.
    """
    if datasets is None:
        datasets = resolve_datasets(cfg, data_dir)
    train_ds, test_ds = datasets

    jobs = [
        (point, repeat)
        for point in cfg.grid_points()
        for repeat in range(cfg.repeats)
    ]
    done: dict[tuple[str, int], PointRecord] = {}
    csv_path = Path(cfg.out + ".csv") if cfg.out else None
    if csv_path and csv_path.exists():
        for rec in _read_records(csv_path):
            done[rec.key] = rec

    pending = [
        (point, repeat)
        for point, repeat in jobs
        if (point_id_for(point), repeat) not in done
    ]

    writer = _IncrementalWriter(csv_path, done) if csv_path else None
    try:
        if cfg.workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [
                    pool.submit(_run_point, cfg, point, repeat, train_ds, test_ds)
                    for point, repeat in pending
                ]
                for fut in futures:
                    rec = fut.result()
                    done[rec.key] = rec
                    if writer:
                        writer.append(rec)
                    if progress:
                        progress(rec)
        else:
            for point, repeat in pending:
                rec = _run_point(cfg, point, repeat, train_ds, test_ds)
                done[rec.key] = rec
                if writer:
                    writer.append(rec)
                if progress:
                    progress(rec)
    finally:
        if writer:
            writer.close()

    records = [done[(point_id_for(point), repeat)] for point, repeat in jobs]
    result = SweepResult(records=records, config_echo=_config_echo(cfg))
    if cfg.out:
        emit_results(result, cfg.out)
    return result


def _config_echo(cfg: ExperimentConfig) -> dict:
    echo = {
        "task": cfg.task,
        "hidden": list(cfg.hidden),
        "conv_channels": cfg.conv_channels,
        "kernel": cfg.kernel,
        "stride": cfg.stride,
        "pool": cfg.pool,
        "g": cfg.g,
        "t_abs": list(cfg.t_abs),
        "detuning_mode": cfg.detuning_mode,
        "delta0": cfg.delta0,
        "pass_rate": cfg.pass_rate,
        "subsample_train": cfg.subsample_train,
        "subsample_test": cfg.subsample_test,
        "train": {
            "batch_size": cfg.train.batch_size,
            "learning_rate": cfg.train.learning_rate,
            "epochs": cfg.train.epochs,
            "seed": cfg.train.seed,
            "shuffle": cfg.train.shuffle,
            "eval_repeats": cfg.train.eval_repeats,
        },
        "sweep": {k: list(v) for k, v in cfg.sweep.items()},
        "repeats": cfg.repeats,
    }
    return echo


# ---------------------------------------------------------------------------
# Result files: CSV table + JSON sidecar, loss-free round trip
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "point_id",
    "repeat",
    "seed",
    "final_test_accuracy",
    "runtime_seconds",
    "epoch_losses",
    "epoch_test_accuracies",
    "params",
]


class _IncrementalWriter:
    """Append-only CSV writer that preserves rows already on disk."""

    def __init__(self, path: Path, existing: dict):
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not path.exists()
        if fresh:
            with open(path, "w", newline="") as f:
                csv.writer(f).writerow(_CSV_COLUMNS)
        self._f = open(path, "a", newline="")
        self._writer = csv.writer(self._f)

    def append(self, rec: PointRecord):
        self._writer.writerow(_record_row(rec))
        self._f.flush()

    def close(self):
        self._f.close()


def _record_row(rec: PointRecord) -> list:
    return [
        rec.point_id,
        rec.repeat,
        rec.seed,
        repr(rec.final_test_accuracy),
        repr(rec.runtime_seconds),
        ";".join(repr(v) for v in rec.epoch_losses),
        ";".join(repr(v) for v in rec.epoch_test_accuracies),
        json.dumps(rec.params, sort_keys=True),
    ]


def _parse_row(row: list) -> PointRecord:
    return PointRecord(
        point_id=row[0],
        repeat=int(row[1]),
        seed=int(row[2]),
        final_test_accuracy=float(row[3]),
        runtime_seconds=float(row[4]),
        epoch_losses=[float(v) for v in row[5].split(";")] if row[5] else [],
        epoch_test_accuracies=[float(v) for v in row[6].split(";")] if row[6] else [],
        params=json.loads(row[7]),
    )


def _read_records(csv_path: Path) -> list[PointRecord]:
    records = []
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _CSV_COLUMNS:
            raise ValueError(
                f"{csv_path}: unrecognized results header {header!r}; "
                "remove the file to start the sweep afresh"
            )
        for row in reader:
            if len(row) != len(_CSV_COLUMNS):
                # an interrupted append may leave a torn final row: redo it
                continue
            try:
                records.append(_parse_row(row))
            except (ValueError, json.JSONDecodeError) as e:
                raise ValueError(f"{csv_path}: corrupt results row {row!r}: {e}") from e
    return records


def emit_results(result: SweepResult, out_prefix) -> None:
    """Write <out>.csv (one row per record) and <out>.json (full echo)."""
    out_prefix = str(out_prefix)
    csv_path = Path(out_prefix + ".csv")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_CSV_COLUMNS)
        for rec in result.records:
            writer.writerow(_record_row(rec))
    sidecar = {
        "config": result.config_echo,
        "records": [
            {
                "point_id": rec.point_id,
                "params": rec.params,
                "repeat": rec.repeat,
                "seed": rec.seed,
                "final_test_accuracy": rec.final_test_accuracy,
                "epoch_losses": rec.epoch_losses,
                "epoch_test_accuracies": rec.epoch_test_accuracies,
                "runtime_seconds": rec.runtime_seconds,
            }
            for rec in result.records
        ],
    }
    with open(out_prefix + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)


def load_results(out_prefix) -> SweepResult:
    """Reload an emitted result pair; inverse of emit_results."""
    records = _read_records(Path(str(out_prefix) + ".csv"))
    sidecar = Path(str(out_prefix) + ".json")
    echo = {}
    if sidecar.exists():
        with open(sidecar) as f:
            echo = json.load(f).get("config", {})
    return SweepResult(records=records, config_echo=echo)
