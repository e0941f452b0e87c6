"""Experiment configuration and runners behind the CLI.

A run is fully described by one JSON config; every piece of randomness is
derived from the config seed, so re-running a config reproduces artifacts
byte for byte.  Cross-validated datasets are crossed with restarts of
fixed-split datasets: run j uses fold (j mod k) of each folded dataset and
restart j (fresh training seed, same split) of each fixed-split one.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import (
    Dataset,
    fold_split,
    load_canonical_jsonl,
    proportional_split,
    split_folds,
    truncate_fraction,
)
from .embeddings import provider_from_config
from .encoder import ModelDims, TaskPipeline, build_pipeline, load_checkpoint, save_checkpoint
from .errors import ConfigError
from .metrics import MetricsReport
from .relatedness import predict_records, write_prediction_csv
from .trainer import (
    TrainConfig,
    TrainResult,
    derive_seed,
    evaluate,
    restore_arrays,
    snapshot_arrays,
    train_single_task,
)
from .transfer import InitMode, SharingMode, TaskSpec, build_multitask, init_transfer, train_multitask

SINGLE_MODES = ("single",)
INIT_MODES = ("init1", "init2")
MULT_MODES = tuple(m.value for m in SharingMode)
ALL_MODES = SINGLE_MODES + INIT_MODES + MULT_MODES

OUTPUT_ROOT_ENV = "SENTSEQ_OUTPUT_ROOT"


@dataclass(frozen=True)
class TaskConfig:
    task_id: str
    data: str
    folds: int = 0  # 0 -> fixed proportional split with restarts
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    train_fraction: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    mode: str
    tasks: tuple[TaskConfig, ...]
    train: TrainConfig
    model: dict = field(default_factory=dict)  # d_lstm / d_u / r overrides
    embeddings: dict = field(default_factory=lambda: {"mode": "hashing", "d_w": 32})
    runs: int | None = None
    output_dir: str | None = None
    source_checkpoint: str | None = None

    @classmethod
    def from_json(cls, obj: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        base = Path(base_dir) if base_dir else Path(".")
        try:
            mode = obj["mode"]
            if mode not in ALL_MODES:
                raise ConfigError(f"unknown mode {mode!r}, expected one of {ALL_MODES}")
            tasks = []
            for t in obj["tasks"]:
                tasks.append(TaskConfig(
                    task_id=t["task_id"],
                    data=str(base / t["data"]),
                    folds=int(t.get("folds", 0)),
                    split=tuple(t.get("split", (0.7, 0.1, 0.2))),
                    train_fraction=float(t.get("train_fraction", 1.0)),
                ))
            train = TrainConfig(**obj.get("train", {}))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad experiment config: {e}") from e
        if not tasks:
            raise ConfigError("config needs at least one task")
        if mode in SINGLE_MODES + INIT_MODES and len(tasks) != 1:
            raise ConfigError(f"mode {mode!r} takes exactly one task")
        if mode in INIT_MODES and not obj.get("source_checkpoint"):
            raise ConfigError(f"mode {mode!r} needs a source_checkpoint")
        source = obj.get("source_checkpoint")
        return cls(
            name=obj.get("name", "experiment"),
            mode=mode,
            tasks=tuple(tasks),
            train=train,
            model=dict(obj.get("model", {})),
            embeddings=dict(obj.get("embeddings", {"mode": "hashing", "d_w": 32})),
            runs=obj.get("runs"),
            output_dir=str(base / obj["output_dir"]) if obj.get("output_dir") else None,
            source_checkpoint=str(base / source) if source else None,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        return cls.from_json(obj, base_dir=Path(path).parent)


def resolve_output_dir(cfg: ExperimentConfig, override: str | None = None) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / cfg.name


def _n_runs(cfg: ExperimentConfig) -> int:
    """Default: the maximum fold count over cross-validated tasks, at least 3."""
    if cfg.runs is not None:
        if cfg.runs < 1:
            raise ConfigError("runs must be >= 1")
        return cfg.runs
    max_folds = max((t.folds for t in cfg.tasks if t.folds > 0), default=0)
    return max(max_folds, 3)


def _splits_for_run(cfg: ExperimentConfig, task: TaskConfig, ds: Dataset,
                    run: int) -> tuple[Dataset, Dataset, Dataset]:
    if task.folds > 0:
        plan = split_folds(ds, task.folds, seed=derive_seed(cfg.train.seed, "folds", ds.name))
        train, val, test = fold_split(ds, plan, run % task.folds)
    else:
        train, val, test = proportional_split(
            ds, task.split, seed=derive_seed(cfg.train.seed, "split", ds.name))
    if task.train_fraction < 1.0:
        train = truncate_fraction(train, task.train_fraction,
                                  seed=derive_seed(cfg.train.seed, "trunc", ds.name, run))
    return train, val, test


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_epoch_log(path: Path, result: TrainResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in result.log:
            f.write(json.dumps(record.to_json(), sort_keys=True) + "\n")


@dataclass
class RunScore:
    run: int
    report: MetricsReport

    def to_json(self) -> dict:
        return {"run": self.run, **self.report.to_json()}


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Execute the configured experiment; returns the summary object."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = {t.task_id: load_canonical_jsonl(t.data) for t in cfg.tasks}

    name_to_path: dict[str, str] = {}
    for t in cfg.tasks:
        ds_name = datasets[t.task_id].name
        if name_to_path.setdefault(ds_name, t.data) != t.data:
            raise ConfigError(f"two tasks load different files both named {ds_name!r}")
    if cfg.mode in (SharingMode.MULT_ALL_SHO.value, SharingMode.MULT_GRP_SHO.value):
        schemes = {ds.scheme.classes for ds in datasets.values()}
        if len(schemes) != 1:
            raise ConfigError(f"mode {cfg.mode!r} needs one shared scheme across tasks")

    # class lists keyed by both dataset name and task id, so prediction dumps
    # resolve either way during analysis
    scheme_table = {ds.name: list(ds.scheme.classes) for ds in datasets.values()}
    scheme_table.update({tid: list(ds.scheme.classes) for tid, ds in datasets.items()})
    _write_json(out_dir / "schemes.json", scheme_table)

    provider = provider_from_config(
        cfg.embeddings, datasets=list(datasets.values()), max_tokens=cfg.train.max_tokens)
    dims = ModelDims(d_w=provider.d_w, **cfg.model)

    n_runs = _n_runs(cfg)
    scores: dict[str, list[RunScore]] = {t.task_id: [] for t in cfg.tasks}
    all_records = []

    for run in range(n_runs):
        run_dir = out_dir / f"run_{run}"
        run_seed = derive_seed(cfg.train.seed, "run", run)
        run_train = dataclasses.replace(cfg.train, seed=run_seed)
        splits = {
            t.task_id: _splits_for_run(cfg, t, datasets[t.task_id], run) for t in cfg.tasks
        }
        task_folds = {t.task_id: t.folds for t in cfg.tasks}
        if cfg.mode in SINGLE_MODES + INIT_MODES:
            task = cfg.tasks[0]
            ds = datasets[task.task_id]
            pipe = build_pipeline(provider, ds.scheme, dims, seed=run_seed,
                                  task_id=task.task_id, text_type=ds.text_type,
                                  max_tokens=cfg.train.max_tokens)
            if cfg.mode in INIT_MODES:
                source = load_checkpoint(cfg.source_checkpoint)
                init_transfer(source, pipe, InitMode(cfg.mode))
            train, val, test = splits[task.task_id]
            result = train_single_task(pipe, train, val, run_train)
            restore_arrays(pipe.named_arrays(), result.best_arrays)
            report = evaluate(pipe, test)
            scores[task.task_id].append(RunScore(run, report))
            _emit_task_run(run_dir, task.task_id, pipe, result, report,
                           run, task_folds[task.task_id])
            all_records.extend(predict_records(
                {task.task_id: pipe}, {ds.name: ds},
                documents={ds.name: list(splits[task.task_id][2].documents)}))
        else:
            specs = [TaskSpec(t.task_id, datasets[t.task_id]) for t in cfg.tasks]
            model = build_multitask(provider, dims, specs, SharingMode(cfg.mode),
                                    seed=run_seed, max_tokens=cfg.train.max_tokens)
            if run == 0:
                _write_json(out_dir / "task_graph.json", model.to_manifest())
            results = train_multitask(
                model, {tid: (tr, va) for tid, (tr, va, _) in splits.items()}, run_train)
            final = snapshot_arrays(model.named_arrays())
            by_name = {ds.name: ds for ds in datasets.values()}
            test_docs = {datasets[tid].name: list(splits[tid][2].documents)
                         for tid in datasets}
            for tid, result in results.items():
                pipe = model.pipeline(tid)
                # each task predicts with its own best-epoch parameters
                restore_arrays(model.arrays_for_task(tid), result.best_arrays)
                report = evaluate(pipe, splits[tid][2])
                scores[tid].append(RunScore(run, report))
                _emit_task_run(run_dir, tid, pipe, result, report,
                               run, task_folds[tid])
                all_records.extend(
                    predict_records({tid: pipe}, by_name, documents=test_docs))
                restore_arrays(model.named_arrays(), final)

    with open(out_dir / "predictions.csv", "w", encoding="utf-8", newline="") as f:
        write_prediction_csv(all_records, f)

    summary = {
        "name": cfg.name,
        "mode": cfg.mode,
        "runs": n_runs,
        "tasks": {
            tid: {
                "mean_weighted_f1": sum(s.report.weighted_f1 for s in runs) / len(runs),
                "mean_accuracy": sum(s.report.accuracy for s in runs) / len(runs),
                "per_run": [s.to_json() for s in runs],
            }
            for tid, runs in scores.items()
        },
    }
    _write_json(out_dir / "summary.json", summary)
    return summary


def _emit_task_run(run_dir: Path, task_id: str, pipe: TaskPipeline,
                   result: TrainResult, report: MetricsReport,
                   run: int, folds: int) -> None:
    task_dir = run_dir / task_id
    task_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(task_dir / "checkpoint.bin", pipe)
    _write_epoch_log(task_dir / "epochs.jsonl", result)
    _write_json(task_dir / "metrics.json", {
        "task": task_id,
        "fold": run % folds if folds > 0 else None,
        "restart": run,
        "per_class": {cls: report.per_class_f1[i]
                      for i, cls in enumerate(pipe.scheme.classes)},
        "weighted_f1": report.weighted_f1,
        "accuracy": report.accuracy,
    })
    _write_json(task_dir / "train_log.json", {
        "best_epoch": result.best_epoch,
        "epochs": [r.to_json() for r in result.log],
    })


def evaluate_checkpoint(checkpoint_path, data_path) -> MetricsReport:
    pipe = load_checkpoint(checkpoint_path)
    ds = load_canonical_jsonl(data_path)
    if ds.scheme.classes != pipe.scheme.classes:
        raise ConfigError(
            f"dataset scheme {ds.scheme.classes} does not match checkpoint "
            f"scheme {pipe.scheme.classes}")
    return evaluate(pipe, ds)
