"""Command-line interface.

Subcommands: ingest, train, train-mtl, transfer-init, evaluate,
compile-generic, analyze, export-plot.  Exit codes: 0 success, 2 input
error, 3 config error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from importlib.resources import files as resource_files
from pathlib import Path

import numpy as np

from .corpus import (
    GENERIC_CLASSES,
    Dataset,
    LabelMapping,
    LabelScheme,
    collapse_labels,
    load_canonical_jsonl,
    parse_pubmed_rct,
    save_canonical_jsonl,
    truncate_fraction,
)
from .errors import ConfigError, DegenerateRank, InputError, NumericError
from .experiment import (
    INIT_MODES,
    MULT_MODES,
    ExperimentConfig,
    evaluate_checkpoint,
    resolve_output_dir,
    run_experiment,
)
from .relatedness import (
    pca_2d,
    read_prediction_csv,
    relatedness_matrix,
    save_heatmap_svg,
    save_scatter_svg,
    semantic_vectors,
    silhouette,
)
from .trainer import derive_seed

PMD_CLASSES = "Background,Objective,Methods,Results,Conclusion"


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    return cfg


# -- ingest -----------------------------------------------------------------

def cmd_ingest(args) -> int:
    if args.format == "pubmed-rct":
        scheme = LabelScheme(args.name, tuple(args.classes.split(",")))
        text = Path(args.input).read_text(encoding="utf-8")
        ds = parse_pubmed_rct(text, scheme)
        ds = Dataset(args.name, ds.text_type, ds.scheme, ds.documents)
    else:  # canonical jsonl: parse + re-export normalises the file
        ds = load_canonical_jsonl(args.input)
    save_canonical_jsonl(ds, args.output)
    print(f"wrote {args.output}: {len(ds.documents)} documents, "
          f"{ds.n_sentences} sentences, {len(ds.scheme)} classes")
    return 0


# -- training ----------------------------------------------------------------

def _run_config(args, allowed_modes, label: str) -> int:
    cfg = _load_config(args)
    if cfg.mode not in allowed_modes:
        raise ConfigError(f"{label} expects mode in {allowed_modes}, got {cfg.mode!r}")
    out_dir = resolve_output_dir(cfg, args.out)
    summary = run_experiment(cfg, out_dir)
    for task, entry in summary["tasks"].items():
        print(f"{task}: weighted F1 {entry['mean_weighted_f1']:.4f} "
              f"accuracy {entry['mean_accuracy']:.4f} over {summary['runs']} run(s)")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_train(args) -> int:
    return _run_config(args, ("single",), "train")


def cmd_train_mtl(args) -> int:
    return _run_config(args, MULT_MODES, "train-mtl")


def cmd_transfer_init(args) -> int:
    return _run_config(args, INIT_MODES, "transfer-init")


def cmd_evaluate(args) -> int:
    rep = evaluate_checkpoint(args.checkpoint, args.data)
    print(json.dumps(rep.to_json(), indent=2, sort_keys=True))
    return 0


# -- generic compilation -----------------------------------------------------------

def cmd_compile_generic(args) -> int:
    mapping = (LabelMapping.load(args.mapping) if args.mapping
               else LabelMapping.from_json(json.loads(
                   resource_files("sentseq.data")
                   .joinpath("generic_label_map.json").read_text())))
    fractions = {}
    for spec in args.fraction or []:
        name, _, value = spec.partition("=")
        if not value:
            raise ConfigError(f"--fraction expects NAME=VALUE, got {spec!r}")
        fractions[name] = float(eval_fraction(value))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in args.data:
        ds = load_canonical_jsonl(path)
        frac = fractions.get(ds.name, 1.0)
        if frac < 1.0:
            ds = truncate_fraction(ds, frac, seed=derive_seed(args.seed, "compile", ds.name))
        out = collapse_labels(ds, mapping)
        out = Dataset(f"G-{ds.name}", out.text_type, out.scheme, out.documents)
        target = out_dir / f"g_{ds.name.lower()}.jsonl"
        save_canonical_jsonl(out, target)
        counts = out.class_counts()
        print(f"{out.name}: {len(out.documents)} documents, {out.n_sentences} sentences")
        for cls in out.scheme.classes:
            print(f"  {cls:12s} {counts[cls]}")
    return 0


def eval_fraction(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


# -- analysis ---------------------------------------------------------------------

def _load_clusters(path) -> dict[str, str]:
    if path:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    return json.loads(resource_files("sentseq.data")
                      .joinpath("class_clusters.json").read_text())


def cmd_analyze(args) -> int:
    records = []
    for dump in args.dump:
        with open(dump, encoding="utf-8", newline="") as f:
            records.extend(read_prediction_csv(f))
    with open(args.schemes, encoding="utf-8") as f:
        scheme_table = json.load(f)
    clusters = _load_clusters(args.clusters)

    task_ids = sorted({r.task_id for r in records})
    ds_names = sorted({r.dataset for r in records})
    for name in task_ids + ds_names:
        if name not in scheme_table:
            raise InputError(f"no class list for {name!r} in {args.schemes}")
    vectors = semantic_vectors(
        records,
        task_classes={t: scheme_table[t] for t in task_ids},
        dataset_classes={d: scheme_table[d] for d in ds_names},
        on_empty="skip",
    )
    present = {v.label for v in vectors}
    for d in ds_names:
        for cls in scheme_table[d]:
            if f"{d}:{cls}" not in present:
                print(f"warning: class {d}:{cls} has no sentences; skipped", file=sys.stderr)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    labels, matrix = relatedness_matrix(vectors)
    with open(out_dir / "relatedness.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["label"] + labels)
        for lab, row in zip(labels, matrix):
            writer.writerow([lab] + [f"{x:.6f}" for x in row])
    save_heatmap_svg(labels, matrix, out_dir / "relatedness.svg")

    assignment = {lab: clusters[lab] for lab in labels if lab in clusters}
    missing = [lab for lab in labels if lab not in clusters]
    if missing:
        raise InputError(f"cluster file misses labels: {missing}")
    per_cluster, overall = silhouette(vectors, assignment)
    ordered = [c for c in GENERIC_CLASSES if c in per_cluster]
    ordered += [c for c in per_cluster if c not in ordered]
    print(f"{'Cluster':<14} Silhouette")
    for cluster in ordered:
        print(f"{cluster:<14} {per_cluster[cluster]:.2f}")
    print(f"{'Overall':<14} {overall:.2f}")
    (out_dir / "silhouette.json").write_text(json.dumps(
        {"per_cluster": per_cluster, "overall": overall}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")

    if len(vectors) >= 3:
        try:
            coords = pca_2d(vectors)
        except DegenerateRank as e:
            print(f"note: skipping the PCA projection ({e})", file=sys.stderr)
        else:
            with open(out_dir / "pca.csv", "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(["label", "cluster", "x", "y"])
                for lab, (x, y) in zip(labels, coords):
                    writer.writerow([lab, assignment[lab], f"{x:.6f}", f"{y:.6f}"])
            save_scatter_svg(coords, labels, assignment, out_dir / "pca.svg")
    else:
        print("note: fewer than 3 classes, skipping the PCA projection", file=sys.stderr)
    print(f"analysis artifacts in {out_dir}")
    return 0


def cmd_export_plot(args) -> int:
    if not args.relatedness and not args.pca:
        raise ConfigError("export-plot needs --relatedness and/or --pca")
    if args.relatedness:
        with open(args.relatedness, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
        labels = rows[0][1:]
        matrix = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
        out = args.out or str(Path(args.relatedness).with_suffix(".svg"))
        save_heatmap_svg(labels, matrix, out)
        print(f"wrote {out}")
    if args.pca:
        with open(args.pca, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
        labels = [r[0] for r in rows[1:]]
        clusters = {r[0]: r[1] for r in rows[1:]}
        points = np.array([[float(r[2]), float(r[3])] for r in rows[1:]])
        out = args.out or str(Path(args.pca).with_suffix(".svg"))
        save_scatter_svg(points, labels, clusters, out)
        print(f"wrote {out}")
    return 0


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sentseq",
        description="Sequential sentence classification experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a corpus file to canonical JSONL")
    p.add_argument("input")
    p.add_argument("--format", choices=("pubmed-rct", "jsonl"), required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--name", default="PMD", help="dataset name for pubmed-rct input")
    p.add_argument("--classes", default=PMD_CLASSES,
                   help="comma-separated class list for pubmed-rct input")
    p.set_defaults(func=cmd_ingest)

    for name, func, help_text in (
        ("train", cmd_train, "train a single-task model"),
        ("train-mtl", cmd_train_mtl, "train a multi-task model"),
        ("transfer-init", cmd_transfer_init, "train with layers initialised from a checkpoint"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="training seed override")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compile-generic", help="collapse datasets to the generic scheme")
    p.add_argument("--data", action="append", required=True,
                   help="canonical JSONL dataset (repeatable)")
    p.add_argument("--mapping", default=None,
                   help="label mapping JSON (defaults to the shipped mapping)")
    p.add_argument("--fraction", action="append", default=None, metavar="NAME=FRAC",
                   help="truncate dataset NAME to FRAC of its documents (e.g. PMD=1/20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_compile_generic)

    p = sub.add_parser("analyze", help="semantic relatedness analysis from prediction dumps")
    p.add_argument("--dump", action="append", required=True,
                   help="prediction CSV (repeatable)")
    p.add_argument("--schemes", required=True, help="JSON of class lists per dataset/task")
    p.add_argument("--clusters", default=None,
                   help="cluster assignment JSON (defaults to the shipped clusters)")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export-plot", help="re-render SVG figures from analysis CSVs")
    p.add_argument("--relatedness", default=None)
    p.add_argument("--pca", default=None)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_export_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
