"""Command-line pipeline: synth, ingest, build-graph, pretrain, detect, eval, sweep.

``detect`` chains every stage (pretraining can be skipped by passing a
checkpoint) and writes all artifacts plus the fully resolved configuration
under one run directory, so any run can be reproduced byte-for-byte from
its persisted config and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import em as em_mod
from . import graph as graph_mod
from . import metrics as metrics_mod
from .events import (
    Dataset,
    load_dataset,
    load_labels,
    save_dataset,
    save_labels,
    split_long_sequences,
    train_val_test_split,
)
from .hawkes import make_planted_scenario
from .pointprocess import SeqModelConfig, SequenceModel, TrainConfig, train

METRIC_NAMES = ["ap", "auc", "max_f1", "f1", "precision", "recall", "macro_f1"]


class UsageError(ValueError):
    pass


class StageError(RuntimeError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


# ---- shared pipeline pieces ----

def _load_data(args) -> Dataset:
    d = load_dataset(args.data, min_account_count=args.min_account_count)
    if args.max_len:
        d = split_long_sequences(d, args.max_len)
    return d


def _model_config(args) -> SeqModelConfig:
    return SeqModelConfig(
        d_embed=args.d_embed,
        d_pos=args.d_pos,
        d_time=args.d_time,
        n_mix=args.mix_components,
    )


def _pretrain(d: Dataset, args) -> SequenceModel:
    fractions = args.fractions
    tr, va, _ = train_val_test_split(d, fractions, args.seed)
    cfg = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        patience=args.patience,
        seed=args.seed,
    )
    return train(tr if tr.sequences else d, cfg, _model_config(args),
                 val=va if va.sequences else None)


def _build_graph(d: Dataset, args) -> graph_mod.KnowledgeGraph:
    if args.filter == "none":
        return graph_mod.co_occurrence(d)
    if args.filter == "power":
        return graph_mod.filter_power(graph_mod.co_occurrence(d), args.p)
    if args.filter == "tl":
        return graph_mod.filter_temporal_logic(d, args.c)
    raise UsageError(f"unknown filter {args.filter!r}")


def _em_config(args) -> em_mod.EmConfig:
    return em_mod.EmConfig(
        n_groups=args.groups,
        n_loops=args.loops,
        estep_only=args.estep_only,
        m_step_epochs=args.em_epochs,
        m_step_lr=args.em_lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        patience=args.patience,
        estep_tol=args.estep_tol,
        estep_max_iter=args.estep_iters,
        estep_schedule=args.schedule,
        lambda_balance=args.lam,
        threshold=args.threshold,
        fractions=tuple(args.fractions),
        scorer_hidden=args.scorer_hidden,
        seed=args.seed,
    )


def write_result_csv(result: em_mod.DetectionResult, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("account,score,label,group\n")
        for i, account in enumerate(result.accounts):
            fh.write(
                f"{account},{_fmt(result.scores[i])},"
                f"{int(result.labels[i])},{int(result.group_of[i])}\n"
            )


def read_result_csv(path):
    rows = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append((rec["account"], float(rec["score"]), int(rec["label"])))
    return rows


def write_q_csv(result: em_mod.DetectionResult, path) -> None:
    M = result.mean_field.n_groups
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("account," + ",".join(f"q_{m}" for m in range(M)) + "\n")
        for i, account in enumerate(result.accounts):
            row = ",".join(_fmt(v) for v in result.mean_field.q[i])
            fh.write(f"{account},{row}\n")


def evaluate_scores(rows, labels: dict, exclude=(), threshold: float = 0.5) -> dict:
    """Metrics for (account, score, label) rows against truth labels.

    Accounts without a truth label and excluded (revealed) accounts are
    dropped; truth group 1 is the positive (coordinated) class.
    """
    exclude = set(exclude)
    scores, truth = [], []
    for account, score, _ in rows:
        if account in exclude or account not in labels:
            continue
        scores.append(score)
        truth.append(1 if labels[account] == 1 else 0)
    scores = np.asarray(scores)
    truth = np.asarray(truth)
    out = {
        "ap": metrics_mod.average_precision(scores, truth),
        "auc": metrics_mod.roc_auc(scores, truth),
        "max_f1": metrics_mod.max_f1(scores, truth),
    }
    out.update(metrics_mod.thresholded_metrics(scores, truth, threshold))
    return {k: out[k] for k in METRIC_NAMES}


def write_metrics(metrics: dict, csv_path, txt_path) -> None:
    with Path(csv_path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("metric,value\n")
        for k in METRIC_NAMES:
            fh.write(f"{k},{_fmt(metrics[k])}\n")
    width = max(len(k) for k in METRIC_NAMES)
    lines = [f"{k:<{width}}  {metrics[k]:.4f}" for k in METRIC_NAMES]
    Path(txt_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(f"stage '{name}' failed: {exc}") from exc


def run_pipeline(args, run_dir: Path) -> dict | None:
    """detect pipeline; returns the metrics dict when truth labels are given."""
    run_dir.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    (run_dir / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True, default=str) + "\n",
        encoding="utf-8",
    )

    d = _stage("ingest", _load_data, args)

    if args.checkpoint:
        model = _stage("load-checkpoint", SequenceModel.load, args.checkpoint)
        if model.accounts != d.registry.keys:
            raise StageError("stage 'load-checkpoint' failed: checkpoint accounts "
                             "do not match the dataset registry")
    else:
        model = _stage("pretrain", _pretrain, d, args)
        _stage("pretrain", model.save, run_dir / "checkpoint.npz")

    g = _stage("build-graph", _build_graph, d, args)
    _stage("build-graph", graph_mod.save_graph, g, run_dir / "graph.csv")

    revealed = None
    if args.revealed:
        revealed = _stage("read-revealed", load_labels, args.revealed)
        revealed = {a: g_ for a, g_ in revealed.items() if a in d.registry}

    result = _stage("em", em_mod.run_em, d, g, model, _em_config(args), revealed)
    _stage("write-result", write_result_csv, result, run_dir / "result.csv")
    _stage("write-result", write_q_csv, result, run_dir / "q_matrix.csv")

    if args.labels:
        labels = _stage("eval", load_labels, args.labels)
        exclude = set(revealed) if revealed else set()
        rows = [(a, float(result.scores[i]), int(result.labels[i]))
                for i, a in enumerate(result.accounts)]
        metrics = _stage("eval", evaluate_scores, rows, labels, exclude, args.threshold)
        _stage("eval", write_metrics, metrics,
               run_dir / "metrics.csv", run_dir / "metrics.txt")
        return metrics
    return None


# ---- subcommands ----

def cmd_synth(args) -> int:
    if args.coord < 2:
        raise UsageError("--coord must be >= 2")
    if args.strength < 0:
        raise UsageError("--strength must be non-negative")
    _, data = make_planted_scenario(
        args.normal, args.coord, args.strength, args.seed,
        n_sequences=args.sequences, horizon=args.horizon,
    )
    save_dataset(data, args.out)
    save_labels(data.labels, args.labels)
    print(f"wrote {len(data.sequences)} sequences, {len(data.registry)} accounts "
          f"-> {args.out}, labels -> {args.labels}")
    return 0


def cmd_ingest(args) -> int:
    d = load_dataset(args.input, format=args.format,
                     min_account_count=args.min_account_count)
    if args.max_len:
        d = split_long_sequences(d, args.max_len)
    save_dataset(d, args.out)
    print(f"wrote {len(d.sequences)} sequences, {len(d.registry)} accounts, "
          f"{d.n_events()} events -> {args.out}")
    return 0


def cmd_build_graph(args) -> int:
    d = _load_data(args)
    g = _build_graph(d, args)
    graph_mod.save_graph(g, args.out)
    nnz = int(np.count_nonzero(np.triu(g.w, k=1)))
    print(f"wrote graph [{g.filter_tag}] with {g.n} accounts, {nnz} edges -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    d = _load_data(args)
    model = _pretrain(d, args)
    model.save(args.out)
    print(f"wrote checkpoint ({model.n_accounts} accounts) -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else (
        Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-{args.tag}"
    )
    metrics = run_pipeline(args, run_dir)
    print(f"run artifacts -> {run_dir}")
    if metrics is not None:
        print((run_dir / "metrics.txt").read_text(), end="")
    return 0


def cmd_eval(args) -> int:
    rows = read_result_csv(args.result)
    labels = load_labels(args.labels)
    exclude = set(load_labels(args.exclude)) if args.exclude else set()
    metrics = evaluate_scores(rows, labels, exclude, args.threshold)
    out_csv = Path(args.out) if args.out else Path(args.result).with_name("metrics.csv")
    out_txt = out_csv.with_suffix(".txt")
    write_metrics(metrics, out_csv, out_txt)
    print(out_txt.read_text(), end="")
    return 0


def cmd_sweep(args) -> int:
    loops_grid = [int(x) for x in args.loops_grid.split(",") if x.strip()]
    seeds = [int(x) for x in args.seeds.split(",") if x.strip()]
    if not loops_grid or not seeds:
        raise UsageError("--loops-grid and --seeds must be non-empty")
    if not args.labels:
        raise UsageError("sweep needs --labels to aggregate metrics")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    d = _load_data(args)
    checkpoints = {}
    for seed in seeds:  # pretraining depends on the seed only, cache per seed
        sub = argparse.Namespace(**vars(args))
        sub.seed = seed
        ckpt = out_dir / f"checkpoint-seed{seed}.npz"
        if not ckpt.exists():
            model = _pretrain(d, sub)
            model.save(ckpt)
        checkpoints[seed] = ckpt

    per_run = []
    for loops in loops_grid:
        for seed in seeds:
            sub = argparse.Namespace(**vars(args))
            sub.loops = loops
            sub.seed = seed
            sub.checkpoint = str(checkpoints[seed])
            run_dir = out_dir / f"loops{loops}-seed{seed}"
            metrics = run_pipeline(sub, run_dir)
            per_run.append((loops, seed, metrics))

    with (out_dir / "summary.csv").open("w", encoding="utf-8", newline="") as fh:
        head = ["loops", "n_runs"]
        for name in METRIC_NAMES:
            head += [f"{name}_mean", f"{name}_std"]
        fh.write(",".join(head) + "\n")
        for loops in loops_grid:
            values = [m for lp, _, m in per_run if lp == loops]
            row = [str(loops), str(len(values))]
            for name in METRIC_NAMES:
                xs = np.array([m[name] for m in values])
                row += [_fmt(xs.mean()), _fmt(xs.std())]
            fh.write(",".join(row) + "\n")
    print(f"wrote {len(per_run)} runs -> {out_dir / 'summary.csv'}")
    return 0


# ---- parser ----

def _add_data_opts(p, with_labels=True):
    p.add_argument("--data", required=True, help="dataset file (JSON-lines or CSV)")
    if with_labels:
        p.add_argument("--labels", default=None, help="truth labels CSV (account,group)")
    p.add_argument("--min-account-count", type=int, default=0,
                   help="drop accounts with fewer events than this (default: off)")
    p.add_argument("--max-len", type=int, default=128,
                   help="split sequences longer than this (default: 128)")


def _add_train_opts(p):
    p.add_argument("--epochs", type=int, default=100, help="pretraining epoch cap")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate (default: 1e-3)")
    p.add_argument("--weight-decay", type=float, default=1e-5,
                   help="L2 regularization (default: 1e-5)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=10, help="early-stopping patience")
    p.add_argument("--d-embed", type=int, default=64, help="account embedding width")
    p.add_argument("--d-pos", type=int, default=8)
    p.add_argument("--d-time", type=int, default=8)
    p.add_argument("--mix-components", type=int, default=32,
                   help="log-normal mixture size (default: 32)")
    p.add_argument("--fractions", type=_fractions, default=(0.70, 0.15, 0.15),
                   help="train/val/test fractions (default: 0.70,0.15,0.15)")


def _add_graph_opts(p):
    p.add_argument("--filter", choices=["none", "power", "tl"], default="power",
                   help="edge-weight filter (default: power)")
    p.add_argument("--p", type=float, default=3.0,
                   help="power-filter exponent (default: 3)")
    p.add_argument("--c", type=float, default=43200.0,
                   help="temporal-overlap threshold in seconds (default: 43200 = 12h)")


def _add_em_opts(p):
    p.add_argument("--groups", type=int, default=2, help="group count M (default: 2)")
    p.add_argument("--loops", type=int, default=1,
                   help="EM loops; pick from {1,2,3} on validation (default: 1)")
    p.add_argument("--estep-only", action="store_true",
                   help="single E-step as post-processing, no M-step")
    p.add_argument("--em-epochs", type=int, default=50,
                   help="M-step epoch cap (default: 50, early-stopped)")
    p.add_argument("--em-lr", type=float, default=1e-3)
    p.add_argument("--estep-tol", type=float, default=1e-6)
    p.add_argument("--estep-iters", type=int, default=10,
                   help="E-step sweep cap (default: 10)")
    p.add_argument("--schedule", choices=["jacobi", "gauss_seidel"], default="jacobi")
    p.add_argument("--lam", type=float, default=1.0,
                   help="weight of the assignment term vs the likelihood (default: 1)")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="detection threshold on the coordinated score (default: 0.5)")
    p.add_argument("--scorer-hidden", type=int, default=64)
    p.add_argument("--revealed", default=None,
                   help="labels CSV of revealed accounts (semi-supervised)")


def _fractions(text: str):
    parts = tuple(float(x) for x in text.split(","))
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coact",
        description="Coordinated account-group detection from temporal event sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-group synthetic dataset")
    p.add_argument("--normal", type=int, default=80)
    p.add_argument("--coord", type=int, default=20)
    p.add_argument("--strength", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sequences", type=int, default=150)
    p.add_argument("--horizon", type=float, default=259200.0)
    p.add_argument("--out", default="synth.jsonl")
    p.add_argument("--labels", default="synth_labels.csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate and normalize a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--min-account-count", type=int, default=0)
    p.add_argument("--max-len", type=int, default=0, help="0 = do not split")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graph", help="build the prior co-appearance graph")
    _add_data_opts(p, with_labels=False)
    _add_graph_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("pretrain", help="train the sequence model")
    _add_data_opts(p, with_labels=False)
    _add_train_opts(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("detect", help="full pipeline: pretrain, graph, EM, eval")
    _add_data_opts(p)
    _add_train_opts(p)
    _add_graph_opts(p)
    _add_em_opts(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None, help="skip pretraining, load this")
    p.add_argument("--run-dir", default=None)
    p.add_argument("--tag", default="run")
    p.add_argument("--config", default=None,
                   help="JSON config; flags given on the command line override it")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score a result CSV against truth labels")
    p.add_argument("--result", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--exclude", default=None,
                   help="labels CSV of accounts to exclude (e.g. revealed)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None, help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid of detect runs with mean/std aggregation")
    _add_data_opts(p)
    _add_train_opts(p)
    _add_graph_opts(p)
    _add_em_opts(p)
    p.add_argument("--loops-grid", default="1,2,3")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", required=True, help="sweep output directory")
    p.set_defaults(func=cmd_sweep)

    return parser


def _apply_config_file(parser, argv):
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    cfg_path = argv[i + 1]
    config = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
    config.pop("command", None)
    config.pop("config", None)
    known = {
        action.dest for action in parser._subparsers._group_actions[0]
        .choices[argv[0]]._actions
    }
    defaults = {}
    for key, value in config.items():
        if key in known:
            defaults[key] = tuple(value) if key == "fractions" else value
    parser._subparsers._group_actions[0].choices[argv[0]].set_defaults(**defaults)
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if argv and argv[0] == "detect":
        _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
