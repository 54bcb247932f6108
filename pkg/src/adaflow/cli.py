"""Command-line interface covering the full experiment lifecycle.

Subcommands: synth, train, finetune, adapt, score, eval, translate, bench.
Every report path writes delimited data plus rendered figures next to it
(disable with --no-figures). All randomness derives from --seed; exit code 2
signals a usage error, 1 a runtime failure with the failing stage on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import plots
from .adaptation import adapt
from .autoencoder import AEModel, ae_from_document, ae_score, ae_to_document, ae_train
from .bench import (
    BenchConfig,
    run_bench,
    stage_seed,
    write_per_seed_csv,
    write_results_csv,
    write_timing_csv,
)
from .data import Dataset, load_dataset, load_domain_datasets, save_csv, save_dataset
from .flow import default_flow, document_to_json, load_model, model_to_document, save_model
from .scoring import evaluate, report_from_scores
from .synth import AnomalySpec, default_domain_specs, make_benchmark
from .train import TrainConfig, finetune, pretrain
from .translation import translate_batch


def _write_loss_csv(path, losses) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "domain_id", "nll"])
        for epoch, domain, nll in losses:
            writer.writerow([epoch, domain, repr(float(nll))])


def _write_timing_csv(path, phases) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phase", "seconds"])
        for phase, seconds in phases:
            writer.writerow([phase, repr(float(seconds))])


def _write_scores_csv(path, scores, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_index", "score", "label"])
        for i, s in enumerate(scores):
            label = "" if labels is None else int(labels[i])
            writer.writerow([i, repr(float(s)), label])


def _load_any_model(path, model_type: str):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if model_type == "ae" or doc.get("kind") == "autoencoder":
        return ae_from_document(doc), "ae"
    from .flow import model_from_document

    return model_from_document(doc), "flow"


def _save_ae(ae: AEModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(document_to_json(ae_to_document(ae)))
        fh.write("\n")


# -- subcommand handlers ---------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    anomaly = AnomalySpec(contamination=args.contamination)
    specs = default_domain_specs(args.dim, args.domains,
                                 n_train=args.n_train, n_test=args.n_test)
    bench = make_benchmark(args.seed, K=args.domains, dim=args.dim,
                           specs=specs, anomaly=anomaly)
    X = np.concatenate([ds.X for ds in bench.pretrain.values()])
    domains = np.concatenate([[k] * ds.n for k, ds in bench.pretrain.items()])
    save_csv(out / "pretrain.csv", X, domains=domains)
    save_dataset(out / "target_train.csv", bench.target_train)
    save_dataset(out / "target_test.csv", bench.target_test)
    print(f"wrote {out}/pretrain.csv, target_train.csv, target_test.csv")
    return 0


def _train_flow(args) -> int:
    datasets = load_domain_datasets(args.data)
    if args.pooled and len(datasets) > 1:
        pooled = np.concatenate([ds.X for ds in datasets.values()])
        datasets = {"pooled": Dataset(pooled, domain="pooled")}
    dim = next(iter(datasets.values())).dim
    model = default_flow(dim, args.blocks, seed=stage_seed(args.seed, "model"))
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, seed=stage_seed(args.seed, "train"))
    result = pretrain(model, datasets, cfg)
    save_model(model, args.out)
    stem = Path(args.out).with_suffix("")
    _write_loss_csv(f"{stem}_loss.csv", result.losses)
    _write_timing_csv(f"{stem}_timing.csv", [("pretrain", result.seconds)])
    if not args.no_figures:
        plots.save_loss_curves(result.losses, f"{stem}_loss.png")
    print(f"trained flow on {len(datasets)} domain(s) in {result.seconds:.2f}s -> {args.out}")
    return 0


def _train_ae(args) -> int:
    datasets = load_domain_datasets(args.data)
    dim = next(iter(datasets.values())).dim
    ae = AEModel.for_dim(dim, seed=stage_seed(args.seed, "model-ae"))
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, seed=stage_seed(args.seed, "train-ae"))
    result = ae_train(ae, datasets, cfg)
    _save_ae(ae, args.out)
    stem = Path(args.out).with_suffix("")
    _write_loss_csv(f"{stem}_loss.csv", result.losses)
    _write_timing_csv(f"{stem}_timing.csv", [("train_ae", result.seconds)])
    if not args.no_figures:
        plots.save_loss_curves(result.losses, f"{stem}_loss.png")
    print(f"trained autoencoder in {result.seconds:.2f}s -> {args.out}")
    return 0


def cmd_train(args) -> int:
    if args.model_type == "ae":
        return _train_ae(args)
    return _train_flow(args)


def cmd_finetune(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.data)
    X = ds.X if args.n_adapt is None else ds.X[: args.n_adapt]
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, seed=stage_seed(args.seed, "finetune"))
    result = finetune(model, X, args.domain_id, cfg)
    save_model(model, args.out)
    stem = Path(args.out).with_suffix("")
    _write_loss_csv(f"{stem}_loss.csv", result.losses)
    _write_timing_csv(f"{stem}_timing.csv", [("finetune", result.seconds)])
    if not args.no_figures and result.losses:
        plots.save_loss_curves(result.losses, f"{stem}_loss.png")
    print(f"fine-tuned on {len(X)} samples in {result.seconds:.2f}s -> {args.out}")
    return 0


def cmd_adapt(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.data)
    X = ds.X if args.n_adapt is None else ds.X[: args.n_adapt]
    t0 = time.perf_counter()
    adapt(model, X, args.domain_id)
    seconds = time.perf_counter() - t0
    save_model(model, args.out)
    if args.report:
        _write_timing_csv(args.report, [("adapt", seconds)])
    print(f"adapted domain {args.domain_id!r} from {len(X)} samples "
          f"in {seconds:.4f}s -> {args.out}")
    return 0


def cmd_score(args) -> int:
    model, kind = _load_any_model(args.model, args.model_type)
    ds = load_dataset(args.data)
    if kind == "ae":
        scores = ae_score(model, ds.X)
    else:
        scores = -model.log_likelihood(ds.X, args.domain_id)
    _write_scores_csv(args.out, scores, ds.labels)
    print(f"wrote {len(scores)} scores -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, kind = _load_any_model(args.model, args.model_type)
    ds = load_dataset(args.data)
    t0 = time.perf_counter()
    if kind == "ae":
        scores = ae_score(model, ds.X)
        report = report_from_scores(scores, ds.labels, time.perf_counter() - t0)
    else:
        scores = -model.log_likelihood(ds.X, args.domain_id)
        report = report_from_scores(scores, ds.labels, time.perf_counter() - t0,
                                    nll_scores=scores)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    if args.scores:
        _write_scores_csv(args.scores, scores, ds.labels)
    stem = Path(args.out).with_suffix("")
    if not args.no_figures:
        if report.roc_points is not None:
            plots.save_roc_curve(report.roc_points, report.auroc, f"{stem}_roc.png")
        plots.save_score_histogram(scores, ds.labels, f"{stem}_scores.png")
    auroc_str = "n/a" if report.auroc is None else f"{report.auroc:.4f}"
    nll_str = "n/a" if report.mean_nll is None else f"{report.mean_nll:.4f}"
    print(f"mean_nll={nll_str} auroc={auroc_str} -> {args.out}")
    return 0


def cmd_translate(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.data)
    out = translate_batch(model, ds.X, args.from_domain, args.to_domain)
    save_csv(args.out, out)
    if not args.no_figures:
        stem = Path(args.out).with_suffix("")
        plots.save_translation_scatter(ds.X, out, f"{stem}_scatter.png")
    print(f"translated {len(out)} samples {args.from_domain!r} -> {args.to_domain!r}")
    return 0


def cmd_bench(args) -> int:
    cfg = BenchConfig(seed=args.seed, n_seeds=args.seeds, dim=args.dim,
                      n_domains=args.domains, epochs=args.epochs,
                      batch_size=args.batch_size, learning_rate=args.lr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_bench(cfg)
    write_results_csv(out / "results.csv", result.rows)
    write_per_seed_csv(out / "results_per_seed.csv", result.per_seed)
    write_timing_csv(out / "timing.csv", result.timings)
    if not args.no_figures:
        plots.save_bench_summary(result.rows, out / "results.png")
        means = [(p.split("[", 1)[0], s) for p, s in result.timings if p.endswith("[mean]")]
        plots.save_timing_bars(means, out / "timing.png")
    for method, n, nll, area in result.rows:
        nll_str = "n/a" if nll is None else f"{nll:.3f}"
        print(f"{method:>16} n={n:<5} mean_nll={nll_str:>8} auroc={area:.4f}")
    return 0


# -- parser ------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering PNG figures next to the data files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaflow",
        description="multi-domain anomaly detection with a statistics-adaptive flow",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the seeded synthetic benchmark")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--domains", type=int, default=3)
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--contamination", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="pre-train a flow or autoencoder")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model-type", choices=["flow", "ae"], default="flow")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--pooled", action="store_true",
                   help="merge all domains into one (plain batch norm baseline)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="gradient-adapt all parameters to a new domain")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-adapt", type=int, default=None)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-4)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("adapt", help="register a new domain from statistics only")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="timing CSV path")
    p.add_argument("--n-adapt", type=int, default=None)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("score", help="write per-sample anomaly scores")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain-id", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--model-type", choices=["flow", "ae"], default="flow")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score a labeled test set and report NLL/AUROC")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain-id", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--scores", default=None, help="also write the scores CSV here")
    p.add_argument("--model-type", choices=["flow", "ae"], default="flow")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("translate", help="cross-domain translation via statistic swap")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--from", dest="from_domain", required=True)
    p.add_argument("--to", dest="to_domain", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("bench", help="run the full experiment matrix over seeds")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--domains", type=int, default=3)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # argparse already exited 2 on usage errors
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
