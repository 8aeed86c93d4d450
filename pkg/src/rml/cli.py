"""Command-line entry points: synth, train, cluster, classify, gradcheck, convergence, sweep."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import report
from .autodiff import RngStream
from .classification import train_classifier
from .clustering import kmeans
from .data import (DatasetError, MultiViewDataset, load_dataset, make_blobs, normalize,
                   parse_synth, save_dataset)
from .fusion import ConfigError, FusionConfig, load_checkpoint, save_checkpoint
from .metrics import contingency
from .optim import LAMBDA_PRESETS, TrainConfig
from .perturbation import PerturbationConfig, PerturbationError
from .training import infer, train_self_supervised

log = logging.getLogger("rml")


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message)


def _unit_interval(name):
    def parse(text):
        v = float(text)
        if not 0.0 <= v <= 1.0:
            raise argparse.ArgumentTypeError(f"--{name} must lie in [0, 1], got {v}")
        return v
    return parse


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def _add_data(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--data", help="dataset manifest (JSON) or its directory")
    g.add_argument("--synth", help="synthetic preset, e.g. blobs:N=500,k=5,D=20/50/10")
    p.add_argument("--normalize", choices=["none", "zscore", "minmax"], default=None,
                   help="input normalization (default zscore)")


def _add_training(p):
    p.add_argument("--p", type=_unit_interval("p"), default=0.25, help="noise ratio")
    p.add_argument("--r", type=_unit_interval("r"), default=0.25, help="unusable ratio")
    p.add_argument("--sigma", type=_positive, default=0.4, help="noise scale")
    p.add_argument("--tau", type=_positive, default=0.5, help="InfoNCE temperature")
    p.add_argument("--lr", type=_positive, default=3e-4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--d-e", type=int, default=256, dest="d_e")
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rml", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset and its manifest")
    p.add_argument("--spec", default="blobs", help="preset string, e.g. blobs:N=500,k=5")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--encoding", choices=["csv", "f32le-rowmajor"], default="f32le-rowmajor")

    p = sub.add_parser("train", help="self-supervised RML training")
    _add_data(p)
    _add_training(p)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--loss-trace", help="two-column (step, loss) output file")
    p.add_argument("--figure", help="loss-curve image path")
    p.add_argument("--ablate", nargs="+", choices=["atten", "np", "mp"], default=[],
                   help="disable sample-level attention / noise branch / unusable branch")

    p = sub.add_parser("cluster", help="K-Means on fused representations")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="key=value record file")
    p.add_argument("--figure", help="contingency heatmap image path")

    p = sub.add_parser("classify", help="noise-label classification")
    _add_data(p)
    _add_training(p)
    p.add_argument("--noise-rate", type=_unit_interval("noise-rate"), default=0.0)
    p.add_argument("--loss", choices=["ce", "mce"], default="mce")
    p.add_argument("--lambda", dest="lam", default="1.0",
                   help=f"trade-off weight or preset ({', '.join(LAMBDA_PRESETS)})")
    p.add_argument("--split", type=_unit_interval("split"), default=0.7)
    p.add_argument("--report", help="key=value record file")
    p.add_argument("--figure", help="loss-curve image path")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--step", type=float, default=1e-5)

    p = sub.add_parser("convergence", help="loss traces for several perturbation ratios")
    _add_data(p)
    _add_training(p)
    p.add_argument("--ratios", type=float, nargs="+", default=[0.25, 0.5, 0.75])
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sweep", help="clustering (p, r) or classification (lambda) sweep")
    _add_data(p)
    _add_training(p)
    p.add_argument("--param", choices=["p", "r", "lambda"], required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--noise-rate", type=_unit_interval("noise-rate"), default=0.5)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    return parser


# -------------------------------------------------------------------- helpers

def _dataset(args, fallback_norm: str = "zscore") -> MultiViewDataset:
    if args.data:
        ds = load_dataset(args.data)
    else:
        spec = parse_synth(args.synth)
        if getattr(args, "seed", None) is not None and "seed=" not in args.synth:
            spec.seed = args.seed
        ds = make_blobs(spec)
    mode = args.normalize or fallback_norm
    log.info("normalization: %s", mode)
    return normalize(ds, mode)


def _configs(args, ds: MultiViewDataset, lam: float = 1.0):
    fcfg = FusionConfig(ds.dims, d_e=args.d_e, d=args.d, dropout_rate=args.dropout)
    pcfg = PerturbationConfig(p=args.p, sigma=args.sigma, r=args.r)
    tcfg = TrainConfig(eta=args.lr, batch_n=args.batch, epochs=args.epochs, tau=args.tau,
                       lam=lam, seed=args.seed, ablate=tuple(getattr(args, "ablate", ())))
    return fcfg, pcfg, tcfg


def _record(kind: str, metrics: dict, seed: int, cfg: dict) -> dict:
    return {"command": kind, **metrics, "seed": seed, "config_hash": report.config_hash(cfg)}


def _lambda(text: str) -> float:
    if text in LAMBDA_PRESETS:
        return LAMBDA_PRESETS[text]
    try:
        v = float(text)
    except ValueError:
        raise CLIError(f"--lambda must be a number or one of {sorted(LAMBDA_PRESETS)}")
    if v < 0:
        raise CLIError(f"--lambda must be >= 0, got {v}")
    return v


# ------------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    spec = parse_synth(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    path = save_dataset(make_blobs(spec), args.out, args.encoding)
    report.emit({"command": "synth", "manifest": path, "n": spec.n, "k": spec.k,
                 "dims": spec.dims, "seed": spec.seed})
    return 0


def cmd_train(args) -> int:
    ds = _dataset(args)
    fcfg, pcfg, tcfg = _configs(args, ds)
    model, trace = train_self_supervised(ds, fcfg, pcfg, tcfg)
    meta = {"normalize": args.normalize or "zscore", "train": asdict(tcfg),
            "perturbation": asdict(pcfg)}
    out = {"command": "train", "steps": len(trace), "loss_first": trace.rml[0],
           "loss_last": trace.rml[-1], "seed": tcfg.seed,
           "config_hash": report.config_hash({**meta, "fusion": fcfg.to_dict()})}
    if args.out:
        save_checkpoint(model, args.out, meta)
        out["checkpoint"] = args.out
    if args.loss_trace:
        trace.save(args.loss_trace)
        out["loss_trace"] = args.loss_trace
    if args.figure:
        from .plotting import plot_loss_traces
        plot_loss_traces({"RML": trace}, args.figure)
        out["figure"] = args.figure
    report.emit(out)
    return 0


def cmd_cluster(args) -> int:
    model, meta = load_checkpoint(args.model, with_meta=True)
    ds = _dataset(args, meta.get("normalize", "zscore"))
    z = infer(model, ds)
    res = kmeans(z, args.k, RngStream(args.seed, ("kmeans",)), truth=ds.labels)
    metrics = {"k": args.k, "n": ds.n_samples, "inertia": res.inertia}
    if ds.labels is not None:
        metrics.update(acc=res.acc, nmi=res.nmi)
    report.emit(_record("cluster", metrics, args.seed,
                        {"model": str(args.model), "k": args.k, **meta}), args.report)
    if args.figure and ds.labels is not None:
        from .plotting import plot_contingency
        plot_contingency(contingency(res.assignments, ds.labels), args.figure)
    return 0


def cmd_classify(args) -> int:
    ds = _dataset(args)
    lam = _lambda(args.lam)
    fcfg, pcfg, tcfg = _configs(args, ds, lam)
    run = train_classifier(ds, args.noise_rate, args.loss, fcfg, pcfg, tcfg, args.split)
    cfg = {"fusion": fcfg.to_dict(), "perturbation": asdict(pcfg), "train": asdict(tcfg),
           "noise_rate": args.noise_rate, "loss": args.loss, "split": args.split}
    metrics = {"loss": args.loss, "noise_rate": args.noise_rate, "lambda": lam,
               **run.report.as_dict()}
    report.emit(_record("classify", metrics, tcfg.seed, cfg), args.report)
    if args.figure:
        from .plotting import plot_loss_traces
        plot_loss_traces({args.loss.upper(): run.trace}, args.figure,
                         title="classification objective")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite
    reports = run_suite(seed=args.seed, step=args.step, tol=args.tol)
    out = {"command": "gradcheck"}
    for name, r in reports.items():
        out[f"{name}.max_rel_err"] = f"{r.max_rel_err:.3e}"
        out[f"{name}.pass"] = r.passed
    passed = all(r.passed for r in reports.values())
    out["pass"] = passed
    report.emit(out)
    return 0 if passed else 1


def cmd_convergence(args) -> int:
    from .plotting import plot_loss_traces
    ds = _dataset(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces = {}
    out = {"command": "convergence"}
    for ratio in args.ratios:
        args.p = args.r = ratio
        fcfg, pcfg, tcfg = _configs(args, ds)
        _, trace = train_self_supervised(ds, fcfg, pcfg, tcfg)
        label = f"{ratio:.0%}"
        traces[label] = trace
        trace.save(out_dir / f"loss_{int(round(ratio * 100))}.txt")
        sm = trace.smoothed(10)
        out[f"ratio_{ratio:g}.first"] = float(sm[: max(1, len(sm) // 10)].mean())
        out[f"ratio_{ratio:g}.last"] = float(sm[-max(1, len(sm) // 10):].mean())
    out["figure"] = plot_loss_traces(traces, out_dir / "convergence.png")
    report.emit(out, out_dir / "convergence.txt")
    return 0


def cmd_sweep(args) -> int:
    from .plotting import plot_sweep
    ds = _dataset(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = {}
    for value in args.values:
        if args.param == "lambda":
            fcfg, pcfg, tcfg = _configs(args, ds, value)
            rep = train_classifier(ds, args.noise_rate, "mce", fcfg, pcfg, tcfg).report
            rows[value] = {"acc": rep.acc, "precision": rep.precision, "f1": rep.f1}
        else:
            setattr(args, args.param, value)
            fcfg, pcfg, tcfg = _configs(args, ds)
            model, _ = train_self_supervised(ds, fcfg, pcfg, tcfg)
            k = args.k or ds.n_classes
            res = kmeans(infer(model, ds), k, RngStream(args.seed, ("kmeans",)), truth=ds.labels)
            rows[value] = {"acc": res.acc, "nmi": res.nmi}
    names = list(next(iter(rows.values())))
    out = {"command": "sweep", "param": args.param}
    for value, metrics in rows.items():
        for name, v in metrics.items():
            out[f"{args.param}={value:g}.{name}"] = v
    out["figure"] = plot_sweep(args.param, list(rows),
                               {n: [rows[v][n] for v in rows] for n in names},
                               out_dir / f"sweep_{args.param}.png")
    report.emit(out, out_dir / f"sweep_{args.param}.txt")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "classify": cmd_classify,
    "gradcheck": cmd_gradcheck,
    "convergence": cmd_convergence,
    "sweep": cmd_sweep,
}

EXPECTED_ERRORS = (CLIError, ConfigError, DatasetError, PerturbationError, ValueError,
                   OSError, FloatingPointError)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except EXPECTED_ERRORS as exc:
        msg = " ".join(str(exc).split())
        print(f"error: kind={type(exc).__name__} message={msg}", file=sys.stderr)
        return 2 if isinstance(exc, CLIError) else 1


if __name__ == "__main__":
    sys.exit(main())
