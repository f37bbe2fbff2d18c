"""Command-line entry point: ``dppairwise {calibrate,train,stability,experiment}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import Bounds, gen_synthetic, load_dataset
from .harness import ExperimentConfig, StabilityConfig, run_experiment, stability_experiment
from .losses import make_loss
from .optimizer import TrainConfig, dp_pairwise_gd
from .privacy import PrivacyBudget, calibrate
from .report import dumps, make_report, write_report
from .risk import empirical_risk
from .stability import beta_statistics, estimate_uas, exact_trainer


def _synthetic_spec(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected kind,n,d")
    kind, n, d = parts
    try:
        return kind, int(n), int(d)
    except ValueError:
        raise argparse.ArgumentTypeError("n and d must be integers") from None


def _data_seed(seed: int) -> int:
    # keep the data stream apart from the noise stream seeded with ``seed``
    return int(np.random.SeedSequence([seed, 0xDA7A]).generate_state(1)[0])


def _load(args):
    if args.data is not None:
        with open(args.data, encoding="utf-8", newline="") as fh:
            header = next(csv.reader(fh), [])
        d = max(len(header) - 1, 1)
        D = load_dataset(args.data, Bounds(d, args.x_max, args.y_max))
        return D, {"data": str(args.data)}
    kind, n, d = args.synthetic
    seed = _data_seed(args.seed)
    D = gen_synthetic(kind, n, d, seed)
    return D, {"synthetic": {"kind": kind, "n": n, "d": d, "seed": seed}}


def _emit(report: dict, out) -> None:
    if out is None:
        sys.stdout.write(dumps(report))
    else:
        write_report(report, out)


def cmd_calibrate(args) -> int:
    noise = calibrate(args.G, args.T, args.n, PrivacyBudget(args.eps, args.delta), args.method)
    print(repr(noise.sigma))
    return 0


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    D, source = _load(args)
    radius = 1.0 if args.project is None else args.project
    loss = make_loss(args.loss, args.lam, D.bounds, radius=radius, source=args.constants)
    noise = calibrate(loss.constants.G, args.T, D.n, PrivacyBudget(args.eps, args.delta), args.method)
    cfg = TrainConfig(T=args.T, sigma=noise, eta=args.eta, project=args.project, seed=args.seed)
    res = dp_pairwise_gd(loss, D, cfg, workers=args.workers)
    rec = {
        "n": D.n,
        "d": D.d,
        "T": args.T,
        "sigma": noise.sigma,
        "eta": res.eta,
        "noise_seed": res.noise_seed,
        "theta_priv": res.theta_priv.theta,
        "initial_risk": res.initial_risk,
        "final_risk": empirical_risk(loss, res.theta_priv.theta, D, args.workers),
        "risk_trace": res.risk_trace,
        "grad_norm_trace": res.grad_norm_trace,
    }
    if args.timings:
        rec["runtime_s"] = time.perf_counter() - t0
    config = {
        "command": "train",
        **source,
        "loss": args.loss,
        "lambda": args.lam,
        "constants": loss.constants.source,
        "G": loss.constants.G,
        "L": loss.constants.L,
        "mu": loss.constants.mu,
        "epsilon": args.eps,
        "delta": args.delta,
        "method": noise.method,
        "train": res.config_echo,
    }
    _emit(make_report(config, [rec]), args.out)
    return 0


def cmd_stability(args) -> int:
    t0 = time.perf_counter()
    D, source = _load(args)
    loss = make_loss(args.loss, args.lam, D.bounds, source=args.constants)
    rep = beta_statistics(loss, D, args.method, args.removals, args.pairs, args.seed, workers=args.workers)
    rec = rep.to_dict(table=True)
    if args.uas > 0:
        uas = estimate_uas(loss, D, exact_trainer(loss, workers=args.workers), args.uas, args.seed)
        rec["uas"] = {"kappa": uas.kappa, "G_kappa": uas.G_kappa, "shifts": uas.shifts}
    if args.timings:
        rec["runtime_s"] = time.perf_counter() - t0
    config = {
        "command": "stability",
        **source,
        "loss": args.loss,
        "lambda": args.lam,
        "constants": loss.constants.source,
        "method": args.method,
        "removals": args.removals,
        "pairs": args.pairs,
        "seed": args.seed,
        "uas_replacements": args.uas,
    }
    _emit(make_report(config, [rec]), args.out)
    return 0


def cmd_experiment(args) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    kind = raw.pop("experiment", "utility")
    if kind == "utility":
        report = run_experiment(ExperimentConfig.from_dict(raw), workers=args.workers, timings=args.timings)
        out = report.to_dict()
    elif kind == "stability":
        res = stability_experiment(StabilityConfig(**raw), workers=args.workers)
        out = make_report(res["config"], res["records"], res["aggregates"], res["slopes"])
    else:
        raise ValueError(f"unknown experiment type {kind!r}")
    out["config"]["experiment"] = kind
    _emit(out, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--timings", action="store_true", help="include wall-clock runtimes in the report")

    parser = argparse.ArgumentParser(prog="dppairwise", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="print the Gaussian noise scale")
    p.add_argument("--G", type=float, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--method", default="ma", choices=["ma", "basic", "moments_accountant", "basic_gaussian"])
    p.set_defaults(func=cmd_calibrate)

    def data_args(p):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--data", type=Path, help="CSV with header x0,...,x{d-1},y")
        src.add_argument("--synthetic", type=_synthetic_spec, metavar="KIND,N,D")
        p.add_argument("--x-max", dest="x_max", type=float, default=1.0)
        p.add_argument("--y-max", dest="y_max", type=float, default=1.0)
        p.add_argument("--loss", required=True)
        p.add_argument("--lambda", dest="lam", type=float, default=0.1)
        p.add_argument("--constants", default="published", choices=["published", "worst_case"])
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path)

    p = sub.add_parser("train", parents=[common], help="differentially private pairwise training")
    data_args(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--eta", type=float)
    p.add_argument("--project", type=float, metavar="R")
    p.add_argument("--method", default="ma", choices=["ma", "basic", "moments_accountant", "basic_gaussian"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stability", parents=[common], help="empirical pairwise stability statistics")
    data_args(p)
    p.add_argument("--method", default="retrain", choices=["retrain", "influence"])
    p.add_argument("--removals", type=int)
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--uas", type=int, default=0, metavar="K", help="also estimate UAS from K replacements")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("experiment", parents=[common], help="run a grid experiment from a JSON config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
