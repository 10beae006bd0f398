"""Command-line entry point.

Failures print a single ``error: <kind>: <message>`` line on stderr and exit
with status 1; argument errors print usage and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from genbench.checkpoint import ModelCheckpoint, load_checkpoint, round_to_storage
from genbench.datasets import (
    Dataset,
    GMMSpec,
    gen_gmm,
    ingest_dihedrals,
    random_mode_means,
    read_dataset,
    standardize,
    write_dataset,
)
from genbench.core.training import Budget
from genbench.evaluation import (
    EvaluationReport,
    binned_kld,
    count_parameters,
    default_boundary,
    histogram2d,
    histogram_ranges,
    measure_sampling_time,
    mode_delta_f,
    pca_fit,
    pca_project,
)
from genbench.harness.config import load_config, parse_config_text
from genbench.harness.experiments import run_experiment, run_hp_sweep, write_reports
from genbench.models import DEFAULT_HYPERPARAMETERS, build_model, train_model


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _assignment(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    parsed = parse_config_text(f"{key} = {value}")
    return next(iter(parsed.items()))


def _default_checkpoint_path(data: str, model: str, seed: int) -> Path:
    p = Path(data)
    return p.with_name(f"{p.stem}-{model}-s{seed}.ckpt")


# -- subcommands -----------------------------------------------------------

def cmd_gen_gmm(args) -> int:
    weights = np.asarray(args.weights if args.weights else [1.0 / args.modes] * args.modes)
    if weights.size != args.modes:
        raise ValueError(f"{weights.size} weights given for {args.modes} modes")
    weights = weights / weights.sum()
    means = random_mode_means(args.dim, args.modes, args.half_width, seed=args.seed)
    ds = gen_gmm(GMMSpec(means, weights, args.scale, args.seed), args.n)
    write_dataset(ds, args.out)
    return 0


def cmd_ingest(args) -> int:
    write_dataset(ingest_dihedrals(args.input), args.out)
    return 0


def cmd_train(args) -> int:
    data = read_dataset(args.data)
    overrides = dict(args.hp or [])
    model = build_model(args.model, data.d, seed=args.seed, **overrides)
    stats = None
    x = data
    if not args.no_standardize:
        x, stats = standardize(data)
    budget = Budget(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seconds=args.seconds)
    trained = train_model(model, x.samples, budget, args.seed)
    trained = trained.with_params(round_to_storage(trained.params), trained.loss_trace)
    # wall-clock is logged, not stored, so identical runs give identical files
    training = {"steps": len(trained.loss_trace), "budget": budget.to_dict(), "seed": args.seed, "data": Path(args.data).name, "columns": list(data.columns)}
    out = args.out or _default_checkpoint_path(args.data, args.model, args.seed)
    ModelCheckpoint(trained, stats, list(data.angular), training).save(out)
    print(str(out))
    return 0


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    x = ckpt.sample(args.n, args.seed)
    columns = ckpt.training.get("columns", [])
    write_dataset(Dataset(x, columns, list(ckpt.angular), {"generator": f"sample:{ckpt.family}", "seed": args.seed}), args.out)
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    test = read_dataset(args.test).samples
    generated = ckpt.sample(args.n, args.seed)
    if generated.shape[1] != test.shape[1]:
        raise ValueError(f"checkpoint generates d={generated.shape[1]}, test set has d={test.shape[1]}")
    reference = read_dataset(args.train).samples if args.train else test
    basis = pca_fit(reference)
    test_p, gen_p = pca_project(basis, test), pca_project(basis, generated)
    bins = tuple(args.bins)
    ranges = histogram_ranges(test_p)
    h_test, h_gen = histogram2d(test_p, bins, ranges), histogram2d(gen_p, bins, ranges)
    delta_f = None
    if args.delta_f:
        delta_f = mode_delta_f(h_gen, default_boundary(h_test), args.cutoff, args.beta)
    sps = measure_sampling_time(ckpt.sample, args.timing_n, args.timing_repeats)
    report = EvaluationReport(binned_kld(h_test, h_gen, args.epsilon), sps, count_parameters(ckpt.model), delta_f, None, args.epsilon, bins)
    out = report.to_dict()
    out.update(family=ckpt.family, n_eval=args.n, seed=args.seed, pca_fitted_on="train" if args.train else "test")
    print(json.dumps(out, sort_keys=True))
    return 0


def _experiment_config(args):
    overrides = dict(args.set or [])
    if args.out:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def cmd_benchmark(args) -> int:
    print(str(run_experiment(_experiment_config(args))))
    return 0


def cmd_hp_sweep(args) -> int:
    print(str(run_hp_sweep(_experiment_config(args))))
    return 0


def cmd_report(args) -> int:
    for path in write_reports(args.out):
        print(str(path))
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genbench", description="Benchmark NS, CFM and DDPM generative models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-gmm", help="sample a Gaussian mixture dataset")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--modes", type=int, required=True)
    p.add_argument("--weights", type=_floats, default=None, help="comma-separated, normalized to sum 1")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--half-width", type=float, default=8.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_gmm)

    p = sub.add_parser("ingest-dihedrals", help="validate and wrap an 18-column phi/psi CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model and write a checkpoint directory")
    p.add_argument("--model", choices=sorted(DEFAULT_HYPERPARAMETERS), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seconds", type=float, default=None)
    p.add_argument("--hp", type=_assignment, action="append", help="hyperparameter override key=value")
    p.add_argument("--no-standardize", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="print an evaluation report as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train", default=None, help="training CSV for the PCA basis (default: the test set)")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, nargs=2, default=[50, 50])
    p.add_argument("--epsilon", type=float, default=1e-10)
    p.add_argument("--delta-f", action="store_true", help="also estimate the two-mode free-energy difference")
    p.add_argument("--cutoff", type=float, default=0.0374)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--timing-n", type=int, default=1000)
    p.add_argument("--timing-repeats", type=int, default=5)
    p.set_defaults(func=cmd_evaluate)

    for name, func, text in (("benchmark", cmd_benchmark, "run an experiment config"), ("hp-sweep", cmd_hp_sweep, "run a hyperparameter sweep config")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
        p.add_argument("--set", type=_assignment, action="append", help="config override key=value")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="rebuild per-figure CSVs from result journals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def cli_dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())
