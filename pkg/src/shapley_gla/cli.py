"""Command-line entry point ``shapley-gla``.

Exit codes: 0 success, 1 validation or configuration error, 2 acceptance
failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .acceptance import CRITERIA, report_json, run_acceptance
from .config import (
    ExactConfig,
    ExperimentConfig,
    LinearizeConfig,
    load_experiment_config,
    parse_config,
    read_json,
)
from .errors import ConfigError, NumericalError, ValidationError
from .exact import (
    LinearModel,
    block_decompose,
    shapley_linear,
    shapley_linear_blockwise,
)
from .experiments import rows_to_csv, run_experiment, write_results
from .gaussian import GaussianSpec, make_stream
from .linearize import linearize_pipeline
from .models import get_model

EXIT_OK, EXIT_INVALID, EXIT_ACCEPTANCE, EXIT_NUMERICAL = 0, 1, 2, 3
EXPERIMENT_COMMANDS = ("fig1", "remark1", "empirical42", "custom")


def _threads(value: str):
    if value == "auto":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("threads must be an integer or 'auto'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapley-gla",
        description="Shapley effects for Gaussian-linear models and their approximations.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="JSON config document")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=_threads, help="worker threads (integer or 'auto')")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--budget-scale", type=float, help="scale the permutation MC budgets")

    common(sub.add_parser("exact", help="exact Shapley effects of a linear model"), config_required=True)
    common(sub.add_parser("linearize", help="linearize a built-in model and report its effects"),
           config_required=True)
    for name in EXPERIMENT_COMMANDS:
        common(sub.add_parser(name, help=f"run the {name} experiment"), config_required=name == "custom")
    acc = sub.add_parser("acceptance", help="run the acceptance suite")
    common(acc)
    acc.add_argument("--only", help="comma-separated criterion ids, e.g. A1,A7")
    return parser


def _emit(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _cmd_exact(args) -> int:
    cfg = parse_config(ExactConfig, read_json(args.config), "exact config")
    model = LinearModel(0.0, cfg.coeffs)
    if cfg.blockwise:
        eta = shapley_linear_blockwise(model, cfg.cov, cfg.block_tol)
        blocks = block_decompose(np.asarray(cfg.cov, dtype=float), cfg.block_tol)
    else:
        eta = shapley_linear(model, cfg.cov)
        blocks = None
    doc = {"eta": eta.values.tolist()}
    if blocks is not None:
        doc["blocks"] = [[int(i) + 1 for i in b] for b in blocks]
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def _cmd_linearize(args) -> int:
    cfg = parse_config(LinearizeConfig, read_json(args.config), "linearize config")
    spec = GaussianSpec(cfg.mean, cfg.cov)
    model = get_model(cfg.model, p=spec.dim, coeffs=cfg.coeffs, intercept=cfg.intercept)
    seed = cfg.seed if args.seed is None else args.seed
    lin = linearize_pipeline(
        model, spec, cfg.method, steps=cfg.steps, n_samples=cfg.regression_n, rng=make_stream(seed),
    )
    doc = {
        "method": cfg.method,
        "intercept": lin.intercept,
        "coeffs": lin.coeffs.tolist(),
        "eval_count": lin.info["eval_count"],
        "eta": shapley_linear(lin, spec.cov).values.tolist(),
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def _cmd_experiment(args) -> int:
    overrides = dict(seed=args.seed, threads=args.threads, budget_scale=args.budget_scale)
    if args.config:
        cfg = load_experiment_config(args.config, **overrides)
        if cfg.experiment != args.command:
            raise ConfigError(f"config is for {cfg.experiment!r}, not {args.command!r}")
    else:
        cfg = ExperimentConfig.from_dict(
            {"experiment": args.command, **{k: v for k, v in overrides.items() if v is not None}}
        )
    rows = run_experiment(cfg)
    out = args.out or cfg.output
    if out:
        write_results(rows, cfg, out)
    else:
        sys.stdout.write(rows_to_csv(rows))
    return EXIT_OK


def _cmd_acceptance(args) -> int:
    only = [c.strip() for c in args.only.split(",")] if args.only else None
    options = read_json(args.config) if args.config else {}
    unknown = set(only or []) | set(options)
    unknown -= set(CRITERIA)
    if unknown:
        raise ConfigError(f"unknown criterion id(s): {', '.join(sorted(unknown))}")
    results = run_acceptance(only, echo=lambda line: print(line, file=sys.stderr), options=options)
    _emit(report_json(results) + "\n", args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


COMMANDS = {"exact": _cmd_exact, "linearize": _cmd_linearize, "acceptance": _cmd_acceptance}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS.get(args.command, _cmd_experiment)
    try:
        return handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
