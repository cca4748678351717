"""Command-line front end.

Subcommands:
  optimize   calibrate a noise distribution for (epsilon, sensitivity, metric)
  sample     draw noise from a mechanism spec
  verify     empirical density-grid epsilon check for a combination
  bench      run an experiment grid from a config file, emit CSV
  synth      generate a synthetic dataset

Exit codes: 0 success, 1 config/usage error, 2 infeasible optimization,
3 partial grid failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench as bench_mod
from .distributions import parse_combo
from .mechanisms import (
    CompoundLaplace,
    Gaussian,
    Laplace,
    RandomizedResponse,
    Staircase,
    sample_noise,
)
from .optimize import (
    EXTENDED_FAMILIES,
    InfeasibleSpecError,
    SearchSpaceSpec,
    optimize,
)
from .privacy import GridSpec, PrivacySpec, epsilon_of_combo, verify_epsilon_empirically
from .utility import Histogram, UtilityGoal


def _parse_mechanism(text: str):
    tokens = text.split()
    kind = tokens[0].lower()
    kv = dict(tok.split("=", 1) for tok in tokens[1:])
    if kind == "laplace":
        return Laplace(float(kv["b"]))
    if kind == "gaussian":
        return Gaussian(float(kv["sigma"]))
    if kind == "staircase":
        return Staircase(
            float(kv["epsilon"]),
            float(kv.get("sensitivity", 1.0)),
            float(kv["gamma_s"]) if "gamma_s" in kv else None,
        )
    if kind == "randomized_response":
        return RandomizedResponse(float(kv["p"]))
    raise ValueError(f"unknown mechanism {kind!r}")


def _build_goal(args) -> UtilityGoal:
    prior = None
    if args.metric == "mallows":
        if args.prior:
            prior = bench_mod.read_dataset(args.prior)
    elif args.metric in ("kl", "renyi"):
        if args.prior:
            prior = Histogram.from_file(args.prior)
    return UtilityGoal(
        args.metric,
        gamma=args.gamma,
        p=args.p,
        alpha=args.alpha,
        prior=prior,
    )


def _cmd_optimize(args) -> int:
    families = tuple(args.families.split(",")) if args.families else (
        EXTENDED_FAMILIES if args.extended else SearchSpaceSpec().families
    )
    spec = SearchSpaceSpec(
        families=families,
        restarts=args.restarts,
        max_evals=args.max_evals,
        constraint_tol=args.constraint_tol,
    )
    privacy = PrivacySpec(args.epsilon, args.sensitivity)
    goal = _build_goal(args)
    try:
        result = optimize(spec, privacy, goal, seed=args.seed)
    except InfeasibleSpecError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    text = result.to_text()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def _cmd_sample(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.combo:
        mech = CompoundLaplace(parse_combo(args.combo))
    else:
        mech = _parse_mechanism(args.mech)
    draws = np.atleast_1d(sample_noise(mech, rng, args.count))
    lines = "\n".join(format(x, ".12g") for x in draws)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(lines + "\n")
    else:
        print(lines)
    return 0


def _cmd_verify(args) -> int:
    combo = parse_combo(args.combo)
    grid = GridSpec(step=args.step)
    empirical = verify_epsilon_empirically(combo, args.sensitivity, grid)
    closed = epsilon_of_combo(combo, args.sensitivity)
    print(f"epsilon_closed_form = {closed:.9f}")
    print(f"epsilon_density_grid = {empirical:.9f}")
    print(f"gap = {closed - empirical:.3e}")
    return 0


def _cmd_bench(args) -> int:
    grid, search, query = bench_mod.load_config(args.config)
    if args.dataset:
        data = bench_mod.read_dataset(args.dataset)
        query = query or bench_mod.QuerySpec()
        # the dataset fixes the true value; noise metrics are center-free,
        # so it is reported in the summary only
        true_value = query.true_value(data)
        print(f"# query true value: {true_value:.6g}", file=sys.stderr)
    rows = bench_mod.run_grid(grid, search, timing=args.timing)
    csv_text = bench_mod.rows_to_csv(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(csv_text)
    else:
        print(csv_text, end="")
    failures = sum(1 for r in rows if r.error)
    draws = sum(r.draws for r in rows)
    print(
        f"# {len(rows)} rows, {failures} failed, {draws} noise draws consumed",
        file=sys.stderr,
    )
    return 3 if failures else 0


def _cmd_synth(args) -> int:
    data = bench_mod.generate_synthetic(
        args.kind, args.n, args.seed, rate=args.rate, value=args.value, shape=args.shape
    )
    lines = "\n".join(format(x, ".12g") for x in np.atleast_1d(data))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(lines + "\n")
    else:
        print(lines)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpcalib",
        description="noise calibration and benchmarking for differential privacy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="calibrate a noise distribution")
    p_opt.add_argument("--epsilon", type=float, required=True)
    p_opt.add_argument("--sensitivity", type=float, default=1.0)
    p_opt.add_argument("--metric", default="usefulness",
                       choices=("usefulness", "l1", "l2", "mallows", "kl", "renyi"))
    p_opt.add_argument("--gamma", type=float, default=None)
    p_opt.add_argument("--p", type=float, default=None)
    p_opt.add_argument("--alpha", type=float, default=None)
    p_opt.add_argument("--prior", default=None, help="prior file for mallows/kl/renyi")
    p_opt.add_argument("--families", default=None,
                       help="comma-separated family slots")
    p_opt.add_argument("--extended", action="store_true",
                       help="add noncentral_chisq and rayleigh slots")
    p_opt.add_argument("--restarts", type=int, default=12)
    p_opt.add_argument("--max-evals", type=int, default=300)
    p_opt.add_argument("--constraint-tol", type=float, default=1e-3)
    p_opt.add_argument("--seed", type=int, default=0)
    p_opt.add_argument("--out", default=None)
    p_opt.set_defaults(func=_cmd_optimize)

    p_sam = sub.add_parser("sample", help="draw noise from a mechanism")
    p_sam.add_argument("--mech", default=None,
                       help='e.g. "laplace b=1" or "staircase epsilon=2 sensitivity=1"')
    p_sam.add_argument("--combo", default=None,
                       help='compound spec, e.g. "1 gamma shape=2 scale=1"')
    p_sam.add_argument("--count", type=int, default=1)
    p_sam.add_argument("--seed", type=int, default=0)
    p_sam.add_argument("--out", default=None)
    p_sam.set_defaults(func=_cmd_sample)

    p_ver = sub.add_parser("verify", help="empirical epsilon check")
    p_ver.add_argument("--combo", required=True)
    p_ver.add_argument("--sensitivity", type=float, default=1.0)
    p_ver.add_argument("--step", type=float, default=1e-3)
    p_ver.set_defaults(func=_cmd_verify)

    p_ben = sub.add_parser("bench", help="run an experiment grid")
    p_ben.add_argument("--config", required=True)
    p_ben.add_argument("--out", default=None)
    p_ben.add_argument("--dataset", default=None, help="CSV with one numeric column")
    p_ben.add_argument("--timing", action="store_true",
                       help="record real wall_ms (breaks byte-identical output)")
    p_ben.set_defaults(func=_cmd_bench)

    p_syn = sub.add_parser("synth", help="generate synthetic data")
    p_syn.add_argument("--kind", required=True,
                       choices=("constant", "poisson", "histogram50"))
    p_syn.add_argument("--n", type=int, required=True)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--rate", type=float, default=5.0)
    p_syn.add_argument("--value", type=float, default=1.0)
    p_syn.add_argument("--shape", default="uniform")
    p_syn.add_argument("--out", default=None)
    p_syn.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (bench_mod.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
