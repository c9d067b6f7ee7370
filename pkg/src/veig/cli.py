"""Command-line harness: benchmarks, convergence studies, one-off estimates,
oracle tables, and sequential experiments.

Exit codes: 0 success, 2 configuration error, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

import numpy as np

from .bench import CONVERGENCE_MODES, BenchConfig, run_benchmark, run_convergence
from .errors import ConfigurationError, ContractError, EstimationFailure, VeigError
from .estimators import ESTIMATOR_KINDS, EstimatorSpec
from .models import MODEL_REGISTRY, make_model
from .oracle import oracle_table
from .rng import RngStream
from .training import estimate_eig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3


def _parse_design(model, text):
    if text is None:
        return model.design_space[0] if hasattr(model.design_space, "designs") else None
    value = json.loads(text)
    if isinstance(value, list):
        space = model.design_space
        if model.name in ("death_process", "mixed_effects"):
            return tuple(value)
        return np.asarray(value, dtype=float)
    return value


def _cmd_bench(args):
    config = BenchConfig.from_json(args.config)
    out = run_benchmark(config, out_dir=args.out)
    sys.stdout.write(out["summary_csv"])
    return EXIT_OK


def _cmd_converge(args):
    kw = {}
    if args.budgets:
        kw["budgets"] = json.loads(args.budgets)
    out = run_convergence(
        args.mode.replace("n-equals-k", "N-equals-K")
        .replace("fix-k-grow-n", "fix-K-grow-N")
        .replace("fix-n-grow-k", "fix-N-grow-K")
        .replace("fixed-n-plus-k", "fixed-N-plus-K"),
        scenario=args.scenario,
        design=args.design,
        runs=args.runs,
        seed=args.seed,
        out_dir=args.out,
        **kw,
    )
    sys.stdout.write(json.dumps(out["summary"], indent=2) + "\n")
    return EXIT_OK


def _cmd_estimate(args):
    model = make_model(args.scenario)
    d = _parse_design(model, args.design)
    spec = EstimatorSpec(
        kind=args.estimator,
        n_outer=args.N,
        n_inner=args.M,
        n_proposal=args.L,
        n_steps=args.K,
    )
    est = estimate_eig(spec, model, d, RngStream(args.seed))
    sys.stdout.write(
        json.dumps(
            {
                "scenario": args.scenario,
                "estimator": args.estimator,
                "design": d if np.isscalar(d) else np.asarray(d).tolist(),
                "value": est.value,
                "std_err": est.std_err,
                "n_used": est.n_used,
                "m_used": est.m_used,
                "k_used": est.k_used,
                "bound_direction": est.bound_direction,
                "wall_clock_s": est.wall_clock,
            },
            indent=2,
        )
        + "\n"
    )
    return EXIT_OK


def _cmd_oracle(args):
    model = make_model(args.scenario)
    rows = oracle_table(model, rng=RngStream(args.seed))
    writer_rows = ["design,eig,method,error_bound"]
    for r in rows:
        d = r["design"]
        d_repr = json.dumps(np.asarray(d).tolist()) if not np.isscalar(d) else str(d)
        writer_rows.append(f'"{d_repr}",{r["eig"]},{r["method"]},{r["error_bound"]}')
    text = "\n".join(writer_rows) + "\n"
    if args.out:
        path = pathlib.Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"oracle_{args.scenario}.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_sequential(args):
    from .design_loop import SimulatedResponder, run_sequential

    model = make_model(args.scenario)
    # "oed-<estimator>" picks the EIG estimator driving the design choice
    spec_kind = "marginal"
    if args.strategy.startswith("oed-"):
        spec_kind = args.strategy.split("-", 1)[1]
        strategy = "oed"
    else:
        strategy = args.strategy
    spec = EstimatorSpec(kind=spec_kind, n_outer=args.N, n_steps=args.K)
    records = []
    for run in range(args.runs):
        rng = RngStream(args.seed, run)
        if args.scenario == "ces":
            theta_true = np.array([0.9, 0.2, 0.3, 0.5, float(np.exp(1.0))])
        elif args.scenario == "mixed_effects":
            theta_true = np.array([-30.0, 30.0, 0.0, -12.0, -6.0, 18.0])
        else:
            theta_true = model.sample_prior(1, rng.child("truth"))[0]
        responder = SimulatedResponder(model, theta_true, rng.child("agent"))
        log = run_sequential(
            model,
            strategy,
            responder,
            args.steps,
            rng.child("loop"),
            spec=spec,
            theta_true=theta_true,
            vi_steps=args.vi_steps,
            bo_kw=dict(iterations=args.bo_iters, init_points=args.bo_init),
        )
        for rec in log.records:
            rec["run"] = run
            records.append(rec)
    text = "\n".join(json.dumps(r) for r in records) + "\n"
    if args.out:
        path = pathlib.Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"sequential_{args.scenario}_{args.strategy}.jsonl").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="veig", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="benchmark estimators against oracles")
    b.add_argument("--config", required=True)
    b.add_argument("--out", default=None)
    b.set_defaults(func=_cmd_bench)

    c = sub.add_parser("converge", help="convergence-rate studies")
    c.add_argument("--mode", required=True)
    c.add_argument("--scenario", default="ab_test")
    c.add_argument("--design", type=int, default=5)
    c.add_argument("--runs", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--budgets", default=None, help="JSON list")
    c.add_argument("--out", default=None)
    c.set_defaults(func=_cmd_converge)

    e = sub.add_parser("estimate", help="one estimate on one design")
    e.add_argument("--scenario", required=True, choices=sorted(MODEL_REGISTRY))
    e.add_argument("--estimator", required=True, choices=ESTIMATOR_KINDS)
    e.add_argument("--design", default=None, help="JSON scalar or list")
    e.add_argument("--N", type=int, default=1000)
    e.add_argument("--M", type=int, default=None)
    e.add_argument("--L", type=int, default=1)
    e.add_argument("--K", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_cmd_estimate)

    o = sub.add_parser("oracle", help="reference EIG over the design grid")
    o.add_argument("--scenario", required=True, choices=sorted(MODEL_REGISTRY))
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", default=None)
    o.set_defaults(func=_cmd_oracle)

    s = sub.add_parser("sequential", help="adaptive experiment with a simulated agent")
    s.add_argument("--scenario", required=True, choices=sorted(MODEL_REGISTRY))
    s.add_argument("--strategy", default="oed-marginal")
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--runs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--N", type=int, default=300)
    s.add_argument("--K", type=int, default=300)
    s.add_argument("--vi-steps", type=int, default=800)
    s.add_argument("--bo-iters", type=int, default=8)
    s.add_argument("--bo-init", type=int, default=12)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_sequential)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigurationError, ContractError, FileNotFoundError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    except (EstimationFailure, VeigError) as exc:
        sys.stderr.write(f"estimation failure: {exc}\n")
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
