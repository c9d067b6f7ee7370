"""Benchmark and convergence harness: machine-readable tables and curves.

Reproduces the benchmark protocol (per-estimator error tables against the
oracles at a fixed budget) and the convergence studies (RMSE versus budget
under several allocation modes), emitting schema-stable CSV plus summary
JSON.  Outputs are bit-reproducible given (config, seed): worker dispatch
never changes row order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, ConfigurationError, EstimationFailure, ImplicitLikelihood
from .estimators import ESTIMATOR_KINDS, EstimatorSpec
from .models import make_model
from .oracle import oracle_for
from .rng import RngStream
from .training import OptimizerSchedule, estimate_eig

__all__ = [
    "BenchConfig",
    "applicability",
    "run_benchmark",
    "run_convergence",
    "CONVERGENCE_MODES",
]

CSV_FIELDS = [
    "scenario",
    "estimator",
    "design",
    "run",
    "estimate",
    "oracle",
    "sq_err",
    "wall_ms",
]

CONVERGENCE_MODES = (
    "fix-K-grow-N",
    "fix-N-grow-K",
    "N-equals-K",
    "fixed-N-plus-K",
    "vnmc-two-stage",
)

# who can run where: "-" is inapplicable, "*" is superseded by the
# marginal+likelihood pair on models with an explicit likelihood
_APPLICABILITY = {
    "nmc": {"ab_test", "preference", "death_process", "ces"},
    "posterior": {"ab_test", "preference", "mixed_effects", "extrapolation", "death_process", "ces"},
    "marginal": {"ab_test", "preference", "death_process", "ces"},
    "vnmc": {"ab_test", "preference"},
    "ml": {"mixed_effects", "extrapolation"},
    "laplace": {"ab_test", "preference", "death_process"},
    "lfire": {"ab_test", "preference", "mixed_effects"},
    "dv": {"ab_test", "preference", "mixed_effects", "extrapolation"},
    "marginal-cv": {"ab_test"},
}
_SUPERSEDED = {("ml", "ab_test"), ("ml", "preference"), ("ml", "death_process"), ("ml", "ces")}


def applicability(kind, scenario):
    """'ok', '-' (does not apply), or '*' (superseded)."""
    if (kind, scenario) in _SUPERSEDED:
        return "*"
    return "ok" if scenario in _APPLICABILITY.get(kind, set()) else "-"


@dataclass
class BenchConfig:
    scenario: str
    estimators: list
    designs: list | None = None
    runs: int = 5
    seed: int = 0
    budget_seconds: float | None = None
    oracle_kw: dict = field(default_factory=dict)
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        if self.budget_seconds is not None and self.budget_seconds <= 0:
            raise ConfigurationError("budget must be positive")

    @classmethod
    def from_json(cls, path_or_obj):
        if isinstance(path_or_obj, dict):
            cfg = dict(path_or_obj)
        elif hasattr(path_or_obj, "read"):
            cfg = json.load(path_or_obj)
        else:
            with open(path_or_obj) as fh:
                cfg = json.load(fh)
        estimators = [
            e if isinstance(e, EstimatorSpec) else EstimatorSpec(**e)
            for e in cfg.pop("estimators")
        ]
        return cls(estimators=estimators, **cfg)


def _rows_to_csv(rows, fields):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def run_benchmark(config: BenchConfig, out_dir=None):
    """Per (estimator, design, run) estimates against the scenario oracle.

    Returns {"rows": [...], "summary": [...], "csv": str, "summary_csv": str}.
    Inapplicable estimators yield a single '-' row (or '*' when superseded),
    matching the benchmark table convention.
    """
    model = make_model(config.scenario, config.model_overrides)
    designs = config.designs if config.designs is not None else list(model.design_space)
    root = RngStream(config.seed)
    oracles = {}
    for i, d in enumerate(designs):
        res = oracle_for(model, d, rng=root.child("oracle", i), **config.oracle_kw)
        oracles[i] = res.eig
    rows = []
    summary = []
    for spec in config.estimators:
        status = applicability(spec.kind, config.scenario)
        if status != "ok":
            rows.append(
                {
                    "scenario": config.scenario,
                    "estimator": spec.kind,
                    "design": "",
                    "run": "",
                    "estimate": status,
                    "oracle": "",
                    "sq_err": "",
                    "wall_ms": "",
                }
            )
            summary.append(
                {
                    "scenario": config.scenario,
                    "estimator": spec.kind,
                    "bias_sq": status,
                    "variance": status,
                    "mse": status,
                }
            )
            continue
        per_design_bias2 = []
        per_design_var = []
        for i, d in enumerate(designs):
            values = []
            for run in range(config.runs):
                t0 = time.perf_counter()
                try:
                    if config.budget_seconds is not None:
                        from .training import estimate_eig_timed

                        est = estimate_eig_timed(
                            spec.kind,
                            model,
                            d,
                            config.budget_seconds,
                            root.child(spec.kind, i, run),
                        )
                    else:
                        est = estimate_eig(
                            spec, model, d, root.child(spec.kind, i, run)
                        )
                    value = est.value
                except (EstimationFailure, ImplicitLikelihood, CapabilityError) as exc:
                    rows.append(
                        {
                            "scenario": config.scenario,
                            "estimator": spec.kind,
                            "design": _design_repr(d),
                            "run": run,
                            "estimate": f"error:{type(exc).__name__}",
                            "oracle": oracles[i],
                            "sq_err": "",
                            "wall_ms": round(1e3 * (time.perf_counter() - t0), 3),
                        }
                    )
                    continue
                values.append(value)
                rows.append(
                    {
                        "scenario": config.scenario,
                        "estimator": spec.kind,
                        "design": _design_repr(d),
                        "run": run,
                        "estimate": value,
                        "oracle": oracles[i],
                        "sq_err": (value - oracles[i]) ** 2,
                        "wall_ms": round(1e3 * (time.perf_counter() - t0), 3),
                    }
                )
            if values:
                values = np.asarray(values)
                per_design_bias2.append((values.mean() - oracles[i]) ** 2)
                per_design_var.append(values.var(ddof=1) if len(values) > 1 else 0.0)
        bias2 = float(np.mean(per_design_bias2)) if per_design_bias2 else float("nan")
        var = float(np.mean(per_design_var)) if per_design_var else float("nan")
        summary.append(
            {
                "scenario": config.scenario,
                "estimator": spec.kind,
                "bias_sq": bias2,
                "variance": var,
                "mse": bias2 + var,
            }
        )
    out = {
        "rows": rows,
        "summary": summary,
        "csv": _rows_to_csv(rows, CSV_FIELDS),
        "summary_csv": _rows_to_csv(
            summary, ["scenario", "estimator", "bias_sq", "variance", "mse"]
        ),
    }
    if out_dir is not None:
        import pathlib

        out_dir = pathlib.Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "benchmark.csv").write_text(out["csv"])
        (out_dir / "benchmark_summary.csv").write_text(out["summary_csv"])
    return out


def _design_repr(d):
    if np.isscalar(d):
        return d
    return json.dumps(np.asarray(d).tolist())


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------


def _fit_slope(budgets, rmse):
    """Least-squares slope on the log-log tail: the first two budget points
    are dropped when six or more exist (they sit in the optimizer's
    transient, not the rate regime)."""
    budgets = np.asarray(budgets, dtype=float)
    rmse = np.asarray(rmse, dtype=float)
    if len(budgets) >= 6:
        budgets, rmse = budgets[2:], rmse[2:]
    mask = rmse > 0
    if mask.sum() < 3:
        return None
    slope, _ = np.polyfit(np.log10(budgets[mask]), np.log10(rmse[mask]), 1)
    return float(slope)


def run_convergence(
    mode,
    scenario="ab_test",
    design=5,
    estimators=("posterior", "marginal"),
    budgets=None,
    runs=100,
    seed=0,
    fixed_k=1000,
    fixed_n=1000,
    total=5000,
    k_fractions=(0.1, 0.3, 0.5, 0.7, 0.9),
    vnmc_pretrain=(0, 500, 5000),
    schedule_kw=None,
    out_dir=None,
):
    """RMSE curves versus budget for one design, plus fitted log-log slopes.

    Modes: fix-K-grow-N, fix-N-grow-K, N-equals-K, fixed-N-plus-K, and
    vnmc-two-stage (pre-train the proposal, then grow the evaluation budget
    with the square-root inner schedule).
    """
    if mode not in CONVERGENCE_MODES:
        raise ConfigurationError(f"unknown convergence mode {mode!r}")
    model = make_model(scenario)
    truth = oracle_for(model, design).eig
    root = RngStream(seed)
    schedule_kw = dict(schedule_kw or {})
    schedule_kw.setdefault("mode", "sgd-averaged")
    schedule_kw.setdefault("step0", 0.1)
    schedule_kw.setdefault("decay", 0.5)
    schedule_kw.setdefault("batch", 10)

    rows = []
    curves = {}

    def one_point(kind, n, k, run, tag, m0=1, proposal="learned"):
        spec = EstimatorSpec(
            kind=kind,
            n_outer=int(n),
            n_steps=int(k),
            m0=m0,
            proposal=proposal,
            schedule=OptimizerSchedule(steps=int(k), **schedule_kw),
        )
        est = estimate_eig(spec, model, design, root.child(tag, kind, run))
        return est.value

    if mode in ("fix-K-grow-N", "fix-N-grow-K", "N-equals-K"):
        if budgets is None:
            budgets = [100, 316, 1000, 3162, 10000]
        for kind in estimators:
            rmses = []
            for b in budgets:
                n = fixed_n if mode == "fix-N-grow-K" else b
                k = fixed_k if mode == "fix-K-grow-N" else b
                errs = []
                for run in range(runs):
                    v = one_point(kind, n, k, run, f"{mode}-{b}")
                    errs.append((v - truth) ** 2)
                    rows.append(
                        {
                            "mode": mode,
                            "estimator": kind,
                            "budget": b,
                            "n_outer": n,
                            "n_steps": k,
                            "run": run,
                            "estimate": v,
                            "oracle": truth,
                        }
                    )
                rmses.append(math.sqrt(np.mean(errs)))
            curves[kind] = {
                "budgets": list(budgets),
                "rmse": rmses,
                "slope": _fit_slope(budgets, rmses),
            }

    elif mode == "fixed-N-plus-K":
        for kind in estimators:
            rmses, xs = [], []
            for frac in k_fractions:
                k = int(round(total * frac))
                n = max(1, total - k)
                errs = []
                for run in range(runs):
                    v = one_point(kind, n, k, run, f"frac-{frac}")
                    errs.append((v - truth) ** 2)
                    rows.append(
                        {
                            "mode": mode,
                            "estimator": kind,
                            "budget": frac,
                            "n_outer": n,
                            "n_steps": k,
                            "run": run,
                            "estimate": v,
                            "oracle": truth,
                        }
                    )
                xs.append(frac)
                rmses.append(math.sqrt(np.mean(errs)))
            curves[kind] = {"k_fraction": xs, "rmse": rmses, "slope": None}

    elif mode == "vnmc-two-stage":
        if budgets is None:
            budgets = [100, 316, 1000, 3162, 10000]
        for k in vnmc_pretrain:
            rmses, costs = [], []
            for n in budgets:
                m = max(1, int(round(math.sqrt(n))))
                errs = []
                for run in range(runs):
                    v = one_point(
                        "vnmc", n, k, run, f"two-stage-{k}-{n}",
                        proposal=("prior" if k == 0 else "learned"),
                    )
                    errs.append((v - truth) ** 2)
                    rows.append(
                        {
                            "mode": mode,
                            "estimator": f"vnmc-k{k}",
                            "budget": n * m + k,
                            "n_outer": n,
                            "n_steps": k,
                            "run": run,
                            "estimate": v,
                            "oracle": truth,
                        }
                    )
                rmses.append(math.sqrt(np.mean(errs)))
                costs.append(n * m + k)
            curves[f"vnmc-k{k}"] = {
                "budgets": costs,
                "rmse": rmses,
                "slope": _fit_slope(costs, rmses),
            }

    fields = ["mode", "estimator", "budget", "n_outer", "n_steps", "run", "estimate", "oracle"]
    out = {
        "rows": rows,
        "curves": curves,
        "csv": _rows_to_csv(rows, fields),
        "summary": {
            "mode": mode,
            "scenario": scenario,
            "design": design,
            "runs": runs,
            "slopes": {k: v.get("slope") for k, v in curves.items()},
        },
    }
    if len(rows) and len({r["budget"] for r in rows}) < 3:
        out["summary"]["warning"] = "fewer than 3 budget points; slope omitted"
    if out_dir is not None:
        import pathlib

        out_dir = pathlib.Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"convergence_{mode}.csv").write_text(out["csv"])
        (out_dir / f"convergence_{mode}_summary.json").write_text(
            json.dumps(out["summary"], indent=2)
        )
    return out
