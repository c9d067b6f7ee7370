"""Empirical convergence rates of the bound estimators versus plain NMC.

Growing the sample budget and the training budget together, the trained
bounds shrink their RMSE like 1/sqrt(budget); nested Monte Carlo with the
square-root inner schedule only manages the cube-root rate.  A scaled-down
version of the full study (the benchmark harness runs the big one).
"""

import numpy as np

from veig.bench import run_convergence


def main():
    print("bound estimators, N = K sweep (expect slope near -1/2)")
    out = run_convergence(
        "N-equals-K",
        budgets=[100, 316, 1000, 3162, 10_000],
        runs=20,
        estimators=("posterior", "marginal"),
        seed=0,
    )
    for kind, curve in out["curves"].items():
        rmse = ", ".join(f"{r:.3f}" for r in curve["rmse"])
        print(f"  {kind:>10s}: rmse [{rmse}]  slope {curve['slope']:+.3f}")

    print("\nnested Monte Carlo, square-root inner schedule (expect about -1/3)")
    import math

    from veig.estimators import nmc_estimate
    from veig.models import make_model
    from veig.oracle import analytic_eig_linear_gaussian
    from veig.rng import RngStream

    model = make_model("ab_test")
    truth = analytic_eig_linear_gaussian(model, 5).eig
    costs, rmses = [], []
    for n in (100, 316, 1000, 3162, 10_000):
        m = max(1, int(round(math.sqrt(n))))
        errs = [
            (nmc_estimate(model, 5, n, m, RngStream(1, t).child(n)).value - truth) ** 2
            for t in range(20)
        ]
        costs.append(n * m)
        rmses.append(math.sqrt(np.mean(errs)))
    slope = np.polyfit(np.log10(costs), np.log10(rmses), 1)[0]
    rmse = ", ".join(f"{r:.2f}" for r in rmses)
    print(f"  {'nmc':>10s}: rmse [{rmse}]  slope {slope:+.3f}")


if __name__ == "__main__":
    main()
