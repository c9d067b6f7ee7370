import math

import numpy as np
import pytest

from veig import estimators as E
from veig.errors import CapabilityError, ConfigurationError, ContractError
from veig.guides import init_guide
from veig.models import make_model
from veig.oracle import analytic_eig_linear_gaussian
from veig.rng import RngStream
from veig.training import (
    OptimizerSchedule,
    estimate_eig,
    estimate_eig_timed,
    objective_gradient,
    train_guide,
)

from conftest import assert_close, scale


@pytest.fixture(scope="module")
def ab():
    return make_model("ab_test")


def _fd_objective(kind, model, guides, d, batch, seed, n_proposal=1, h=1e-5):
    """Central finite differences of the frozen-noise batch objective."""
    rng = RngStream(seed)

    def value_at():
        v, _ = objective_gradient(
            kind, model, guides, d, batch, rng.child("o"), n_proposal=n_proposal
        )
        return v

    _, grads = objective_gradient(
        kind, model, guides, d, batch, rng.child("o"), n_proposal=n_proposal
    )
    gd = guides if isinstance(guides, dict) else {list(grads)[0]: guides}
    worst = 0.0
    for key, guide in gd.items():
        phi0 = guide.phi.copy()
        for j in range(guide.n_params):
            guide.phi = phi0.copy()
            guide.phi[j] += h
            up = value_at()
            guide.phi = phi0.copy()
            guide.phi[j] -= h
            dn = value_at()
            guide.phi = phi0.copy()
            num = (up - dn) / (2 * h)
            worst = max(worst, abs(grads[key][j] - num) / max(1.0, abs(num)))
    return worst


class TestObjectiveGradient:
    def test_posterior_at_prior_value_zero_gradient_nonzero(self, ab, rng):
        guide = init_guide("posterior", ab, 5, rng)
        v, g = objective_gradient("posterior", ab, guide, 5, 32, rng.child("o"))
        assert v == pytest.approx(0.0, abs=1e-12)
        assert np.linalg.norm(g["posterior"]) > 0

    @pytest.mark.parametrize(
        "kind,model_name,role",
        [
            ("posterior", "ab_test", "posterior"),
            ("marginal", "ab_test", "marginal"),
            ("dv", "ab_test", "dv"),
            ("posterior", "preference", "posterior"),
            ("marginal", "ces", "marginal"),
            ("posterior", "death_process", "posterior"),
        ],
    )
    def test_finite_difference_all_kinds(self, kind, model_name, role, rng):
        model = make_model(model_name)
        d = model.design_space[3] if hasattr(model.design_space, "designs") else np.array(
            [30.0, 20.0, 10.0, 40.0, 60.0, 5.0]
        )
        guide = init_guide(role, model, d, rng.child(model_name, role))
        guide.set_phi(
            guide.phi
            + 0.2 * rng.child(model_name, "phi").generator().standard_normal(guide.n_params)
        )
        worst = _fd_objective(kind, model, guide, d, 8, 99)
        assert worst <= 1e-5

    def test_finite_difference_ml(self, rng):
        model = make_model("mixed_effects")
        d = (0, 5)
        guides = {
            "marginal": init_guide("marginal", model, d, rng.child("m")),
            "likelihood": init_guide("likelihood", model, d, rng.child("l")),
        }
        assert _fd_objective("ml", model, guides, d, 8, 7) <= 1e-5

    @pytest.mark.parametrize("n_prop", [1, 3])
    def test_finite_difference_vnmc(self, ab, rng, n_prop):
        guide = init_guide("proposal", ab, 5, rng)
        guide.set_phi(
            guide.phi + 0.2 * rng.child("vp").generator().standard_normal(guide.n_params)
        )
        assert _fd_objective("vnmc", ab, guide, 5, 6, 13, n_proposal=n_prop) <= 1e-5

    def test_vnmc_with_exact_posterior_matches_oracle(self, ab, rng):
        # objective value at the conjugate proposal estimates -EIG sample-wise
        truth = analytic_eig_linear_gaussian(ab, 5).eig
        guide = init_guide("proposal", ab, 5, rng).set_from_conjugacy(ab, 5)
        vals = []
        for i in range(40):
            v, _ = objective_gradient("vnmc", ab, guide, 5, 50, rng.child("r", i))
            vals.append(-v)
        se = np.std(vals, ddof=1) / math.sqrt(len(vals))
        assert abs(np.mean(vals) - truth) < 3 * se

    def test_nonreparameterizable_proposal_rejected(self, ab, rng):
        from veig.guides import PriorProposalGuide

        with pytest.raises(CapabilityError):
            objective_gradient("vnmc", ab, PriorProposalGuide(ab), 5, 4, rng)

    def test_unknown_kind(self, ab, rng):
        with pytest.raises(ConfigurationError):
            objective_gradient("bogus", ab, init_guide("posterior", ab, 5, rng), 5, 4, rng)


class TestSchedule:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            OptimizerSchedule(mode="nope")
        with pytest.raises(ConfigurationError):
            OptimizerSchedule(decay=0.2)  # outside [0.5, 1]
        with pytest.raises(ConfigurationError):
            OptimizerSchedule(step0=-1.0)

    def test_averaging_start_default(self):
        assert OptimizerSchedule(steps=100).start_averaging_at() == 50


class TestTrainGuide:
    def test_zero_steps_identity(self, ab, rng):
        guide = init_guide("posterior", ab, 5, rng)
        phi0 = guide.phi.copy()
        _, trace = train_guide(
            "posterior", ab, guide, 5, OptimizerSchedule(steps=0), rng
        )
        assert np.array_equal(guide.phi, phi0)
        assert len(trace) == 0

    def test_marginal_training_reaches_oracle(self, ab, rng):
        truth = analytic_eig_linear_gaussian(ab, 5).eig
        guide = init_guide("marginal", ab, 5, rng.child("init"))
        schedule = OptimizerSchedule(
            mode="adaptive", step0=0.01, batch=100, steps=scale(3000, floor=1000)
        )
        train_guide("marginal", ab, guide, 5, schedule, rng.child("train"))
        est = E.marginal_estimate(ab, guide, 5, 20_000, rng.child("eval"))
        assert_close(est.value, truth, atol=max(3 * est.std_err, 0.02))

    def test_posterior_gap_shrinks_with_steps(self, ab, rng):
        # distance of the trained bound from its optimum decreases in K
        truth = analytic_eig_linear_gaussian(ab, 5).eig
        gaps = []
        for steps in (100, 3000):
            vals = []
            for seed in range(5):
                guide = init_guide("posterior", ab, 5, rng.child("i", steps, seed))
                schedule = OptimizerSchedule(
                    mode="adaptive", step0=0.01, batch=50, steps=steps
                )
                train_guide("posterior", ab, guide, 5, schedule, rng.child("t", steps, seed))
                est = E.posterior_estimate(ab, guide, 5, 4000, rng.child("e", steps, seed))
                vals.append(est.value)
            gaps.append(truth - np.mean(vals))
        assert gaps[1] < gaps[0]

    def test_sgd_averaged_mode_runs(self, ab, rng):
        guide = init_guide("posterior", ab, 5, rng)
        schedule = OptimizerSchedule(
            mode="sgd-averaged", step0=0.1, decay=0.5, batch=10, steps=400
        )
        _, trace = train_guide("posterior", ab, guide, 5, schedule, rng.child("t"))
        assert len(trace) == 400
        est = E.posterior_estimate(ab, guide, 5, 2000, rng.child("e"))
        assert est.value > 1.0  # moved well off the zero start

    def test_ml_pair_trains(self, rng):
        model = make_model("mixed_effects")
        d = (0, 5)
        guides = {
            "marginal": init_guide("marginal", model, d, rng.child("m")),
            "likelihood": init_guide("likelihood", model, d, rng.child("l")),
        }
        schedule = OptimizerSchedule(mode="adaptive", step0=0.01, batch=50, steps=300)
        _, trace = train_guide("ml", model, guides, d, schedule, rng.child("t"))
        assert len(trace) == 300
        assert trace.objective[-1] > trace.objective[0]


class TestEstimateEig:
    def test_nmc_spec_equals_direct_call(self, ab):
        spec = E.EstimatorSpec(kind="nmc", n_outer=200, n_inner=14, n_steps=0)
        a = estimate_eig(spec, ab, 5, RngStream(3))
        b = E.nmc_estimate(ab, 5, 200, 14, RngStream(3).child("eval"))
        assert a.value == b.value

    def test_vnmc_prior_spec_equals_nmc(self, ab):
        spec = E.EstimatorSpec(
            kind="vnmc", n_outer=150, n_inner=10, n_steps=0, proposal="prior"
        )
        a = estimate_eig(spec, ab, 5, RngStream(4))
        b = estimate_eig(E.EstimatorSpec(kind="nmc", n_outer=150, n_inner=10), ab, 5, RngStream(4))
        assert a.value == b.value

    def test_determinism(self, ab):
        spec = E.EstimatorSpec(kind="posterior", n_outer=500, n_steps=150)
        a = estimate_eig(spec, ab, 5, RngStream(11))
        b = estimate_eig(spec, ab, 5, RngStream(11))
        assert a.value == b.value and a.std_err == b.std_err

    def test_trace_attached(self, ab):
        spec = E.EstimatorSpec(kind="marginal", n_outer=100, n_steps=50)
        est = estimate_eig(spec, ab, 5, RngStream(12))
        assert est.k_used == 50 and len(est.trace) == 50

    def test_term_one_scaling(self, ab):
        # frozen guide: the MC stage's std err halves when N quadruples
        spec_small = E.EstimatorSpec(kind="posterior", n_outer=400, n_steps=100)
        spec_big = E.EstimatorSpec(kind="posterior", n_outer=1600, n_steps=100)
        ratios = []
        for seed in range(scale(50, floor=16)):
            a = estimate_eig(spec_small, ab, 5, RngStream(100 + seed))
            b = estimate_eig(spec_big, ab, 5, RngStream(100 + seed))
            ratios.append(b.std_err / a.std_err)
        assert abs(np.mean(ratios) - 0.5) < 0.1

    def test_plateau_once_past_bias_floor(self, ab):
        # fixed K, growing N: RMSE flattens at the bias floor
        truth = analytic_eig_linear_gaussian(ab, 5).eig
        rmse = {}
        for n in (10_000, 100_000):
            errs = []
            for seed in range(4):
                spec = E.EstimatorSpec(kind="posterior", n_outer=n, n_steps=300)
                est = estimate_eig(spec, ab, 5, RngStream(500 + seed))
                errs.append((est.value - truth) ** 2)
            rmse[n] = math.sqrt(np.mean(errs))
        assert abs(rmse[100_000] - rmse[10_000]) < 0.1 * max(rmse.values())


class TestTimedEstimation:
    def test_wall_clock_within_ten_percent(self, ab):
        est = estimate_eig_timed("posterior", ab, 5, 2.0, RngStream(9))
        assert abs(est.wall_clock - 2.0) <= 0.2
        assert est.k_used > 0 and est.n_used >= 1000

    def test_nmc_timed(self, ab):
        est = estimate_eig_timed("nmc", ab, 5, 1.0, RngStream(10))
        assert abs(est.wall_clock - 1.0) <= 0.1
        assert est.value > 0
