"""veig: variational estimation of expected information gain.

Estimate how much a candidate experiment design would teach you about the
latent parameters of a Bayesian model, optimize designs against that
estimate, and run sequential adaptive experiments.

The pieces, bottom up: :mod:`veig.dists` (distribution primitives),
:mod:`veig.models` (benchmark generative models), :mod:`veig.guides`
(variational families with analytic gradients), :mod:`veig.estimators`
(the EIG estimators), :mod:`veig.training` (stochastic-gradient training
and the train-then-evaluate pipeline), :mod:`veig.oracle` (independent
ground truths), :mod:`veig.design_loop` and :mod:`veig.vi` (design
optimization and sequential posterior updating), :mod:`veig.bench` and
:mod:`veig.cli` (the benchmark harness), and :mod:`veig.service` (the live
experiment HTTP service).
"""

from .estimators import EIGEstimate, EstimatorSpec
from .models import make_model, model_from_json
from .rng import RngStream
from .training import OptimizerSchedule, estimate_eig

__all__ = [
    "EIGEstimate",
    "EstimatorSpec",
    "OptimizerSchedule",
    "RngStream",
    "estimate_eig",
    "make_model",
    "model_from_json",
]

__version__ = "0.1.0"
