"""The six benchmark generative models behind one probabilistic interface."""

from __future__ import annotations

import json

from ..errors import ConfigurationError
from .ab_test import ABTestModel
from .base import DesignBounds, DesignGrid, ProbModel
from .ces import CESModel, ces_utility
from .death_process import DeathProcessModel
from .extrapolation import ExtrapolationModel
from .mixed_effects import MixedEffectsModel, comparison_designs, stimulus_features
from .preference import PreferenceModel

__all__ = [
    "ProbModel",
    "DesignGrid",
    "DesignBounds",
    "ABTestModel",
    "PreferenceModel",
    "MixedEffectsModel",
    "ExtrapolationModel",
    "DeathProcessModel",
    "CESModel",
    "ces_utility",
    "comparison_designs",
    "stimulus_features",
    "make_model",
    "model_from_json",
    "MODEL_REGISTRY",
]

MODEL_REGISTRY = {
    "ab_test": ABTestModel,
    "preference": PreferenceModel,
    "mixed_effects": MixedEffectsModel,
    "extrapolation": ExtrapolationModel,
    "death_process": DeathProcessModel,
    "ces": CESModel,
}


def make_model(name, overrides=None):
    """Build a benchmark model by name with paper defaults.

    ``overrides`` may only touch declared constructor parameters; unknown
    names raise ConfigurationError.
    """
    if name not in MODEL_REGISTRY:
        raise ConfigurationError(
            f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}"
        )
    cls = MODEL_REGISTRY[name]
    overrides = dict(overrides or {})
    import inspect

    allowed = set(inspect.signature(cls.__init__).parameters) - {"self"}
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown parameter(s) {sorted(unknown)} for model {name!r}"
        )
    return cls(**overrides)


def model_from_json(path_or_obj):
    """Construct a model from ``{"model": name, "params": {...}, "eps": x}``.

    Accepts a file path, a file-like object, or an already-parsed dict.
    """
    if isinstance(path_or_obj, dict):
        cfg = dict(path_or_obj)
    elif hasattr(path_or_obj, "read"):
        cfg = json.load(path_or_obj)
    else:
        with open(path_or_obj) as fh:
            cfg = json.load(fh)
    if "model" not in cfg:
        raise ConfigurationError('model config needs a "model" field')
    params = dict(cfg.get("params", {}))
    if "eps" in cfg:
        import inspect

        cls = MODEL_REGISTRY.get(cfg["model"])
        if cls is not None and "eps" in inspect.signature(cls.__init__).parameters:
            params.setdefault("eps", cfg["eps"])
    return make_model(cfg["model"], params)
