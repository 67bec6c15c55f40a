"""Regression of part dimensional deviations with uncertainty estimates."""

import json

from . import _core
from ._core import (
    ConfigError,
    Error,
    LayoutError,
    LevelError,
    NumericalError,
    ParseError,
    SchemaError,
    decompose,
    families,
    load,
    rmse,
    split,
    synthetic,
)

__all__ = [
    "ConfigError", "Error", "LayoutError", "NumericalError", "ParseError", "SchemaError", "Model",
    "decompose", "evaluate", "families", "load", "probabilistic", "rmse", "split", "synthetic", "uq_trend",
]


def _dump(doc):
    if doc is None:
        return ""
    return doc if isinstance(doc, str) else json.dumps(doc)


class Model:
    """A regressor of one family; params use the same names as the config grids."""

    def __init__(self, family, params=None, seed=0):
        self._impl = _core.Model(family, _dump(params), seed)

    def fit(self, features, targets):
        self._impl.fit(features, targets)
        return self

    def predict(self, features):
        return self._impl.predict(features)

    def predict_dist(self, features):
        return self._impl.predict_dist(features)

    @property
    def name(self):
        return self._impl.name


def evaluate(config=None, preset="", base_dir=""):
    return json.loads(_core.evaluate(_dump(config), preset, str(base_dir)))


def uq_trend(config=None, base_dir=""):
    return json.loads(_core.uq_trend(_dump(config), str(base_dir)))


def probabilistic(family, config=None, base_dir=""):
    return json.loads(_core.probabilistic(family, _dump(config), str(base_dir)))
