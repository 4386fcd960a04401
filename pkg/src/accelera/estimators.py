"""scikit-learn style wrappers: fit on a loop model, then query states against the tube."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .acceleration import AnalysisOptions, accelerate, make_template
from .lgg import lgg_propagate
from .linalg import jordan_decompose


class _TubeQueries:
    def _check(self):
        if not hasattr(self, "lo_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def transform(self, X):
        """Template coordinates ``X @ T^T`` of each state."""
        self._check()
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.template_.T

    def predict(self, X, slack=0.0):
        """True for states inside the tube."""
        Y = self.transform(X)
        return np.all((Y <= self.hi_ + slack) & (Y >= self.lo_ - slack), axis=1)

    def score(self, X, y=None):
        """Fraction of ``X`` inside the tube."""
        return float(np.mean(self.predict(X)))


class AbstractAcceleration(_TubeQueries, BaseEstimator):
    """Accelerated reach tube of a :class:`~accelera.acceleration.LinearLoop`."""

    def __init__(self, template="default", dir_budget=12, input_mode="varying", horizon=None):
        self.template = template
        self.dir_budget = dir_budget
        self.input_mode = input_mode
        self.horizon = horizon

    def fit(self, model, y=None):
        opts = AnalysisOptions(dir_budget=self.dir_budget, input_mode=self.input_mode,
                               horizon=float("inf") if self.horizon is None else self.horizon)
        tube = accelerate(model, self.template, opts)
        self.tube_ = tube
        self.template_ = tube.template
        self.lo_ = tube.lo
        self.hi_ = tube.hi
        self.n_lower_ = tube.n_lower
        self.n_upper_ = tube.n_upper
        return self


class LGGReach(_TubeQueries, BaseEstimator):
    """Bounded-horizon support propagation over ``N`` steps."""

    def __init__(self, N=100, template="default"):
        self.N = N
        self.template = template

    def fit(self, model, y=None):
        jf = jordan_decompose(model.A) if self.template in ("default", None) or "eigen" in str(self.template) else None
        T = make_template(self.template, model.p, jf)
        run = lgg_propagate(model, self.N, T)
        self.run_ = run
        self.template_ = T
        self.lo_ = run.lo
        self.hi_ = run.hi
        return self
