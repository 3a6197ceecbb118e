"""Parameterized admissible controls with pointwise constraint projection.

Families:
    constant   one vector theta in R^d
    piecewise  one vector per time cell, theta shape (n_time_cells, d)
    feedback   linear combination of basis functions of (x, s) per time cell,
               theta shape (n_time_cells, n_features, d)

Evaluation always projects the raw parameterized value onto the constraint
set, so admissibility holds exactly (projected parameterization, not penalty).
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .market_model import ConfigurationError, ConstraintSet

FAMILIES = ("constant", "piecewise", "feedback")


def feedback_features(x, s):
    """Feature map [1, x, s_i, s_i s_j (i<=j)] of wealth and state, (n, n_features)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    s = np.atleast_2d(np.asarray(s, dtype=float))
    n, d = s.shape
    cols = [np.ones(n), x]
    cols.extend(s[:, i] for i in range(d))
    for i in range(d):
        for j in range(i, d):
            cols.append(s[:, i] * s[:, j])
    return np.stack(cols, axis=1)


def n_feedback_features(d: int) -> int:
    return 2 + d + d * (d + 1) // 2


def theta_size(family: str, d: int, n_time_cells: int = 1) -> int:
    if family == "constant":
        return d
    if family == "piecewise":
        return n_time_cells * d
    if family == "feedback":
        return n_time_cells * n_feedback_features(d) * d
    raise ConfigurationError("unknown strategy family %r" % family)


@dataclass(frozen=True)
class Strategy:
    """Immutable constraint-projected control; evaluation is pure."""

    family: str
    theta: np.ndarray
    constraint: ConstraintSet
    d: int
    n_time_cells: int = 1
    horizon: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError("unknown strategy family %r" % self.family)
        theta = np.asarray(self.theta, dtype=float).reshape(-1).copy()
        expected = theta_size(self.family, self.d, self.n_time_cells)
        if theta.size != expected:
            raise ConfigurationError("theta has size %d, family %r with d=%d, cells=%d needs %d"
                                     % (theta.size, self.family, self.d, self.n_time_cells, expected))
        object.__setattr__(self, "theta", theta)
        if self.family != "constant" and self.n_time_cells < 1:
            raise ConfigurationError("n_time_cells must be >= 1")

    @property
    def bound(self) -> float:
        return self.constraint.bound

    def _cell(self, t: float) -> int:
        frac = min(max(t / self.horizon, 0.0), 1.0)
        return min(int(frac * self.n_time_cells), self.n_time_cells - 1)

    def raw(self, t, x, s) -> np.ndarray:
        """Parameterized value before projection, (n, d)."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        n = s.shape[0]
        if self.family == "constant":
            return np.broadcast_to(self.theta, (n, self.d)).copy()
        if self.family == "piecewise":
            table = self.theta.reshape(self.n_time_cells, self.d)
            return np.broadcast_to(table[self._cell(t)], (n, self.d)).copy()
        table = self.theta.reshape(self.n_time_cells, n_feedback_features(self.d), self.d)
        return feedback_features(x, s) @ table[self._cell(t)]

    def evaluate(self, t, x, s) -> np.ndarray:
        """Admissible control value: raw value projected onto the constraint set."""
        return self.constraint.project(t, np.atleast_2d(s), self.raw(t, x, s))

    def projection_active(self, t, x, s, tol=1e-12) -> bool:
        raw = self.raw(t, x, s)
        proj = self.constraint.project(t, np.atleast_2d(s), raw)
        return bool(np.any(np.abs(raw - proj) > tol * (1.0 + np.abs(raw))))

    def with_theta(self, theta) -> "Strategy":
        return replace(self, theta=np.asarray(theta, dtype=float).reshape(-1))

    def to_dict(self) -> dict:
        c = self.constraint
        if c.kind == "ball":
            if callable(c.center) or callable(c.radius):
                raise ConfigurationError("callable constraints are not JSON-serializable")
            cons = {"kind": "ball", "center": list(np.broadcast_to(np.asarray(c.center, float), (self.d,))),
                    "radius": float(c.radius)}
        else:
            if callable(c.lower) or callable(c.upper):
                raise ConfigurationError("callable constraints are not JSON-serializable")
            cons = {"kind": "box", "lower": list(np.broadcast_to(np.asarray(c.lower, float), (self.d,))),
                    "upper": list(np.broadcast_to(np.asarray(c.upper, float), (self.d,)))}
        return {"family": self.family, "theta": [float(v) for v in self.theta],
                "constraint": cons, "d": self.d, "n_time_cells": self.n_time_cells,
                "horizon": self.horizon}

    @staticmethod
    def from_dict(data: dict) -> "Strategy":
        cons = data["constraint"]
        d = int(data["d"])
        if cons["kind"] == "ball":
            constraint = ConstraintSet(kind="ball", d=d, center=np.asarray(cons["center"], float),
                                       radius=float(cons["radius"]))
        elif cons["kind"] == "box":
            constraint = ConstraintSet(kind="box", d=d, lower=np.asarray(cons["lower"], float),
                                       upper=np.asarray(cons["upper"], float))
        else:
            raise ConfigurationError("unknown constraint kind %r" % cons["kind"])
        return Strategy(family=data["family"], theta=np.asarray(data["theta"], float),
                        constraint=constraint, d=d, n_time_cells=int(data.get("n_time_cells", 1)),
                        horizon=float(data.get("horizon", 1.0)))


def evaluate_strategy(strategy: Strategy, t, x, s) -> np.ndarray:
    """Module-level alias for :meth:`Strategy.evaluate`."""
    return strategy.evaluate(t, x, s)


def perturb_parameters(strategy: Strategy, direction, step: float) -> Strategy:
    """New strategy with theta <- theta + step * direction; constraint unchanged."""
    direction = np.asarray(direction, dtype=float).reshape(-1)
    if direction.size != strategy.theta.size:
        raise ConfigurationError("direction has size %d, theta has size %d"
                                 % (direction.size, strategy.theta.size))
    return strategy.with_theta(strategy.theta + step * direction)
