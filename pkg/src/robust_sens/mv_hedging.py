"""Mean-variance hedging specialization of the general framework.

The running cost is the quadratic family A x^2 + x B.h + h.C h with bounded
deterministic coefficient functions of time, the terminal cost is
(x - claim)^2 with the claim realized as l(S_T), so the quadratic hedge sits
inside the general pipeline with f(x, y) = (x - y)^2. The stochastic maximum
principle supplies an independent optimality certificate for the solved
strategy.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .baseline_solver import SimulationConfig
from .bsde import BsdeSolution
from .market_model import ConfigurationError, CostSpec
from .sensitivity import SensitivityReport, expansion_report
from .simulation import PathBatch
from .strategy import Strategy


def _time_fn(value, shape):
    if callable(value):
        fn = value

        def wrapped(t):
            return np.broadcast_to(np.asarray(fn(t), dtype=float), shape)

        return wrapped
    const = np.broadcast_to(np.asarray(value, dtype=float), shape).copy()
    return lambda t: const


@dataclass(frozen=True)
class MVCostSpec:
    """Quadratic running-cost data (A, B, C) and the claim map l.

    A, B, C may be constants or deterministic functions of time; the block
    matrix [[2A, B^T], [B, 2C]] must be positive semidefinite (checked on a
    time sample at construction).
    """

    d: int
    a: object
    b: object
    c: object
    l: Callable
    l_grad: Callable
    l_hess: Callable
    c_l: float = 10.0
    horizon: float = 1.0
    _a_fn: Callable = field(init=False, repr=False, default=None)
    _b_fn: Callable = field(init=False, repr=False, default=None)
    _c_fn: Callable = field(init=False, repr=False, default=None)

    def __post_init__(self):
        d = self.d
        object.__setattr__(self, "_a_fn", _time_fn(self.a, ()))
        object.__setattr__(self, "_b_fn", _time_fn(self.b, (d,)))
        object.__setattr__(self, "_c_fn", _time_fn(self.c, (d, d)))
        for t in np.linspace(0.0, self.horizon, 9):
            a_t = float(self._a_fn(t))
            b_t = np.asarray(self._b_fn(t))
            c_t = np.asarray(self._c_fn(t))
            if np.max(np.abs(c_t - c_t.T)) > 1e-12:
                raise ConfigurationError("C must be symmetric")
            block = np.zeros((d + 1, d + 1))
            block[0, 0] = 2.0 * a_t
            block[0, 1:] = b_t
            block[1:, 0] = b_t
            block[1:, 1:] = 2.0 * c_t
            if np.linalg.eigvalsh(block)[0] < -1e-10:
                raise ConfigurationError("mean-variance block matrix [[2A,B^T],[B,2C]] "
                                         "is not positive semidefinite at t=%g" % t)

    def is_pure_hedge(self) -> bool:
        """True when A, B, C vanish identically on the time sample."""
        for t in np.linspace(0.0, self.horizon, 9):
            if abs(float(self._a_fn(t))) > 0 or np.any(self._b_fn(t) != 0) \
                    or np.any(self._c_fn(t) != 0):
                return False
        return True


def mv_cost_to_general(mv: MVCostSpec) -> CostSpec:
    """Wire the quadratic cost into the general CostSpec with analytic derivatives."""
    d = mv.d
    a_fn, b_fn, c_fn = mv._a_fn, mv._b_fn, mv._c_fn

    def g(t, x, h):
        x = np.asarray(x, dtype=float)
        h = np.atleast_2d(h)
        a_t = float(a_fn(t))
        b_t = b_fn(t)
        c_t = c_fn(t)
        return (a_t * x * x + x * (h @ b_t)
                + np.einsum("ni,ij,nj->n", h, c_t, h))

    def g_grad(t, x, h):
        x = np.asarray(x, dtype=float)
        h = np.atleast_2d(h)
        a_t = float(a_fn(t))
        b_t = b_fn(t)
        c_t = c_fn(t)
        out = np.empty((x.shape[0], 1 + d))
        out[:, 0] = 2.0 * a_t * x + h @ b_t
        out[:, 1:] = x[:, None] * b_t + 2.0 * h @ c_t
        return out

    def g_hess(t, x, h):
        x = np.asarray(x, dtype=float)
        a_t = float(a_fn(t))
        b_t = b_fn(t)
        c_t = c_fn(t)
        out = np.zeros((x.shape[0], 1 + d, 1 + d))
        out[:, 0, 0] = 2.0 * a_t
        out[:, 0, 1:] = b_t
        out[:, 1:, 0] = b_t
        out[:, 1:, 1:] = 2.0 * c_t
        return out

    def f(x, y):
        return (x - y) ** 2

    def f_grad(x, y):
        return np.stack([2.0 * (x - y), -2.0 * (x - y)], axis=-1)

    def f_hess(x, y):
        n = np.asarray(x).shape[0]
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = 2.0
        out[:, 0, 1] = -2.0
        out[:, 1, 0] = -2.0
        out[:, 1, 1] = 2.0
        return out

    return CostSpec(g=g, g_grad=g_grad, g_hess=g_hess, f=f, f_grad=f_grad,
                    f_hess=f_hess, l=mv.l, l_grad=mv.l_grad, l_hess=mv.l_hess,
                    r_growth=0.5, c2_upper=8.0, c0_lower=0.0, c2_lower=2.0,
                    c_l=mv.c_l, has_running_cost=not mv.is_pure_hedge())


@dataclass(frozen=True)
class SmpResult:
    residual: float
    se: float
    per_test: tuple

    def certified(self, n_se: float = 3.0) -> bool:
        return self.residual >= -n_se * self.se


def smp_residual(model, mv: MVCostSpec, hstar: Strategy, sol: BsdeSolution,
                 test_strategies, base: PathBatch,
                 sim: Optional[SimulationConfig] = None) -> SmpResult:
    """Stochastic-maximum-principle certificate for the quadratic problem.

    At the optimizer, E[int (H* - H) . (-drift Y - vol Z - X B - 2 C H*) dt]
    is nonnegative for every admissible H; the minimum over the test set is
    returned with its standard error. ``base`` must carry wealth and control
    paths of the candidate optimizer.
    """
    if base.wealth is None or base.controls is None:
        raise ValueError("base paths must carry wealth and controls")
    grid = base.grid
    dt = grid.dt
    n = base.n_paths
    # pointwise multiplier of the variational inequality at the candidate
    mult = np.empty((n, grid.n_steps, mv.d))
    for k in range(grid.n_steps):
        t = grid.times[k]
        s_k = base.states[:, k, :]
        b_k = model.drift_at(t, s_k)
        sig_k = model.vol_at(t, s_k)
        mult[:, k, :] = (-b_k * sol.y[:, k][:, None]
                         - np.einsum("nij,nj->ni", sig_k, sol.z[:, k, :])
                         - base.wealth[:, k][:, None] * mv._b_fn(t)
                         - 2.0 * base.controls[:, k, :] @ mv._c_fn(t))
    per_test = []
    for test in test_strategies:
        vals = np.zeros(n)
        for k in range(grid.n_steps):
            h_other = test.evaluate(grid.times[k], base.wealth[:, k], base.states[:, k, :])
            diff = base.controls[:, k, :] - h_other
            vals += np.einsum("ni,ni->n", diff, mult[:, k, :]) * dt
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        per_test.append((mean, se))
    if not per_test:
        return SmpResult(residual=0.0, se=0.0, per_test=())
    idx = int(np.argmin([m for m, _ in per_test]))
    return SmpResult(residual=per_test[idx][0], se=per_test[idx][1], per_test=tuple(per_test))


def mv_sensitivity(model, mv: MVCostSpec, spec, sim: SimulationConfig, opt=None,
                   template: Optional[Strategy] = None, x0: float = 0.0,
                   **kwargs) -> SensitivityReport:
    """Expansion report for the quadratic problem through the general pipeline."""
    if template is None:
        raise ConfigurationError("a strategy template is required")
    cost = mv_cost_to_general(mv)
    return expansion_report(model, cost, template, spec, sim, opt, x0=x0, **kwargs)
