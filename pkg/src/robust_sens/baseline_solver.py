"""Sample-average solver for the non-robust problem and optimality certificates.

The objective is estimated on one fixed Brownian batch (common random numbers),
so the inner problem is a deterministic function of theta and descent can be
checked exactly. Minimization runs a BFGS iteration with central
finite-difference gradients and Armijo backtracking; a derivative-free
Nelder-Mead polish is the fallback when the gradient loop stalls.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .market_model import UnsupportedConfigurationError
from .simulation import (PathBatch, TimeGrid, estimate_objective, sample_brownian,
                         simulate_state, simulate_wealth)
from .strategy import Strategy


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int
    n_steps: int
    seed: int

    def grid(self, horizon: float) -> TimeGrid:
        return TimeGrid(n_steps=self.n_steps, horizon=horizon)


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 80
    tol: float = 1e-9
    fd_step: float = 1e-4
    armijo: float = 1e-4
    min_step: float = 1e-13
    use_fallback: bool = True


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    step: float
    grad_norm: float
    projected: bool


@dataclass(frozen=True)
class OptimResult:
    theta: np.ndarray
    value: float
    trace: tuple
    converged: bool


def _fd_gradient(fn, theta, rel_step):
    grad = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * (1.0 + abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        grad[i] = (fn(tp) - fn(tm)) / (2.0 * h)
    return grad


def minimize_crn(fn, theta0, opt: OptimizerConfig, projected_probe=None) -> OptimResult:
    """Deterministic BFGS/Armijo minimization of a CRN objective over theta.

    The objective value is non-increasing along accepted iterates. The
    optional ``projected_probe(theta)`` reports whether the control projection
    is active (trace diagnostic only).
    """
    theta = np.asarray(theta0, dtype=float).reshape(-1).copy()
    f = fn(theta)
    h_inv = np.eye(theta.size)
    trace = []
    converged = False
    step_taken = 0.0
    for it in range(opt.max_iters):
        grad = _fd_gradient(fn, theta, opt.fd_step)
        gnorm = float(np.linalg.norm(grad))
        probed = bool(projected_probe(theta)) if projected_probe is not None else False
        trace.append(TraceRow(it, float(f), float(step_taken), gnorm, probed))
        if gnorm <= opt.tol * (1.0 + abs(f)):
            converged = True
            break
        direction = -h_inv @ grad
        slope = float(direction @ grad)
        if slope >= 0.0:
            direction = -grad
            slope = -gnorm ** 2
        step = 1.0
        f_new = None
        while step >= opt.min_step:
            candidate = theta + step * direction
            f_try = fn(candidate)
            if f_try <= f + opt.armijo * step * slope:
                f_new = f_try
                break
            step *= 0.5
        if f_new is None:
            # no acceptable step along this direction; try steepest descent once
            direction = -grad
            slope = -gnorm ** 2
            step = 1.0
            while step >= opt.min_step:
                candidate = theta + step * direction
                f_try = fn(candidate)
                if f_try <= f + opt.armijo * step * slope:
                    f_new = f_try
                    break
                step *= 0.5
        if f_new is None:
            break  # stalled
        s_vec = step * direction
        grad_new = _fd_gradient(fn, theta + s_vec, opt.fd_step)
        y_vec = grad_new - grad
        ys = float(y_vec @ s_vec)
        if ys > 1e-12 * float(np.linalg.norm(y_vec) * np.linalg.norm(s_vec) + 1e-300):
            rho = 1.0 / ys
            eye = np.eye(theta.size)
            left = eye - rho * np.outer(s_vec, y_vec)
            h_inv = left @ h_inv @ left.T + rho * np.outer(s_vec, s_vec)
        theta = theta + s_vec
        f = f_new
        step_taken = step

    if not converged and opt.use_fallback:
        res = optimize.minimize(fn, theta, method="Nelder-Mead",
                                options={"maxiter": 200 * max(1, theta.size),
                                         "xatol": 1e-10, "fatol": 1e-12})
        if res.fun < f:
            theta = np.asarray(res.x, dtype=float).reshape(-1)
            f = float(res.fun)
        grad = _fd_gradient(fn, theta, opt.fd_step)
        gnorm = float(np.linalg.norm(grad))
        converged = gnorm <= 10.0 * opt.tol * (1.0 + abs(f)) or res.success
        trace.append(TraceRow(len(trace), float(f), 0.0, gnorm,
                              bool(projected_probe(theta)) if projected_probe else False))
    return OptimResult(theta=theta, value=float(f), trace=tuple(trace), converged=converged)


@dataclass(frozen=True)
class BaselineResult:
    strategy: Strategy
    v0: float
    v0_se: float
    trace: tuple
    converged: bool
    batch: object = field(repr=False, default=None)
    paths: PathBatch = field(repr=False, default=None)

    @property
    def controlled_paths(self) -> PathBatch:
        return self.paths


def solve_baseline(model, cost, template: Strategy, sim: SimulationConfig,
                   opt: Optional[OptimizerConfig] = None, x0: float = 0.0,
                   batch=None) -> BaselineResult:
    """Minimize the CRN objective over the strategy parameters.

    Returns the best strategy, its objective value with standard error and the
    iteration trace; deterministic given the seed. Non-convergence within
    ``max_iters`` returns the best iterate flagged not converged.
    """
    opt = opt or OptimizerConfig()
    if batch is None:
        grid = TimeGrid(n_steps=sim.n_steps, horizon=model.horizon)
        batch = sample_brownian(grid, n_paths=sim.n_paths, seed=sim.seed, d=model.d)
    base_paths = simulate_state(model, batch)

    def objective(theta):
        candidate = template.with_theta(theta)
        controlled = simulate_wealth(candidate, base_paths, batch, x0)
        return estimate_objective(cost, controlled)[0]

    probe_state = base_paths.states[:, base_paths.states.shape[1] // 2, :][:256]
    probe_x = np.full(probe_state.shape[0], x0)

    def projected_probe(theta):
        candidate = template.with_theta(theta)
        t_mid = 0.5 * model.horizon
        return candidate.projection_active(t_mid, probe_x, probe_state)

    result = minimize_crn(objective, template.theta, opt, projected_probe)
    best = template.with_theta(result.theta)
    controlled = simulate_wealth(best, base_paths, batch, x0)
    v0, se = estimate_objective(cost, controlled)
    return BaselineResult(strategy=best, v0=v0, v0_se=se, trace=result.trace,
                          converged=result.converged, batch=batch, paths=controlled)


@dataclass(frozen=True)
class FocResult:
    """First-order optimality residual: min over test strategies of the
    directional derivative estimate; >= -3 SE certifies optimality."""

    residual: float
    se: float
    per_test: tuple

    def certified(self, n_se: float = 3.0) -> bool:
        return self.residual >= -n_se * self.se


def foc_residual(model, cost, hstar: Strategy, test_strategies, sim: SimulationConfig,
                 x0: float = 0.0, batch=None, base: Optional[PathBatch] = None) -> FocResult:
    """Directional-derivative certificate at a candidate optimizer.

    For each test strategy H the estimate of
    E[int grad_{x,h} g . (X^H - X^*, H - H^*) dt + d/dx f . (X^H_T - X^*_T)]
    must be nonnegative at an optimum (up to MC noise).
    """
    if base is None or base.wealth is None:
        if batch is None:
            grid = TimeGrid(n_steps=sim.n_steps, horizon=model.horizon)
            batch = sample_brownian(grid, n_paths=sim.n_paths, seed=sim.seed, d=model.d)
        states = simulate_state(model, batch)
        base = simulate_wealth(hstar, states, batch, x0)
    grid = base.grid
    dt = grid.dt
    times = grid.times
    n = base.n_paths
    y = cost.claim(base.states[:, -1, :])
    fx = cost.f_grad(base.wealth[:, -1], y)[:, 0]
    grads = [cost.g_grad(times[k], base.wealth[:, k], base.controls[:, k, :])
             for k in range(grid.n_steps)]
    per_test = []
    for test in test_strategies:
        other = simulate_wealth(test, base, batch, x0)
        vals = np.zeros(n)
        for k in range(grid.n_steps):
            gg = grads[k]
            dx = other.wealth[:, k] - base.wealth[:, k]
            dh = other.controls[:, k, :] - base.controls[:, k, :]
            vals += (gg[:, 0] * dx + np.einsum("ni,ni->n", gg[:, 1:], dh)) * dt
        vals += fx * (other.wealth[:, -1] - base.wealth[:, -1])
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        per_test.append((mean, se))
    if not per_test:
        return FocResult(residual=0.0, se=0.0, per_test=())
    idx = int(np.argmin([m for m, _ in per_test]))
    return FocResult(residual=per_test[idx][0], se=per_test[idx][1], per_test=tuple(per_test))


def mv_closed_form_oracle(model, cost, x0: float, constraint, sim: Optional[SimulationConfig] = None):
    """Replication oracle for the complete-market quadratic hedge of the claim S_T.

    Preconditions (checked on sampled points): d = 1, g identically zero,
    l(s) = s, martingale baseline drift, and the constraint set contains 1.
    Returns the buy-and-hold strategy H = 1 and V0 = (x0 - s0)^2.
    """
    if model.d != 1:
        raise UnsupportedConfigurationError("oracle requires d=1")
    probe_s = np.linspace(0.25, 4.0, 16)[:, None] * (1.0 + abs(float(model.s0[0])))
    probe_x = np.linspace(-2.0, 2.0, 16)
    probe_h = np.linspace(-1.0, 1.0, 16)[:, None]
    for t in (0.0, 0.5 * model.horizon, 0.99 * model.horizon):
        if np.max(np.abs(model.drift_at(t, probe_s))) > 1e-12:
            raise UnsupportedConfigurationError("oracle requires a martingale baseline (zero drift)")
        if np.max(np.abs(cost.g(t, probe_x, probe_h))) > 1e-12:
            raise UnsupportedConfigurationError("oracle requires zero running cost")
    if np.max(np.abs(cost.claim(probe_s) - probe_s[:, 0])) > 1e-12:
        raise UnsupportedConfigurationError("oracle requires the identity claim l(s)=s")
    ones = np.ones((4, 1))
    proj = constraint.project(0.0, probe_s[:4], ones)
    if np.max(np.abs(proj - ones)) > 1e-12:
        raise UnsupportedConfigurationError("oracle requires the constraint set to contain 1")
    hstar = Strategy(family="constant", theta=np.array([1.0]), constraint=constraint,
                     d=1, horizon=model.horizon)
    v0 = float((x0 - float(model.s0[0])) ** 2)
    return hstar, v0
