"""First-order sensitivity, adversarial directions and the expansion sweep.

The sensitivity of the optimal value to coefficient uncertainty is

    V'(0) = gamma ||Y H + Yvec||_{L^q} + eta ||psi||_{H^q},

where (Y, Z) and (Yvec, Zvec) solve the two sensitivity BSDEs at the baseline
optimizer and psi is the matrix process with entries H_i Z_j + Zvec_ij (the
orientation that makes the pairing identity exact; for d = 1 the distinction
is moot). Dual-norm-attaining perturbation directions are built from the same
processes and drive lower-bound estimates of the worst-case values.

Perturbed values are evaluated with common random numbers and a frozen control
process: a strategy defines its control paths on the baseline paths, and those
paths are reused under every perturbed model, matching the admissible class of
predictable processes. Path differences are then exactly linear in the
perturbation scale, which the evaluator exploits.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baseline_solver import (BaselineResult, OptimizerConfig, SimulationConfig,
                              minimize_crn, solve_baseline)
from .bsde import BsdeSolution, PolynomialBasis, solve_bsde
from .market_model import ConfigurationError, MarketModel, RobustnessSpec
from .simulation import (BrownianBatch, PathBatch, Perturbation, TimeGrid,
                         hp_norm_per_path, lp_norm_per_path, sample_brownian,
                         simulate_state, simulate_wealth, wealth_from_controls)
from .strategy import Strategy
from .util import split_seed

_DEFAULT_TAUS = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True, eq=False)
class PerturbationDirection:
    """Unit-norm coefficient perturbation realized on a path batch.

    ``drift`` has unit L^p norm, ``vol`` unit H^p norm (Monte Carlo norms on
    the generating batch); zero-norm inputs yield zero arrays flagged
    degenerate. The drift array is adapted by construction; the volatility
    array carries the pathwise energy weight of the dual maximizer and is
    adapted whenever that energy is deterministic.
    """

    drift: Optional[np.ndarray]        # (n, N, d)
    vol: Optional[np.ndarray]          # (n, N, d, d)
    provenance: str = "user"
    degenerate_drift: bool = False
    degenerate_vol: bool = False
    label: str = ""

    def perturbation(self, eps: float, spec: RobustnessSpec, tau: float = 1.0) -> Perturbation:
        return Perturbation(drift_dir=self.drift, vol_dir=self.vol,
                            drift_scale=tau * eps * spec.gamma,
                            vol_scale=tau * eps * spec.eta, label=self.label)


def sensitivity_processes(sol: BsdeSolution, controls: np.ndarray):
    """Pathwise processes phi = Y H + Yvec (vector) and psi_ij = H_i Z_j + Zvec_ij."""
    n, n_steps, d = controls.shape
    phi = sol.y[:, :n_steps, None] * controls + sol.y_vec[:, :n_steps, :]
    psi = np.einsum("nki,nkj->nkij", controls, sol.z) + sol.z_vec
    return phi, psi


@dataclass(frozen=True)
class FirstOrderSensitivity:
    value: float
    drift_term: float
    vol_term: float
    drift_power_mean: float
    vol_power_mean: float
    se: float
    drift_se: float
    vol_se: float


def first_order_sensitivity(sol: BsdeSolution, controls: np.ndarray,
                            spec: RobustnessSpec, dt: float) -> FirstOrderSensitivity:
    """gamma ||phi||_{L^q} + eta ||psi||_{H^q} with delta-method standard errors.

    Linear in (gamma, eta): doubling both aversions doubles the value exactly.
    """
    q = spec.q
    phi, psi = sensitivity_processes(sol, controls)
    pb = lp_norm_per_path(phi, q, dt)
    ps = hp_norm_per_path(psi, q, dt)
    n = pb.shape[0]
    mb = float(pb.mean())
    ms = float(ps.mean())
    nb = mb ** (1.0 / q) if mb > 0 else 0.0
    ns = ms ** (1.0 / q) if ms > 0 else 0.0
    # covariance-aware delta method: the two power means share paths
    grad = np.array([
        spec.gamma / q * mb ** (1.0 / q - 1.0) if mb > 0 else 0.0,
        spec.eta / q * ms ** (1.0 / q - 1.0) if ms > 0 else 0.0,
    ])
    cov = np.cov(np.stack([pb, ps]), ddof=1) / n if n > 1 else np.zeros((2, 2))
    se = float(np.sqrt(max(0.0, grad @ cov @ grad)))
    se_b = float(np.sqrt(cov[0, 0]) * (nb / (q * mb)) if mb > 0 else 0.0)
    se_s = float(np.sqrt(cov[1, 1]) * (ns / (q * ms)) if ms > 0 else 0.0)
    return FirstOrderSensitivity(value=spec.gamma * nb + spec.eta * ns,
                                 drift_term=spec.gamma * nb, vol_term=spec.eta * ns,
                                 drift_power_mean=mb, vol_power_mean=ms,
                                 se=se, drift_se=spec.gamma * se_b, vol_se=spec.eta * se_s)


def adversarial_direction(sol: BsdeSolution, controls: np.ndarray, spec: RobustnessSpec,
                          dt: float) -> PerturbationDirection:
    """Dual-norm-attaining unit direction built from the sensitivity processes.

    Drift: phi |phi|^(q-2), normalized in L^p; since (q-1) p = q, the in-sample
    pairing with phi equals ||phi||_{L^q} exactly. Volatility: psi weighted by
    the pathwise energy (int ||psi||_F^2 dt)^((q-2)/2), normalized in H^p, with
    the analogous attainment property for the mixed norm.
    """
    q = spec.q
    p = spec.p
    phi, psi = sensitivity_processes(sol, controls)
    n = phi.shape[0]

    mag = np.linalg.norm(phi, axis=-1)
    mb = float(np.mean(np.sum(mag ** q, axis=1) * dt))
    if mb <= 0.0:
        drift = np.zeros_like(phi)
        degenerate_drift = True
    else:
        weight = np.zeros_like(mag)
        np.divide(mag ** (q - 1.0), mag, out=weight, where=mag > 0)
        drift = phi * weight[:, :, None] / mb ** (1.0 / p)
        degenerate_drift = False

    rho2 = np.sum(psi ** 2, axis=(-2, -1)).sum(axis=1) * dt
    ms = float(np.mean(rho2 ** (q / 2.0)))
    if ms <= 0.0:
        vol = np.zeros_like(psi)
        degenerate_vol = True
    else:
        w = np.zeros(n)
        np.power(rho2, (q - 2.0) / 2.0, out=w, where=rho2 > 0)
        vol = psi * w[:, None, None, None] / ms ** (1.0 / p)
        degenerate_vol = False

    return PerturbationDirection(drift=drift, vol=vol, provenance="adversarial",
                                 degenerate_drift=degenerate_drift,
                                 degenerate_vol=degenerate_vol, label="adversarial")


def normalize_direction(drift, vol, p: float, dt: float, label: str = "",
                        provenance: str = "user") -> PerturbationDirection:
    """Scale raw direction arrays to unit L^p / H^p Monte Carlo norms."""
    degenerate_drift = degenerate_vol = False
    if drift is not None:
        nb = float(np.mean(lp_norm_per_path(drift, p, dt)))
        if nb > 0:
            drift = drift / nb ** (1.0 / p)
        else:
            degenerate_drift = True
    if vol is not None:
        ns = float(np.mean(hp_norm_per_path(vol, p, dt)))
        if ns > 0:
            vol = vol / ns ** (1.0 / p)
        else:
            degenerate_vol = True
    return PerturbationDirection(drift=drift, vol=vol, provenance=provenance,
                                 degenerate_drift=degenerate_drift,
                                 degenerate_vol=degenerate_vol, label=label)


def random_directions(batch: BrownianBatch, spec: RobustnessSpec, count: int,
                      seed: int) -> list:
    """Adapted random unit probes: affine functions of the running Brownian path."""
    rng = np.random.default_rng(seed)
    w = batch.brownian_paths()[:, :-1, :]   # W_{t_k} at left endpoints, adapted
    n, n_steps, d = w.shape
    dt = batch.grid.dt
    out = []
    for i in range(count):
        c0 = rng.standard_normal(d)
        c1 = rng.standard_normal((d, d))
        drift_raw = c0 + np.einsum("nkj,ji->nki", w, c1)
        m0 = rng.standard_normal((d, d))
        m1 = rng.standard_normal((d, d))
        vol_raw = m0 + m1 * w[:, :, 0][:, :, None, None]
        out.append(normalize_direction(drift_raw, vol_raw, spec.p, dt,
                                       label="random-%d" % i, provenance="random"))
    return out


class PerturbedEvaluator:
    """Common-random-numbers objective under scaled directions with frozen controls.

    Exploits the exact linearity of perturbed paths: per direction only the
    cumulative drift/vol corrections are stored, and for a control process the
    wealth corrections reduce to two cumulative sums. Any (direction, scale)
    objective then costs one vectorized cost evaluation.
    """

    def __init__(self, cost, batch: BrownianBatch, base_states: np.ndarray,
                 directions: Sequence[PerturbationDirection], spec: RobustnessSpec,
                 has_running_cost: Optional[bool] = None):
        self.cost = cost
        self.batch = batch
        self.grid = batch.grid
        self.base_states = base_states
        self.directions = tuple(directions)
        self.spec = spec
        self.has_running = getattr(cost, "has_running_cost", True) \
            if has_running_cost is None else has_running_cost
        dt = self.grid.dt
        n, n_steps, d = batch.increments.shape
        # only terminal state shifts are cached; full paths are derived on demand
        self._state_term = []
        for direction in self.directions:
            if direction.drift is not None:
                sd = np.sum(direction.drift, axis=1) * dt
            else:
                sd = np.zeros((n, d))
            if direction.vol is not None:
                sv = np.einsum("nkij,nkj->ni", direction.vol, batch.increments)
            else:
                sv = np.zeros((n, d))
            self._state_term.append((sd, sv))
        self.controls = None
        self.x0 = 0.0
        self.base_wealth = None
        self._wealth_term = None
        self._wealth_cums = None

    def set_controls(self, controls: np.ndarray, x0: float):
        """Freeze a control process; precompute its wealth corrections."""
        dt = self.grid.dt
        self.controls = controls
        self.x0 = x0
        base = wealth_from_controls(
            PathBatch(grid=self.grid, states=self.base_states), controls, x0)
        self.base_wealth = base.wealth
        self._wealth_term = []
        self._wealth_cums = [None] * len(self.directions)
        for direction in self.directions:
            self._wealth_term.append((self._drift_gain(direction, terminal=True),
                                      self._vol_gain(direction, terminal=True)))

    def _drift_gain(self, direction, terminal):
        dt = self.grid.dt
        n, n_steps, _ = self.controls.shape
        if direction.drift is None:
            return np.zeros(n) if terminal else np.zeros((n, n_steps + 1))
        inc = np.einsum("nki,nki->nk", self.controls, direction.drift) * dt
        if terminal:
            return inc.sum(axis=1)
        cum = np.zeros((n, n_steps + 1))
        np.cumsum(inc, axis=1, out=cum[:, 1:])
        return cum

    def _vol_gain(self, direction, terminal):
        n, n_steps, _ = self.controls.shape
        if direction.vol is None:
            return np.zeros(n) if terminal else np.zeros((n, n_steps + 1))
        inc = np.einsum("nki,nkij,nkj->nk", self.controls, direction.vol,
                        self.batch.increments)
        if terminal:
            return inc.sum(axis=1)
        cum = np.zeros((n, n_steps + 1))
        np.cumsum(inc, axis=1, out=cum[:, 1:])
        return cum

    def scales(self, eps: float, tau: float):
        return tau * eps * self.spec.gamma, tau * eps * self.spec.eta

    def state_deltas(self, idx: int, eps: float, tau: float) -> np.ndarray:
        """Full perturbed-minus-baseline state path (n, N+1, d)."""
        a, b = self.scales(eps, tau)
        direction = self.directions[idx]
        n, n_steps, d = self.batch.increments.shape
        delta = np.zeros((n, n_steps + 1, d))
        if direction.drift is not None and a != 0.0:
            np.cumsum(a * direction.drift * self.grid.dt, axis=1, out=delta[:, 1:, :])
        if direction.vol is not None and b != 0.0:
            delta[:, 1:, :] += b * np.cumsum(
                np.einsum("nkij,nkj->nki", direction.vol, self.batch.increments), axis=1)
        return delta

    def _wealth_cum(self, idx: int):
        if self._wealth_cums[idx] is None:
            direction = self.directions[idx]
            self._wealth_cums[idx] = (self._drift_gain(direction, terminal=False),
                                      self._vol_gain(direction, terminal=False))
        return self._wealth_cums[idx]

    def wealth_deltas(self, idx: int, eps: float, tau: float) -> np.ndarray:
        """Full perturbed-minus-baseline wealth path (n, N+1)."""
        a, b = self.scales(eps, tau)
        cp, cq = self._wealth_cum(idx)
        return a * cp + b * cq

    def per_path_objective(self, idx: Optional[int], eps: float = 0.0,
                           tau: float = 1.0) -> np.ndarray:
        """Pathwise cost under direction ``idx`` at radial scale tau (None = baseline)."""
        if self.controls is None:
            raise ValueError("set_controls must be called first")
        grid = self.grid
        dt = grid.dt
        if idx is None or eps == 0.0 or tau == 0.0:
            x_T = self.base_wealth[:, -1]
            s_T = self.base_states[:, -1, :]
            wealth = self.base_wealth
        else:
            a, b = self.scales(eps, tau)
            sd, sv = self._state_term[idx]
            p_term, q_term = self._wealth_term[idx]
            x_T = self.base_wealth[:, -1] + a * p_term + b * q_term
            s_T = self.base_states[:, -1, :] + a * sd + b * sv
            wealth = None
        total = self.cost.f(x_T, self.cost.claim(s_T))
        if self.has_running:
            if wealth is None:
                wealth = self.base_wealth + self.wealth_deltas(idx, eps, tau)
            for k in range(grid.n_steps):
                total = total + self.cost.g(grid.times[k], wealth[:, k],
                                            self.controls[:, k, :]) * dt
        return total

    def objective(self, idx, eps=0.0, tau=1.0):
        vals = self.per_path_objective(idx, eps, tau)
        n = vals.shape[0]
        se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return float(vals.mean()), se

    def max_over_candidates(self, eps: float, taus: Sequence[float] = _DEFAULT_TAUS):
        """Max of the CRN objective over directions and radial scales (incl. baseline)."""
        best = self.objective(None)
        best_label = ("baseline", 0.0)
        for i, direction in enumerate(self.directions):
            for tau in taus:
                mean, se = self.objective(i, eps, tau)
                if mean > best[0]:
                    best = (mean, se)
                    best_label = (direction.label or ("direction-%d" % i), tau)
        return best[0], best[1], best_label


@dataclass(frozen=True)
class WorstCaseResult:
    value: float
    se: float
    argmax_label: str
    argmax_tau: float


def worst_case_value(model, cost, strategy: Strategy, eps: float,
                     directions: Sequence[PerturbationDirection], sim: SimulationConfig,
                     spec: RobustnessSpec, x0: float = 0.0,
                     taus: Sequence[float] = _DEFAULT_TAUS,
                     evaluator: Optional[PerturbedEvaluator] = None,
                     controls: Optional[np.ndarray] = None) -> WorstCaseResult:
    """Lower-bound estimate of the worst-case value at a fixed strategy.

    Maximizes the CRN objective over the supplied unit directions and the
    radial scale; reported as a lower bound of the true sup over the ball.
    """
    if evaluator is None:
        grid = TimeGrid(n_steps=sim.n_steps, horizon=model.horizon)
        batch = sample_brownian(grid, n_paths=sim.n_paths, seed=sim.seed, d=model.d)
        base = simulate_state(model, batch)
        evaluator = PerturbedEvaluator(cost, batch, base.states, directions, spec)
        controlled = simulate_wealth(strategy, base, batch, x0)
        controls = controlled.controls
    if controls is not None:
        evaluator.set_controls(controls, x0)
    value, se, (label, tau) = evaluator.max_over_candidates(eps, taus)
    return WorstCaseResult(value=value, se=se, argmax_label=label, argmax_tau=tau)


@dataclass(frozen=True)
class PairingCheck:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    @property
    def combined_se(self) -> float:
        return float(np.sqrt(self.lhs_se ** 2 + self.rhs_se ** 2))

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def pairing_identity_check(model, cost, strategy: Strategy, sol: BsdeSolution,
                           direction: PerturbationDirection, eps: float,
                           sim: SimulationConfig, spec: RobustnessSpec, x0: float = 0.0,
                           evaluator: Optional[PerturbedEvaluator] = None,
                           controls: Optional[np.ndarray] = None) -> PairingCheck:
    """Both sides of the linear-pairing identity with standard errors.

    lhs: E[int R (X_pert - X) dt + A (X_pert_T - X_T) + B . (S_pert_T - S_T)]
    rhs: eps gamma <phi, drift_dir> + eps eta <psi, vol_dir>, assembled from
    the BSDE solution on the same paths (common random numbers).
    """
    if evaluator is None:
        grid = TimeGrid(n_steps=sim.n_steps, horizon=model.horizon)
        batch = sample_brownian(grid, n_paths=sim.n_paths, seed=sim.seed, d=model.d)
        base = simulate_state(model, batch)
        evaluator = PerturbedEvaluator(cost, batch, base.states, [direction], spec)
        controlled = simulate_wealth(strategy, base, batch, x0)
        controls = controlled.controls
        evaluator.set_controls(controls, x0)
        idx = 0
    else:
        if controls is not None:
            evaluator.set_controls(controls, x0)
        controls = evaluator.controls
        idx = next(i for i, d in enumerate(evaluator.directions) if d is direction)
    grid = evaluator.grid
    dt = grid.dt
    data = sol.data
    dx = evaluator.wealth_deltas(idx, eps, 1.0)
    ds = evaluator.state_deltas(idx, eps, 1.0)
    lhs_vals = np.einsum("nk,nk->n", data.r, dx[:, :-1]) * dt
    lhs_vals += data.a * dx[:, -1]
    lhs_vals += np.einsum("ni,ni->n", data.b, ds[:, -1, :])

    phi, psi = sensitivity_processes(sol, controls)
    a_scale, b_scale = evaluator.scales(eps, 1.0)
    rhs_vals = np.zeros(lhs_vals.shape[0])
    if direction.drift is not None and a_scale != 0.0:
        rhs_vals += a_scale * np.einsum("nki,nki->n", phi, direction.drift) * dt
    if direction.vol is not None and b_scale != 0.0:
        rhs_vals += b_scale * np.einsum("nkij,nkij->n", psi, direction.vol) * dt

    n = lhs_vals.shape[0]
    lhs_se = float(lhs_vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    rhs_se = float(rhs_vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return PairingCheck(lhs=float(lhs_vals.mean()), lhs_se=lhs_se,
                        rhs=float(rhs_vals.mean()), rhs_se=rhs_se)


@dataclass(frozen=True)
class RobustValueResult:
    value: float
    se: float
    strategy: Strategy
    converged: bool
    bracket_low: float
    bracket_high: float


def robust_value(model, cost, template: Strategy, eps: float,
                 directions: Sequence[PerturbationDirection], sim: SimulationConfig,
                 opt: OptimizerConfig, spec: RobustnessSpec, x0: float = 0.0,
                 taus: Sequence[float] = _DEFAULT_TAUS,
                 evaluator: Optional[PerturbedEvaluator] = None) -> RobustValueResult:
    """Approximate robust value: minimize over theta the max over directions.

    The inner max is re-solved at every candidate theta; the warm-start theta
    is kept unless a strictly better iterate is found, so the returned value
    never exceeds the worst case at the template parameters.
    """
    if evaluator is None:
        grid = TimeGrid(n_steps=sim.n_steps, horizon=model.horizon)
        batch = sample_brownian(grid, n_paths=sim.n_paths, seed=sim.seed, d=model.d)
        base = simulate_state(model, batch)
        evaluator = PerturbedEvaluator(cost, batch, base.states, directions, spec)
    base_paths = PathBatch(grid=evaluator.grid, states=evaluator.base_states)

    def inner_max(theta):
        candidate = template.with_theta(theta)
        controlled = simulate_wealth(candidate, base_paths, None, x0)
        evaluator.set_controls(controlled.controls, x0)
        return evaluator.max_over_candidates(eps, taus)[0]

    warm_value = inner_max(template.theta)
    result = minimize_crn(inner_max, template.theta, opt)
    if result.value <= warm_value:
        theta = result.theta
    else:
        theta = template.theta
    best = template.with_theta(theta)
    controlled = simulate_wealth(best, base_paths, None, x0)
    evaluator.set_controls(controlled.controls, x0)
    value, se, _ = evaluator.max_over_candidates(eps, taus)
    return RobustValueResult(value=value, se=se, strategy=best, converged=result.converged,
                             bracket_low=value, bracket_high=warm_value)


@dataclass(frozen=True)
class EpsRow:
    eps: float
    v_hat: float
    v_se: float
    vstar_hat: float
    vstar_se: float

    @property
    def gap(self) -> float:
        return self.vstar_hat - self.v_hat

    @property
    def gap_over_eps2(self) -> float:
        return self.gap / self.eps ** 2


@dataclass(frozen=True)
class SensitivityReport:
    """Full expansion verification: V(0), V'(0), per-eps sweep and the fit."""

    v0: float
    v0_se: float
    vprime: float
    vprime_se: float
    drift_term: float
    vol_term: float
    rows: tuple
    slope: float
    slope_se: float
    quad_coeff: float
    seed: int
    baseline_converged: bool
    foc_residual: float = float("nan")
    bsde_residual_energy: float = float("nan")
    config_hash: str = ""
    theta: tuple = ()

    @property
    def gaps_over_eps2(self) -> tuple:
        return tuple(row.gap_over_eps2 for row in self.rows)

    def to_dict(self) -> dict:
        return {
            "v0": self.v0, "v0_se": self.v0_se,
            "vprime": self.vprime, "vprime_se": self.vprime_se,
            "drift_term": self.drift_term, "vol_term": self.vol_term,
            "slope": self.slope, "slope_se": self.slope_se,
            "quad_coeff": self.quad_coeff,
            "rows": [{"epsilon": r.eps, "v_hat": r.v_hat, "v_se": r.v_se,
                      "vstar_hat": r.vstar_hat, "vstar_se": r.vstar_se,
                      "gap": r.gap, "gap_over_eps2": r.gap_over_eps2}
                     for r in self.rows],
            "seed": self.seed,
            "baseline_converged": self.baseline_converged,
            "foc_residual": self.foc_residual,
            "bsde_residual_energy": self.bsde_residual_energy,
            "config_hash": self.config_hash,
            "theta": list(self.theta),
        }


def fit_expansion(eps_values, losses):
    """Least-squares fit of loss = a eps + c eps^2; returns (a, c, lsq_map_row)."""
    eps_values = np.asarray(eps_values, dtype=float)
    design = np.stack([eps_values, eps_values ** 2], axis=1)
    gram = design.T @ design
    coef = np.linalg.solve(gram, design.T @ np.asarray(losses, dtype=float))
    # row of the linear map losses -> slope, for SE propagation
    solve_map = np.linalg.solve(gram, design.T)
    return float(coef[0]), float(coef[1]), solve_map[0]


def expansion_report(model, cost, template: Strategy, spec: RobustnessSpec,
                     sim: SimulationConfig, opt: Optional[OptimizerConfig] = None,
                     x0: float = 0.0, n_random_directions: int = 4,
                     taus: Sequence[float] = _DEFAULT_TAUS,
                     basis: Optional[PolynomialBasis] = None,
                     baseline: Optional[BaselineResult] = None) -> SensitivityReport:
    """Run the full pipeline: baseline, BSDEs, V'(0), per-eps sweep and the fit.

    Requires an epsilon grid with at least 4 points spanning a factor >= 4.
    """
    eps_grid = spec.epsilons
    if len(eps_grid) < 4 or eps_grid[-1] < 4.0 * eps_grid[0]:
        raise ConfigurationError("epsilon grid needs >= 4 points spanning a factor >= 4")
    opt = opt or OptimizerConfig()
    grid = TimeGrid(n_steps=sim.n_steps, horizon=model.horizon)
    batch = sample_brownian(grid, n_paths=sim.n_paths,
                            seed=split_seed(sim.seed, "brownian"), d=model.d)
    if baseline is None:
        baseline = solve_baseline(model, cost, template, sim, opt, x0=x0, batch=batch)
    sol = solve_bsde(cost, baseline.paths, batch, basis)
    fos = first_order_sensitivity(sol, baseline.paths.controls, spec, grid.dt)
    adv = adversarial_direction(sol, baseline.paths.controls, spec, grid.dt)
    directions = [adv] + random_directions(batch, spec, n_random_directions,
                                           split_seed(sim.seed, "directions"))
    evaluator = PerturbedEvaluator(cost, batch, baseline.paths.states, directions, spec)

    rows = []
    for eps in eps_grid:
        evaluator.set_controls(baseline.paths.controls, x0)
        star_value, star_se, _ = evaluator.max_over_candidates(eps, taus)
        rob = robust_value(model, cost, baseline.strategy, eps, directions, sim, opt,
                           spec, x0=x0, taus=taus, evaluator=evaluator)
        rows.append(EpsRow(eps=eps, v_hat=rob.value, v_se=rob.se,
                           vstar_hat=star_value, vstar_se=star_se))

    losses = [row.v_hat - baseline.v0 for row in rows]
    slope, quad, slope_map = fit_expansion(eps_grid, losses)
    slope_se = float(np.sqrt(np.sum(slope_map ** 2 * np.array([r.v_se for r in rows]) ** 2)))
    energy = float(np.mean(sol.scalar_diagnostics.increment_energy))
    return SensitivityReport(v0=baseline.v0, v0_se=baseline.v0_se,
                             vprime=fos.value, vprime_se=fos.se,
                             drift_term=fos.drift_term, vol_term=fos.vol_term,
                             rows=tuple(rows), slope=slope, slope_se=slope_se,
                             quad_coeff=quad, seed=sim.seed,
                             baseline_converged=baseline.converged,
                             bsde_residual_energy=energy,
                             theta=tuple(float(v) for v in baseline.strategy.theta))
