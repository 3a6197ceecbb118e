"""Path generation and Monte Carlo estimators.

Simulation uses a uniform grid with Euler-Maruyama stepping and left-endpoint
coefficient evaluation (integrands stay predictable). A perturbed model is the
baseline coefficient *process* plus an exogenous perturbation process: the
baseline coefficients are evaluated along the baseline path and frozen, so a
perturbed path equals the baseline path plus a correction that is exactly
linear in the perturbation scale, and both share the Brownian increments
(common random numbers).

All estimators report standard errors alongside point estimates; products are
computed with einsum so results do not depend on BLAS thread count.
"""

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .market_model import MarketModel, SimulationError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition 0 = t_0 < ... < t_N = T."""

    n_steps: int
    horizon: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)


@dataclass(frozen=True)
class BrownianBatch:
    """i.i.d. Gaussian increments with variance dt per coordinate, (n_paths, N, d)."""

    grid: TimeGrid
    increments: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def d(self) -> int:
        return self.increments.shape[2]

    def brownian_paths(self) -> np.ndarray:
        """W paths (n_paths, N+1, d) started at zero."""
        n, N, d = self.increments.shape
        w = np.zeros((n, N + 1, d))
        np.cumsum(self.increments, axis=1, out=w[:, 1:, :])
        return w


def sample_brownian(grid: TimeGrid, n_paths: int, seed: int, d: int = 1) -> BrownianBatch:
    """Draw a Brownian increment batch; bit-identical regeneration for equal seeds."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    rng = np.random.default_rng(seed)
    dw = rng.standard_normal((n_paths, grid.n_steps, d)) * np.sqrt(grid.dt)
    return BrownianBatch(grid=grid, increments=dw, seed=int(seed))


@dataclass(frozen=True)
class Perturbation:
    """Exogenous coefficient perturbation: arrays are per-path per-step processes.

    The perturbed model is drift + drift_scale * drift_dir and
    vol + vol_scale * vol_dir; direction arrays live on the same Brownian batch
    as the baseline paths (common random numbers). Either array may be None.
    """

    drift_dir: Optional[np.ndarray] = None   # (n_paths, N, d)
    vol_dir: Optional[np.ndarray] = None     # (n_paths, N, d, d)
    drift_scale: float = 0.0
    vol_scale: float = 0.0
    label: str = ""


@dataclass(frozen=True)
class Provenance:
    model_id: str = ""
    perturbation_id: str = ""
    strategy_id: str = ""
    seed: Optional[int] = None


@dataclass(frozen=True)
class PathBatch:
    """Simulated state paths plus optional wealth and control paths."""

    grid: TimeGrid
    states: np.ndarray                      # (n_paths, N+1, d)
    wealth: Optional[np.ndarray] = None     # (n_paths, N+1)
    controls: Optional[np.ndarray] = None   # (n_paths, N, d)
    provenance: Provenance = field(default_factory=Provenance)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]


def simulate_state(model: MarketModel, batch: BrownianBatch,
                   perturbation: Optional[Perturbation] = None) -> PathBatch:
    """Euler-Maruyama state paths, optionally under a perturbed coefficient process.

    Baseline coefficients are evaluated at the left endpoint of each cell along
    the baseline path. With a perturbation the returned paths equal the
    baseline plus the exactly-linear correction; zero scales reproduce the
    baseline bit for bit.
    """
    grid = batch.grid
    n, n_steps, d = batch.increments.shape
    if d != model.d:
        raise ValueError("shape error: batch dimension %d != model dimension %d" % (d, model.d))
    dt = grid.dt
    times = grid.times
    states = np.empty((n, n_steps + 1, d))
    states[:, 0, :] = model.s0
    for k in range(n_steps):
        s_k = states[:, k, :]
        b = model.drift_at(times[k], s_k)
        sig = model.vol_at(times[k], s_k)
        if not np.all(np.isfinite(b)):
            raise SimulationError("drift produced non-finite values at step %d" % k)
        if not np.all(np.isfinite(sig)):
            raise SimulationError("volatility produced non-finite values at step %d" % k)
        states[:, k + 1, :] = s_k + b * dt + np.einsum("nij,nj->ni", sig, batch.increments[:, k, :])
        if not np.all(np.isfinite(states[:, k + 1, :])):
            bad = np.argwhere(~np.isfinite(states[:, k + 1, :]))[0]
            raise SimulationError("state overflow at path %d, step %d" % (bad[0], k + 1))

    if perturbation is not None:
        delta = state_correction(batch, perturbation)
        states = states + delta
        if not np.all(np.isfinite(states)):
            raise SimulationError("state overflow in perturbed paths")
    return PathBatch(grid=grid, states=states,
                     provenance=Provenance(seed=batch.seed,
                                           perturbation_id=perturbation.label if perturbation else ""))


def state_correction(batch: BrownianBatch, perturbation: Perturbation) -> np.ndarray:
    """Cumulative path correction (n, N+1, d) induced by a perturbation process."""
    n, n_steps, d = batch.increments.shape
    delta = np.zeros((n, n_steps + 1, d))
    if perturbation.drift_dir is not None and perturbation.drift_scale != 0.0:
        inc = perturbation.drift_scale * perturbation.drift_dir * batch.grid.dt
        np.cumsum(inc, axis=1, out=delta[:, 1:, :])
    if perturbation.vol_dir is not None and perturbation.vol_scale != 0.0:
        inc = perturbation.vol_scale * np.einsum("nkij,nkj->nki", perturbation.vol_dir,
                                                 batch.increments)
        delta[:, 1:, :] += np.cumsum(inc, axis=1)
    return delta


def simulate_wealth(strategy, paths: PathBatch, batch: Optional[BrownianBatch],
                    x0: float) -> PathBatch:
    """Controlled wealth X_{k+1} = X_k + H_k^T (S_{k+1} - S_k), H_k evaluated first.

    H_k = strategy(t_k, X_k, S_k) uses the left endpoint (predictability); the
    control paths are stored and satisfy the strategy's constraint bound.
    ``batch`` is only used for an alignment check and may be None.
    """
    if batch is not None and (paths.states.shape[0] != batch.n_paths
                              or paths.states.shape[1] != batch.grid.n_steps + 1):
        raise ValueError("shape error: paths and batch are misaligned")
    grid = paths.grid
    n, n_steps1, d = paths.states.shape
    n_steps = n_steps1 - 1
    times = grid.times
    wealth = np.empty((n, n_steps + 1))
    wealth[:, 0] = x0
    controls = np.empty((n, n_steps, d))
    for k in range(n_steps):
        h = strategy.evaluate(times[k], wealth[:, k], paths.states[:, k, :])
        controls[:, k, :] = h
        ds = paths.states[:, k + 1, :] - paths.states[:, k, :]
        wealth[:, k + 1] = wealth[:, k] + np.einsum("ni,ni->n", h, ds)
    return PathBatch(grid=grid, states=paths.states, wealth=wealth, controls=controls,
                     provenance=paths.provenance)


def wealth_from_controls(paths: PathBatch, controls: np.ndarray, x0: float) -> PathBatch:
    """Wealth for a frozen control process (the same H paths under any model)."""
    n, n_steps1, d = paths.states.shape
    if controls.shape != (n, n_steps1 - 1, d):
        raise ValueError("shape error: controls %r incompatible with states %r"
                         % (controls.shape, paths.states.shape))
    ds = np.diff(paths.states, axis=1)
    gains = np.einsum("nki,nki->nk", controls, ds)
    wealth = np.empty((n, n_steps1))
    wealth[:, 0] = x0
    np.cumsum(gains, axis=1, out=wealth[:, 1:])
    wealth[:, 1:] += x0
    return PathBatch(grid=paths.grid, states=paths.states, wealth=wealth, controls=controls,
                     provenance=paths.provenance)


def objective_per_path(cost, paths: PathBatch) -> np.ndarray:
    """Pathwise cost sum_k g(t_k, X_k, H_k) dt + f(X_N, l(S_N))."""
    if paths.wealth is None or paths.controls is None:
        raise ValueError("wealth and control paths are required")
    grid = paths.grid
    dt = grid.dt
    times = grid.times
    total = np.zeros(paths.n_paths)
    for k in range(grid.n_steps):
        total += cost.g(times[k], paths.wealth[:, k], paths.controls[:, k, :]) * dt
    y = cost.claim(paths.states[:, -1, :])
    total += cost.f(paths.wealth[:, -1], y)
    return total


def estimate_objective(cost, paths: PathBatch):
    """Monte Carlo mean and standard error of the control objective."""
    values = objective_per_path(cost, paths)
    n = values.shape[0]
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


@dataclass(frozen=True)
class NormEstimate:
    """Monte Carlo estimate of a process norm.

    ``value`` is the norm, ``power_mean``/``power_se`` describe the MC mean of
    the norm's p-th power (the statistic with a plain CLT).
    """

    value: float
    power_mean: float
    power_se: float
    exponent: float

    @property
    def se(self) -> float:
        """Delta-method standard error of the norm itself."""
        if self.power_mean <= 0.0:
            return 0.0
        return self.value * self.power_se / (self.exponent * self.power_mean)


def _per_path_stats(per_path: np.ndarray, p: float) -> NormEstimate:
    n = per_path.shape[0]
    mean = float(per_path.mean())
    se = float(per_path.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    value = mean ** (1.0 / p) if mean > 0 else 0.0
    return NormEstimate(value=value, power_mean=mean, power_se=se, exponent=p)


def lp_norm_per_path(arr: np.ndarray, p: float, dt: float) -> np.ndarray:
    """Pathwise sum_k |v_k|^p dt for a vector process (n, N, d) or scalar (n, N)."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    mag = np.linalg.norm(arr, axis=-1)
    return np.sum(mag ** p, axis=1) * dt


def lp_norm(arr: np.ndarray, p: float, dt: float) -> NormEstimate:
    """Estimate of the time-integral p-norm E[int |v_t|^p dt]^(1/p)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return _per_path_stats(lp_norm_per_path(arr, p, dt), p)


def hp_norm_per_path(arr: np.ndarray, p: float, dt: float) -> np.ndarray:
    """Pathwise (sum_k ||m_k||_F^2 dt)^(p/2) for a matrix process (n, N, d, d)."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None, None]
    energy = np.sum(arr ** 2, axis=(-2, -1)).sum(axis=1) * dt
    return energy ** (p / 2.0)


def hp_norm(arr: np.ndarray, p: float, dt: float) -> NormEstimate:
    """Estimate of the mixed norm E[(int ||m_t||_F^2 dt)^(p/2)]^(1/p)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return _per_path_stats(hp_norm_per_path(arr, p, dt), p)


def sup_norm_p(arr: np.ndarray, p: float) -> NormEstimate:
    """Estimate of E[sup_k |v_k|^p]^(1/p); the grid sup is biased low vs continuous time."""
    if p < 1:
        raise ValueError("p must be >= 1")
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    per_path = np.max(np.linalg.norm(arr, axis=-1), axis=1) ** p
    return _per_path_stats(per_path, p)


def bdg_constant(p: float) -> float:
    """Admissible constant in E[sup_t |M_t|^p] <= C E[<M>_T^(p/2)], continuous scalar M.

    Doob's L^p inequality combined with Ito's formula on |M|^p gives the
    admissible choice C = (p^(p+1) / (2 (p-1)^(p-1)))^(p/2) for p >= 2. Only
    the inequality direction matters; the constant is not sharp.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    return (p ** (p + 1) / (2.0 * (p - 1) ** (p - 1))) ** (p / 2.0)


def wealth_deviation_bound(p: float, bound_k: float, horizon: float) -> float:
    """Constant C_1 = 2^p K^p (T^(p-1) + C_BDG,p) bounding E[sup|X_pert - X|^p] / eps^p."""
    return 2.0 ** p * bound_k ** p * (horizon ** (p - 1) + bdg_constant(p))


def state_deviation_bound(p: float, horizon: float, d: int) -> float:
    """Constant C_2 = 2^p (T^(p-1) + d^(p/2) C_BDG,p) bounding E[sup|S_pert - S|^p] / eps^p.

    The d^(p/2) factor reduces the vector sup to coordinatewise scalar BDG
    bounds; for d = 1 this is the plain scalar constant.
    """
    return 2.0 ** p * (horizon ** (p - 1) + d ** (p / 2.0) * bdg_constant(p))


_DUMP_MAGIC = b"RSNS"
_DUMP_VERSION = 1


def write_path_dump(path, arr: np.ndarray, seed: int) -> None:
    """Binary path dump: header (magic, version u32, n_paths u64, N u32, d u32,
    seed u64) followed by little-endian f64 values in path-major order."""
    arr = np.asarray(arr, dtype="<f8")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    n_paths, n_steps, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIQIIQ", _DUMP_MAGIC, _DUMP_VERSION,
                             n_paths, n_steps, d, int(seed) & (2 ** 64 - 1)))
        fh.write(arr.tobytes(order="C"))


def read_path_dump(path):
    """Read a binary path dump; returns (array (n_paths, N, d), seed)."""
    header_size = struct.calcsize("<4sIQIIQ")
    with open(path, "rb") as fh:
        magic, version, n_paths, n_steps, d, seed = struct.unpack("<4sIQIIQ", fh.read(header_size))
        if magic != _DUMP_MAGIC:
            raise ValueError("not a path dump file (bad magic)")
        if version != _DUMP_VERSION:
            raise ValueError("unsupported path dump version %d" % version)
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(n_paths, n_steps, d)
    return data.copy(), seed
