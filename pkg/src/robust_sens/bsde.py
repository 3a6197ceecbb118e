"""Regression Monte Carlo solver for the sensitivity BSDEs.

The scalar equation has terminal value A = d/dx f(X_T, l(S_T)) and generator
R_t = d/dx g(t, X_t, H_t); the d-dimensional one has terminal value
B = d/dy f(X_T, l(S_T)) * grad l(S_T) and zero generator. Both are solved
through their conditional-expectation representations: at each grid time the
forward target (terminal value plus remaining running term) is regressed on
basis functions of (X_k, S_k), and the martingale integrand is recovered by
regressing target * dW_k / dt, the discrete density of the covariation with W.

The orthogonal martingale parts are not solved for; the solver records the
one-step increment residuals delta_k = Y_{k+1} - Y_k + R_k dt - Z_k.dW_k as
their diagnostic proxy (second moments and correlation with dW).
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .simulation import BrownianBatch, PathBatch


@dataclass(frozen=True)
class TerminalData:
    """Pathwise BSDE data: scalar terminal a, running r per step, vector terminal b."""

    a: np.ndarray          # (n_paths,)
    r: np.ndarray          # (n_paths, N)
    b: np.ndarray          # (n_paths, d)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.r))
                and np.all(np.isfinite(self.b))):
            raise ValueError("terminal data contains non-finite values")
        n = self.a.shape[0]
        if self.r.shape[0] != n or self.b.shape[0] != n:
            raise ValueError("shape error: terminal data fields are misaligned")


def terminal_data(cost, paths: PathBatch) -> TerminalData:
    """Evaluate the BSDE terminal/running data along a controlled path batch."""
    if paths.wealth is None or paths.controls is None:
        raise ValueError("wealth and control paths are required")
    grid = paths.grid
    x_T = paths.wealth[:, -1]
    s_T = paths.states[:, -1, :]
    y = cost.claim(s_T)
    fg = cost.f_grad(x_T, y)
    a = fg[:, 0]
    b = fg[:, 1][:, None] * cost.l_grad(s_T)
    r = np.empty((paths.n_paths, grid.n_steps))
    for k in range(grid.n_steps):
        r[:, k] = cost.g_grad(grid.times[k], paths.wealth[:, k], paths.controls[:, k, :])[:, 0]
    return TerminalData(a=a, r=r, b=b)


class PolynomialBasis:
    """Per-slice polynomial regression basis in (x, s) up to the given degree."""

    def __init__(self, degree: int = 2, include_wealth: bool = True):
        if degree < 0:
            raise ValueError("degree must be >= 0")
        self.degree = degree
        self.include_wealth = include_wealth

    def design(self, x, s) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        s = np.atleast_2d(np.asarray(s, dtype=float))
        n, d = s.shape
        cols = [np.ones(n)]
        if self.degree >= 1:
            if self.include_wealth:
                cols.append(x)
            cols.extend(s[:, i] for i in range(d))
        if self.degree >= 2:
            if self.include_wealth:
                cols.append(x * x)
                cols.extend(x * s[:, i] for i in range(d))
            for i in range(d):
                for j in range(i, d):
                    cols.append(s[:, i] * s[:, j])
        return np.stack(cols, axis=1)

    def describe(self) -> str:
        return "poly(degree=%d, wealth=%s)" % (self.degree, self.include_wealth)


_RIDGE_FACTOR = 1e-8


def regress_slice(design: np.ndarray, targets: np.ndarray):
    """Least-squares fit of one time slice, multiple targets at once.

    Columns are centered/scaled per slice and near-constant duplicates of the
    intercept are dropped, so degenerate slices (t = 0) reduce to the sample
    mean. On remaining rank deficiency a ridge with
    lambda = 1e-8 * trace(Gram) / n_columns is applied and flagged.

    Returns (fitted (n, m), used_ridge bool). Gram products use einsum, which
    keeps results independent of BLAS threading.
    """
    targets = np.asarray(targets, dtype=float)
    squeeze = targets.ndim == 1
    if squeeze:
        targets = targets[:, None]
    n = design.shape[0]
    mu = design.mean(axis=0)
    sd = design.std(axis=0)
    keep = sd > 1e-12 * (1.0 + np.abs(mu))
    keep[0] = False  # intercept handled via centering
    z = (design[:, keep] - mu[keep]) / sd[keep]
    t_mu = targets.mean(axis=0)
    tc = targets - t_mu
    if z.shape[1] == 0:
        fitted = np.broadcast_to(t_mu, targets.shape).copy()
        return (fitted[:, 0] if squeeze else fitted), False
    gram = np.einsum("ni,nj->ij", z, z) / n
    rhs = np.einsum("ni,nm->im", z, tc) / n
    used_ridge = False
    try:
        beta = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(beta)):
            raise np.linalg.LinAlgError
        # treat badly conditioned systems as rank deficient
        if np.linalg.cond(gram) > 1e12:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        lam = _RIDGE_FACTOR * np.trace(gram) / gram.shape[0]
        beta = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), rhs)
        used_ridge = True
    fitted = t_mu + np.einsum("ni,im->nm", z, beta)
    return (fitted[:, 0] if squeeze else fitted), used_ridge


@dataclass(frozen=True)
class BsdeDiagnostics:
    """Per-step second moments and orthogonality traces of the increment residuals."""

    lsq_residual: np.ndarray        # (N,) projection residual second moments
    increment_energy: np.ndarray    # (N,) E[delta_k^2], proxy for the orthogonal part
    increment_dw_corr: np.ndarray   # (N, d) corr(delta_k, dW_k^j)
    ridge_steps: tuple


def _increment_diagnostics(y, z, r, dw, dt):
    """delta_k = Y_{k+1} - Y_k + R_k dt - Z_k . dW_k, energies and dW correlations."""
    n, n_steps, d = dw.shape
    energy = np.empty(n_steps)
    lsq = np.zeros(n_steps)
    corr = np.empty((n_steps, d))
    for k in range(n_steps):
        delta = y[:, k + 1] - y[:, k] + r[:, k] * dt - np.einsum("nj,nj->n", z[:, k, :], dw[:, k, :])
        energy[k] = float(np.mean(delta ** 2))
        sd_d = delta.std()
        for j in range(d):
            sd_w = dw[:, k, j].std()
            if sd_d > 0 and sd_w > 0:
                corr[k, j] = float(np.mean((delta - delta.mean()) * (dw[:, k, j] - dw[:, k, j].mean()))
                                   / (sd_d * sd_w))
            else:
                corr[k, j] = 0.0
    return lsq, energy, corr


@dataclass(frozen=True)
class ScalarBsdeResult:
    y: np.ndarray            # (n, N+1)
    z: np.ndarray            # (n, N, d)
    diagnostics: BsdeDiagnostics


@dataclass(frozen=True)
class VectorBsdeResult:
    y: np.ndarray            # (n, N+1, d)
    z: np.ndarray            # (n, N, d, d), row i regressed from component i
    diagnostics: tuple       # one BsdeDiagnostics per component


def solve_scalar_bsde(data: TerminalData, paths: PathBatch, batch: BrownianBatch,
                      basis: Optional[PolynomialBasis] = None) -> ScalarBsdeResult:
    """Backward regression pass for the scalar pair (Y, Z).

    Y_k regresses the forward target A + sum_{j>=k} R_j dt on the slice basis;
    Z_k regresses target * dW_k / dt, the discrete covariation density.
    """
    basis = basis or PolynomialBasis()
    grid = paths.grid
    n, n_steps, d = batch.increments.shape
    dt = grid.dt
    y = np.empty((n, n_steps + 1))
    z = np.empty((n, n_steps, d))
    y[:, n_steps] = data.a
    # suffix sums of the running term, target_k = A + sum_{j >= k} R_j dt
    suffix = np.zeros(n)
    targets = np.empty((n, n_steps))
    for k in range(n_steps - 1, -1, -1):
        suffix = suffix + data.r[:, k] * dt
        targets[:, k] = data.a + suffix
    lsq = np.empty(n_steps)
    ridge_steps = []
    for k in range(n_steps):
        design = basis.design(paths.wealth[:, k], paths.states[:, k, :])
        rhs = np.concatenate([targets[:, k][:, None],
                              targets[:, k][:, None] * batch.increments[:, k, :] / dt], axis=1)
        fitted, used_ridge = regress_slice(design, rhs)
        y[:, k] = fitted[:, 0]
        z[:, k, :] = fitted[:, 1:]
        lsq[k] = float(np.mean((targets[:, k] - y[:, k]) ** 2))
        if used_ridge:
            ridge_steps.append(k)
    _, energy, corr = _increment_diagnostics(y, z, data.r, batch.increments, dt)
    diag = BsdeDiagnostics(lsq_residual=lsq, increment_energy=energy,
                           increment_dw_corr=corr, ridge_steps=tuple(ridge_steps))
    return ScalarBsdeResult(y=y, z=z, diagnostics=diag)


def solve_vector_bsde(data: TerminalData, paths: PathBatch, batch: BrownianBatch,
                      basis: Optional[PolynomialBasis] = None) -> VectorBsdeResult:
    """Componentwise regression pass for the d-dimensional pair (Y, Z)."""
    basis = basis or PolynomialBasis()
    grid = paths.grid
    n, n_steps, d = batch.increments.shape
    dt = grid.dt
    y = np.empty((n, n_steps + 1, d))
    z = np.empty((n, n_steps, d, d))
    y[:, n_steps, :] = data.b
    lsq = np.zeros((d, n_steps))
    ridge = [[] for _ in range(d)]
    for k in range(n_steps):
        design = basis.design(paths.wealth[:, k], paths.states[:, k, :])
        rhs_cols = [data.b]
        for j in range(d):
            rhs_cols.append(data.b * batch.increments[:, k, j][:, None] / dt)
        fitted, used_ridge = regress_slice(design, np.concatenate(rhs_cols, axis=1))
        y[:, k, :] = fitted[:, :d]
        for j in range(d):
            z[:, k, :, j] = fitted[:, (j + 1) * d:(j + 2) * d]
        for i in range(d):
            lsq[i, k] = float(np.mean((data.b[:, i] - y[:, k, i]) ** 2))
            if used_ridge:
                ridge[i].append(k)
    zero_r = np.zeros((n, n_steps))
    diags = []
    for i in range(d):
        _, energy, corr = _increment_diagnostics(y[:, :, i], z[:, :, i, :], zero_r,
                                                 batch.increments, dt)
        diags.append(BsdeDiagnostics(lsq_residual=lsq[i], increment_energy=energy,
                                     increment_dw_corr=corr, ridge_steps=tuple(ridge[i])))
    return VectorBsdeResult(y=y, z=z, diagnostics=tuple(diags))


@dataclass(frozen=True)
class BsdeSolution:
    """Discrete-path BSDE fields for both equations plus diagnostics."""

    y: np.ndarray            # (n, N+1)
    z: np.ndarray            # (n, N, d)
    y_vec: np.ndarray        # (n, N+1, d)
    z_vec: np.ndarray        # (n, N, d, d)
    data: TerminalData
    scalar_diagnostics: BsdeDiagnostics
    vector_diagnostics: tuple
    basis_description: str

    @property
    def n_steps(self) -> int:
        return self.z.shape[1]

    def slice_summary(self, grid):
        """Rows (t, mean Y, mean |Z|, residual energy) for CSV export."""
        rows = []
        for k in range(self.n_steps):
            rows.append((grid.times[k], float(self.y[:, k].mean()),
                         float(np.linalg.norm(self.z[:, k, :], axis=-1).mean()),
                         float(self.scalar_diagnostics.increment_energy[k])))
        return rows


def solve_bsde(cost, paths: PathBatch, batch: BrownianBatch,
               basis: Optional[PolynomialBasis] = None) -> BsdeSolution:
    """Terminal data plus both regression passes in one call."""
    basis = basis or PolynomialBasis()
    data = terminal_data(cost, paths)
    scalar = solve_scalar_bsde(data, paths, batch, basis)
    vector = solve_vector_bsde(data, paths, batch, basis)
    return BsdeSolution(y=scalar.y, z=scalar.z, y_vec=vector.y, z_vec=vector.z,
                        data=data, scalar_diagnostics=scalar.diagnostics,
                        vector_diagnostics=vector.diagnostics,
                        basis_description=basis.describe())


@dataclass(frozen=True)
class ValueFunction:
    """Candidate value function J(t, x, s) supplied through its derivatives."""

    dx: Callable     # (t, x, s) -> (n,)
    ds: Callable     # (t, x, s) -> (n, d)


def feynman_kac_reference(j: ValueFunction, model, paths: PathBatch) -> np.ndarray:
    """Closed-form martingale integrand vol^T (dJ/dx H + grad_s J), (n, N, d).

    Oracle mode for Markovian test cases where the conditional expectation is a
    known smooth function of (t, X, S).
    """
    if paths.controls is None:
        raise ValueError("control paths are required")
    grid = paths.grid
    n, n_steps1, d = paths.states.shape
    z = np.empty((n, n_steps1 - 1, d))
    for k in range(n_steps1 - 1):
        t = grid.times[k]
        s_k = paths.states[:, k, :]
        x_k = paths.wealth[:, k]
        sig = model.vol_at(t, s_k)
        inner = j.dx(t, x_k, s_k)[:, None] * paths.controls[:, k, :] + j.ds(t, x_k, s_k)
        z[:, k, :] = np.einsum("nji,nj->ni", sig, inner)
    return z
