"""Baseline market description, uncertainty/cost specifications and validation.

Coefficient conventions (all vectorized over a batch of n points):
    drift(t, s)      t: float, s: (n, d)  ->  (n, d)
    vol(t, s)        t: float, s: (n, d)  ->  (n, d, d)
    g(t, x, h)       x: (n,), h: (n, d)   ->  (n,)
    f(x, y)          x, y: (n,)           ->  (n,)
    l(s)             s: (n, d)            ->  (n,)
Gradients stack the wealth coordinate first: grad_g -> (n, 1+d) with column 0
the x-derivative, grad_f -> (n, 2) for (x, y).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ConfigurationError(ValueError):
    """A model/cost/constraint specification violates its contract."""


class SimulationError(RuntimeError):
    """Path generation produced non-finite values."""


class UnsupportedConfigurationError(ValueError):
    """An oracle or special-case routine was called outside its preconditions."""


def holder_conjugate(p: float) -> float:
    """Conjugate exponent q = p/(p-1) for the perturbation norm exponent p > 3."""
    if not p > 3:
        raise ConfigurationError("assumption p>3 violated: got p=%r" % p)
    return p / (p - 1.0)


def _state_fn(value, d, shape):
    """Normalize a constant or callable coefficient to a callable (t, s) -> array."""
    if callable(value):
        fn = value

        def wrapped(t, s):
            out = np.asarray(fn(t, s), dtype=float)
            target = (s.shape[0],) + shape
            return np.broadcast_to(out, target)

        return wrapped
    const = np.broadcast_to(np.asarray(value, dtype=float), shape).copy()

    def constant(t, s):
        return np.broadcast_to(const, (s.shape[0],) + shape)

    return constant


@dataclass(frozen=True)
class ConstraintSet:
    """Closed convex constraint correspondence for the control, ball or box valued.

    For ``kind="ball"`` supply ``center`` ((d,) array or callable of (t, s)) and
    ``radius`` (scalar or callable). For ``kind="box"`` supply coordinatewise
    ``lower`` and ``upper``. ``bound`` is the global sup of |v| over the set;
    it is computed for constant sets and must be given for callable ones.
    """

    kind: str
    d: int
    center: object = None
    radius: object = None
    lower: object = None
    upper: object = None
    bound: Optional[float] = None
    _center_fn: Callable = field(init=False, repr=False, default=None)
    _radius_fn: Callable = field(init=False, repr=False, default=None)
    _lower_fn: Callable = field(init=False, repr=False, default=None)
    _upper_fn: Callable = field(init=False, repr=False, default=None)

    def __post_init__(self):
        d = self.d
        if self.kind == "ball":
            if self.center is None or self.radius is None:
                raise ConfigurationError("ball constraint needs center and radius")
            object.__setattr__(self, "_center_fn", _state_fn(self.center, d, (d,)))
            object.__setattr__(self, "_radius_fn", _state_fn(self.radius, d, ()))
            if self.bound is None:
                if callable(self.center) or callable(self.radius):
                    raise ConfigurationError("bound K required for callable ball data")
                c = np.broadcast_to(np.asarray(self.center, float), (d,))
                r = float(self.radius)
                if r < 0:
                    raise ConfigurationError("ball radius must be >= 0")
                object.__setattr__(self, "bound", float(np.linalg.norm(c)) + r)
        elif self.kind == "box":
            if self.lower is None or self.upper is None:
                raise ConfigurationError("box constraint needs lower and upper")
            object.__setattr__(self, "_lower_fn", _state_fn(self.lower, d, (d,)))
            object.__setattr__(self, "_upper_fn", _state_fn(self.upper, d, (d,)))
            if self.bound is None:
                if callable(self.lower) or callable(self.upper):
                    raise ConfigurationError("bound K required for callable box data")
                lo = np.broadcast_to(np.asarray(self.lower, float), (d,))
                up = np.broadcast_to(np.asarray(self.upper, float), (d,))
                if np.any(lo > up):
                    raise ConfigurationError("box lower bound exceeds upper bound")
                corner = np.maximum(np.abs(lo), np.abs(up))
                object.__setattr__(self, "bound", float(np.linalg.norm(corner)))
        else:
            raise ConfigurationError("unknown constraint kind %r" % self.kind)
        if not np.isfinite(self.bound):
            raise ConfigurationError("constraint bound K must be finite")

    def project(self, t, state, v):
        """Euclidean projection of v ((n, d)) onto the set at (t, state)."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        state = np.atleast_2d(np.asarray(state, dtype=float))
        if self.kind == "ball":
            c = self._center_fn(t, state)
            r = self._radius_fn(t, state)
            dev = v - c
            dist = np.linalg.norm(dev, axis=-1)
            scale = np.ones_like(dist)
            outside = dist > r
            # radius 0 collapses the set to its center
            np.divide(r, dist, out=scale, where=outside)
            return c + dev * scale[:, None]
        lo = self._lower_fn(t, state)
        up = self._upper_fn(t, state)
        if np.any(lo > up):
            raise ConfigurationError("box lower bound exceeds upper bound")
        return np.clip(v, lo, up)

    def contains(self, t, state, v, tol=1e-12):
        proj = self.project(t, state, v)
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return np.linalg.norm(proj - v, axis=-1) <= tol * (1.0 + np.linalg.norm(v, axis=-1))


def project_constraint(constraint: ConstraintSet, t, state, v):
    """Module-level alias for :meth:`ConstraintSet.project`."""
    return constraint.project(t, state, v)


@dataclass(frozen=True)
class MarketModel:
    """Baseline Markovian market: dS = drift(t,S) dt + vol(t,S) dW, S_0 = s0.

    ``regularity`` is one of ``"bounded-elliptic"`` (with declared constants
    ``c_bound`` and ``ellipticity_floor``) or ``"lipschitz-sde-benes"`` (with
    ``c_lipschitz`` and ``c_benes``). The declaration is trusted; the
    validator only falsifies it on sampled points.
    """

    d: int
    s0: np.ndarray
    drift: Callable
    vol: Callable
    horizon: float
    regularity: str = "bounded-elliptic"
    c_bound: Optional[float] = None
    ellipticity_floor: Optional[float] = None
    c_lipschitz: Optional[float] = None
    c_benes: Optional[float] = None
    _drift_fn: Callable = field(init=False, repr=False, default=None)
    _vol_fn: Callable = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("dimension d must be >= 1")
        if not self.horizon > 0:
            raise ConfigurationError("horizon T must be positive")
        if self.regularity not in ("bounded-elliptic", "lipschitz-sde-benes"):
            raise ConfigurationError("unknown regularity declaration %r" % self.regularity)
        s0 = np.broadcast_to(np.asarray(self.s0, dtype=float), (self.d,)).copy()
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "_drift_fn", _state_fn(self.drift, self.d, (self.d,)))
        object.__setattr__(self, "_vol_fn", _state_fn(self.vol, self.d, (self.d, self.d)))

    def drift_at(self, t, s):
        return self._drift_fn(t, np.atleast_2d(s))

    def vol_at(self, t, s):
        return self._vol_fn(t, np.atleast_2d(s))


@dataclass(frozen=True)
class RobustnessSpec:
    """Uncertainty ball parameters: exponent p > 3, aversions gamma/eta, eps grid."""

    p: float
    gamma: float
    eta: float
    epsilons: tuple

    def __post_init__(self):
        holder_conjugate(self.p)
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.eta <= 1.0):
            # gamma, eta <= 1 is without loss of generality for small eps
            raise ConfigurationError("gamma and eta must lie in [0, 1]")
        eps = tuple(float(e) for e in self.epsilons)
        if any(e <= 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("epsilon grid must be strictly increasing and positive")
        object.__setattr__(self, "epsilons", eps)

    @property
    def q(self) -> float:
        return holder_conjugate(self.p)


@dataclass(frozen=True)
class CostSpec:
    """Running cost g, terminal cost f and claim map l with supplied derivatives.

    Derivatives are user supplied (no automatic differentiation); the
    validator cross-checks them against central finite differences.
    """

    g: Callable
    g_grad: Callable
    g_hess: Callable
    f: Callable
    f_grad: Callable
    f_hess: Callable
    l: Callable
    l_grad: Callable
    l_hess: Callable
    r_growth: float = 0.5
    c2_upper: float = 10.0
    c0_lower: float = 0.0
    c2_lower: float = 1e-8
    c_l: float = 10.0
    has_running_cost: bool = True

    def claim(self, s):
        return np.asarray(self.l(np.atleast_2d(s)), dtype=float)


def quadratic_hedge_cost(d: int, l=None, l_grad=None, l_hess=None) -> CostSpec:
    """Pure quadratic hedging cost: g = 0, f(x, y) = (x - y)^2, claim l (default identity).

    The identity default requires d = 1.
    """
    if l is None:
        if d != 1:
            raise ConfigurationError("identity claim requires d=1")
        l = lambda s: s[:, 0]
        l_grad = lambda s: np.ones((s.shape[0], 1))
        l_hess = lambda s: np.zeros((s.shape[0], 1, 1))

    def g(t, x, h):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g_grad(t, x, h):
        return np.zeros((np.asarray(x).shape[0], 1 + d))

    def g_hess(t, x, h):
        return np.zeros((np.asarray(x).shape[0], 1 + d, 1 + d))

    def f(x, y):
        return (x - y) ** 2

    def f_grad(x, y):
        return np.stack([2.0 * (x - y), -2.0 * (x - y)], axis=-1)

    def f_hess(x, y):
        n = np.asarray(x).shape[0]
        h = np.empty((n, 2, 2))
        h[:, 0, 0] = 2.0
        h[:, 0, 1] = -2.0
        h[:, 1, 0] = -2.0
        h[:, 1, 1] = 2.0
        return h

    return CostSpec(g=g, g_grad=g_grad, g_hess=g_hess, f=f, f_grad=f_grad,
                    f_hess=f_hess, l=l, l_grad=l_grad, l_hess=l_hess,
                    r_growth=0.5, c2_upper=4.0, c0_lower=0.0, c2_lower=2.0, c_l=2.0,
                    has_running_cost=False)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""

    def __str__(self):
        flag = "PASS" if self.passed else "FAIL"
        msg = "%-28s %s  margin=%.6g" % (self.name, flag, self.margin)
        if self.detail:
            msg += "  (%s)" % self.detail
        return msg


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    seed: int
    samples: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        return "\n".join(str(c) for c in self.checks)


_MARGIN_TOL = 1e-9


def _fd_gradient(fn, x, rel=1e-6):
    """Central finite-difference gradient of a vectorized scalar fn at points x (n, m)."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for j in range(x.shape[1]):
        h = rel * (1.0 + np.abs(x[:, j]))
        xp = x.copy()
        xm = x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        grad[:, j] = (fn(xp) - fn(xm)) / (2.0 * h)
    return grad


def validate_model(model: MarketModel, spec: RobustnessSpec, cost: CostSpec,
                   samples: int = 256, seed: int = 0) -> ValidationReport:
    """Falsify the declared regularity/convexity/growth conditions on sampled points.

    Simulates a small batch of baseline paths, samples (t, s, x, h, y) points
    from them and evaluates every declared inequality, reporting the worst
    observed margin per condition (margin >= 0 means satisfied).
    """
    from . import simulation
    from .simulation import TimeGrid, sample_brownian, simulate_state

    if samples < 1:
        raise ConfigurationError("samples must be a positive integer")
    rng = np.random.default_rng(seed)
    d = model.d
    n_steps = 32
    n_paths = max(8, -(-samples // n_steps))
    grid = TimeGrid(n_steps=n_steps, horizon=model.horizon)
    batch = sample_brownian(grid, n_paths=n_paths, seed=seed)
    paths = simulate_state(model, batch)

    # flatten (path, step) pairs and draw the requested number of sample points
    idx_path = rng.integers(0, n_paths, size=samples)
    idx_step = rng.integers(0, n_steps, size=samples)
    t_samples = grid.times[idx_step]
    s_samples = paths.states[idx_path, idx_step, :]

    scale = 1.0 + float(np.max(np.abs(model.s0)))
    y_base = cost.claim(s_samples)
    x_samples = y_base + scale * rng.standard_normal(samples)
    h_raw = rng.standard_normal((samples, d))
    h_samples = h_raw / np.maximum(1.0, np.linalg.norm(h_raw, axis=-1))[:, None]

    checks = []

    def add(name, margin, detail=""):
        checks.append(CheckResult(name, bool(margin >= -_MARGIN_TOL), float(margin), detail))

    # volatility invertibility on sampled (t, s)
    min_sv = np.inf
    max_cond = 0.0
    for k in range(n_steps):
        sig = model.vol_at(grid.times[k], paths.states[:, k, :])
        sv = np.linalg.svd(sig, compute_uv=False)
        min_sv = min(min_sv, float(sv[:, -1].min()))
        with np.errstate(divide="ignore"):
            max_cond = max(max_cond, float(np.max(sv[:, 0] / np.where(sv[:, -1] > 0, sv[:, -1], np.nan))
                                            if np.all(sv[:, -1] > 0) else np.inf))
    detail = "" if min_sv > 0 and max_cond < 1e12 else "singular volatility"
    add("volatility invertibility", min_sv - max(0.0, 1e-12 * max_cond if np.isfinite(max_cond) else 1.0), detail)

    bvals = np.concatenate([model.drift_at(grid.times[k], paths.states[:, k, :])
                            for k in range(n_steps)])
    svals = np.concatenate([model.vol_at(grid.times[k], paths.states[:, k, :])
                            for k in range(n_steps)])
    coeff_size = np.linalg.norm(bvals, axis=-1) + np.linalg.norm(svals, axis=(-2, -1))

    if model.regularity == "bounded-elliptic":
        if model.c_bound is None or model.ellipticity_floor is None:
            raise ConfigurationError("bounded-elliptic declaration needs c_bound and ellipticity_floor")
        add("coefficient boundedness", model.c_bound - float(coeff_size.max()))
        min_eig = np.inf
        for k in range(n_steps):
            sig = model.vol_at(grid.times[k], paths.states[:, k, :])
            gram = np.einsum("nki,nkj->nij", sig, sig)
            eig = np.linalg.eigvalsh(gram)
            min_eig = min(min_eig, float(eig[:, 0].min()))
        add("uniform ellipticity", min_eig - model.ellipticity_floor)
    else:
        if model.c_lipschitz is None or model.c_benes is None:
            raise ConfigurationError("lipschitz-sde-benes declaration needs c_lipschitz and c_benes")
        # Lipschitz/linear-growth quotients on random point pairs
        pairs = rng.standard_normal((samples, d)) * scale + s_samples
        worst_ratio = 0.0
        for t in np.unique(t_samples):
            sel = t_samples == t
            if not np.any(sel):
                continue
            b1 = model.drift_at(t, s_samples[sel])
            b2 = model.drift_at(t, pairs[sel])
            v1 = model.vol_at(t, s_samples[sel])
            v2 = model.vol_at(t, pairs[sel])
            dist = np.linalg.norm(s_samples[sel] - pairs[sel], axis=-1)
            num = np.linalg.norm(b1 - b2, axis=-1) + np.linalg.norm(v1 - v2, axis=(-2, -1))
            ok = dist > 1e-12
            worst_ratio = max(worst_ratio, float(np.max(num[ok] / dist[ok], initial=0.0)))
            growth = (np.linalg.norm(b1, axis=-1) + np.linalg.norm(v1, axis=(-2, -1))) / \
                     (1.0 + np.linalg.norm(s_samples[sel], axis=-1))
            worst_ratio = max(worst_ratio, float(growth.max()))
        add("lipschitz linear growth", model.c_lipschitz - worst_ratio)

        # Benes bound along simulated paths: |vol^-1 drift| <= C (1 + sup_{u<=t} |W_u|)
        w = batch.brownian_paths()
        run_sup = np.maximum.accumulate(np.linalg.norm(w, axis=-1), axis=1)
        worst = 0.0
        for k in range(n_steps):
            s_k = paths.states[:, k, :]
            b_k = model.drift_at(grid.times[k], s_k)
            v_k = model.vol_at(grid.times[k], s_k)
            theta = np.linalg.solve(v_k, b_k[:, :, None])[:, :, 0]
            ratio = np.linalg.norm(theta, axis=-1) / (1.0 + run_sup[:, k])
            worst = max(worst, float(ratio.max()))
        add("benes bound", model.c_benes - worst)

    # cost convexity on sampled (t, x, h) / (x, y)
    min_g_eig = np.inf
    for t in np.unique(t_samples):
        sel = t_samples == t
        hess = cost.g_hess(t, x_samples[sel], h_samples[sel])
        min_g_eig = min(min_g_eig, float(np.linalg.eigvalsh(hess)[:, 0].min()))
    add("running cost convexity", min_g_eig)
    y_samples = y_base + 0.1 * scale * rng.standard_normal(samples)
    fxx = cost.f_hess(x_samples, y_samples)[:, 0, 0]
    add("terminal strong convexity", float(fxx.min()) - cost.c2_lower)

    # lower bounds of g and f
    g_min = np.inf
    for t in np.unique(t_samples):
        sel = t_samples == t
        g_min = min(g_min, float(np.min(cost.g(t, x_samples[sel], h_samples[sel]))))
    add("running cost lower bound", g_min - cost.c0_lower)
    add("terminal cost lower bound", float(np.min(cost.f(x_samples, y_samples))) - cost.c0_lower)

    # claim derivative growth
    lg = cost.l_grad(s_samples)
    lh = cost.l_hess(s_samples)
    add("claim gradient bound", cost.c_l - float(np.linalg.norm(lg, axis=-1).max()))
    add("claim hessian bound", cost.c_l - float(np.linalg.norm(lh, axis=(-2, -1)).max()))

    # supplied derivatives vs central finite differences, relative tolerance 1e-4
    rel_tol = 1e-4
    t0 = float(np.median(t_samples))

    def g_of(zx):
        return cost.g(t0, zx[:, 0], zx[:, 1:])

    z = np.concatenate([x_samples[:, None], h_samples], axis=1)
    fd_g = _fd_gradient(g_of, z)
    sup_g = cost.g_grad(t0, x_samples, h_samples)
    scale_g = 1.0 + np.abs(sup_g) + np.abs(fd_g)
    err_g = float(np.max(np.abs(fd_g - sup_g) / scale_g))

    def f_of(zx):
        return cost.f(zx[:, 0], zx[:, 1])

    zf = np.stack([x_samples, y_samples], axis=1)
    fd_f = _fd_gradient(f_of, zf)
    sup_f = cost.f_grad(x_samples, y_samples)
    err_f = float(np.max(np.abs(fd_f - sup_f) / (1.0 + np.abs(sup_f) + np.abs(fd_f))))

    fd_l = _fd_gradient(lambda s: np.asarray(cost.l(s), dtype=float), s_samples)
    sup_l = cost.l_grad(s_samples)
    err_l = float(np.max(np.abs(fd_l - sup_l) / (1.0 + np.abs(sup_l) + np.abs(fd_l))))

    add("derivative consistency", rel_tol - max(err_g, err_f, err_l))

    return ValidationReport(checks=tuple(checks), seed=seed, samples=samples)
