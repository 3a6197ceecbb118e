"""JSON configuration ingestion: schema version 1.

Top-level keys: schema, model{d, s0[], horizon, drift, volatility, regularity},
robustness{p, gamma, eta, epsilons[]}, cost{kind, ...}, constraint{kind, ...},
strategy{family, ...}, simulation{n_paths, n_steps, seed},
optimizer{max_iters, tol}, and optionally x0 (initial capital, default 0).

Coefficient/claim forms are named parametric families so that configurations
stay serializable; callables are for library use only.
"""

from dataclasses import dataclass

import numpy as np

from .baseline_solver import OptimizerConfig, SimulationConfig
from .market_model import (ConfigurationError, ConstraintSet, CostSpec, MarketModel,
                           RobustnessSpec, quadratic_hedge_cost)
from .mv_hedging import MVCostSpec, mv_cost_to_general
from .strategy import Strategy, theta_size


class ConfigError(ValueError):
    """Configuration file is structurally invalid (IO/parse level)."""


def _require(cfg, key, where):
    if key not in cfg:
        raise ConfigError("missing key %r in %s" % (key, where))
    return cfg[key]


def build_drift(cfg, d):
    kind = _require(cfg, "kind", "model.drift")
    if kind == "zero":
        return lambda t, s: np.zeros_like(s)
    if kind == "constant":
        value = np.broadcast_to(np.asarray(_require(cfg, "value", "model.drift"), float), (d,))
        return lambda t, s: np.broadcast_to(value, s.shape)
    if kind == "linear":
        mu = float(_require(cfg, "mu", "model.drift"))
        return lambda t, s: mu * s
    raise ConfigError("unknown drift kind %r" % kind)


def build_vol(cfg, d):
    kind = _require(cfg, "kind", "model.volatility")
    if kind == "constant":
        value = np.asarray(_require(cfg, "value", "model.volatility"), float)
        if value.ndim == 0:
            value = float(value) * np.eye(d)
        value = np.broadcast_to(value, (d, d))

        def const(t, s):
            return np.broadcast_to(value, (s.shape[0], d, d))

        return const
    if kind == "geometric":
        v = float(_require(cfg, "v", "model.volatility"))

        def geometric(t, s):
            out = np.zeros((s.shape[0], d, d))
            idx = np.arange(d)
            out[:, idx, idx] = v * s
            return out

        return geometric
    raise ConfigError("unknown volatility kind %r" % kind)


def build_model(cfg) -> MarketModel:
    d = int(_require(cfg, "d", "model"))
    s0 = np.asarray(_require(cfg, "s0", "model"), float)
    horizon = float(_require(cfg, "horizon", "model"))
    drift = build_drift(_require(cfg, "drift", "model"), d)
    vol = build_vol(_require(cfg, "volatility", "model"), d)
    reg = _require(cfg, "regularity", "model")
    kind = _require(reg, "kind", "model.regularity")
    kwargs = {}
    if kind == "bounded-elliptic":
        kwargs["c_bound"] = float(_require(reg, "c_bound", "model.regularity"))
        kwargs["ellipticity_floor"] = float(_require(reg, "ellipticity_floor", "model.regularity"))
    elif kind == "lipschitz-sde-benes":
        kwargs["c_lipschitz"] = float(_require(reg, "c_lipschitz", "model.regularity"))
        kwargs["c_benes"] = float(_require(reg, "c_benes", "model.regularity"))
    else:
        raise ConfigError("unknown regularity kind %r" % kind)
    try:
        return MarketModel(d=d, s0=s0, drift=drift, vol=vol, horizon=horizon,
                           regularity=kind, **kwargs)
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc


def build_claim(cfg, d):
    kind = _require(cfg, "kind", "cost.claim")
    if kind == "zero":
        return (lambda s: np.zeros(s.shape[0]),
                lambda s: np.zeros((s.shape[0], d)),
                lambda s: np.zeros((s.shape[0], d, d)),
                1.0)
    if kind == "identity":
        if d != 1:
            raise ConfigError("identity claim requires d=1")
        return (lambda s: s[:, 0],
                lambda s: np.ones((s.shape[0], 1)),
                lambda s: np.zeros((s.shape[0], 1, 1)),
                2.0)
    if kind == "linear":
        intercept = float(cfg.get("intercept", 0.0))
        slope = np.broadcast_to(np.asarray(_require(cfg, "slope", "cost.claim"), float), (d,))
        c_l = float(np.linalg.norm(slope)) + 1.0
        return (lambda s: intercept + s @ slope,
                lambda s: np.broadcast_to(slope, (s.shape[0], d)).copy(),
                lambda s: np.zeros((s.shape[0], d, d)),
                c_l)
    raise ConfigError("unknown claim kind %r" % kind)


def build_cost(cfg, d, horizon) -> CostSpec:
    kind = _require(cfg, "kind", "cost")
    if kind == "quadratic_hedge":
        l, l_grad, l_hess, c_l = build_claim(_require(cfg, "claim", "cost"), d)
        base = quadratic_hedge_cost(d, l, l_grad, l_hess)
        return CostSpec(g=base.g, g_grad=base.g_grad, g_hess=base.g_hess,
                        f=base.f, f_grad=base.f_grad, f_hess=base.f_hess,
                        l=l, l_grad=l_grad, l_hess=l_hess, r_growth=0.5,
                        c2_upper=4.0, c0_lower=0.0, c2_lower=2.0, c_l=c_l,
                        has_running_cost=False)
    if kind == "mean_variance":
        l, l_grad, l_hess, c_l = build_claim(_require(cfg, "claim", "cost"), d)
        mv = MVCostSpec(d=d, a=cfg.get("A", 0.0),
                        b=np.asarray(cfg.get("B", np.zeros(d)), float),
                        c=np.asarray(cfg.get("C", np.zeros((d, d))), float),
                        l=l, l_grad=l_grad, l_hess=l_hess, c_l=c_l, horizon=horizon)
        return mv_cost_to_general(mv)
    raise ConfigError("unknown cost kind %r" % kind)


def build_constraint(cfg, d) -> ConstraintSet:
    kind = _require(cfg, "kind", "constraint")
    if kind == "ball":
        return ConstraintSet(kind="ball", d=d,
                             center=np.asarray(cfg.get("center", np.zeros(d)), float),
                             radius=float(_require(cfg, "radius", "constraint")))
    if kind == "box":
        return ConstraintSet(kind="box", d=d,
                             lower=np.asarray(_require(cfg, "lower", "constraint"), float),
                             upper=np.asarray(_require(cfg, "upper", "constraint"), float))
    raise ConfigError("unknown constraint kind %r" % kind)


def build_strategy(cfg, d, horizon, constraint) -> Strategy:
    family = _require(cfg, "family", "strategy")
    cells = int(cfg.get("n_time_cells", 1))
    size = theta_size(family, d, cells)
    theta0 = np.asarray(cfg.get("theta0", np.zeros(size)), float)
    return Strategy(family=family, theta=theta0, constraint=constraint, d=d,
                    n_time_cells=cells, horizon=horizon)


@dataclass(frozen=True)
class Experiment:
    model: MarketModel
    spec: RobustnessSpec
    cost: CostSpec
    constraint: ConstraintSet
    template: Strategy
    sim: SimulationConfig
    opt: OptimizerConfig
    x0: float
    raw: dict


def load_experiment(cfg: dict) -> Experiment:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("schema") != 1:
        raise ConfigError("unsupported or missing schema version (expected 1)")
    model = build_model(_require(cfg, "model", "config"))
    rob = _require(cfg, "robustness", "config")
    try:
        spec = RobustnessSpec(p=float(_require(rob, "p", "robustness")),
                              gamma=float(rob.get("gamma", 1.0)),
                              eta=float(rob.get("eta", 1.0)),
                              epsilons=tuple(_require(rob, "epsilons", "robustness")))
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc
    cost = build_cost(_require(cfg, "cost", "config"), model.d, model.horizon)
    constraint = build_constraint(_require(cfg, "constraint", "config"), model.d)
    template = build_strategy(_require(cfg, "strategy", "config"), model.d,
                              model.horizon, constraint)
    sim_cfg = _require(cfg, "simulation", "config")
    sim = SimulationConfig(n_paths=int(_require(sim_cfg, "n_paths", "simulation")),
                           n_steps=int(_require(sim_cfg, "n_steps", "simulation")),
                           seed=int(sim_cfg.get("seed", 0)))
    opt_cfg = cfg.get("optimizer", {})
    opt = OptimizerConfig(max_iters=int(opt_cfg.get("max_iters", 80)),
                          tol=float(opt_cfg.get("tol", 1e-9)))
    return Experiment(model=model, spec=spec, cost=cost, constraint=constraint,
                      template=template, sim=sim, opt=opt,
                      x0=float(cfg.get("x0", 0.0)), raw=cfg)
