"""Numerical engine for first-order sensitivity of robust hedging problems."""

from .baseline_solver import (BaselineResult, FocResult, OptimizerConfig,
                              SimulationConfig, foc_residual, mv_closed_form_oracle,
                              solve_baseline)
from .bsde import (BsdeSolution, PolynomialBasis, TerminalData, ValueFunction,
                   feynman_kac_reference, solve_bsde, solve_scalar_bsde,
                   solve_vector_bsde, terminal_data)
from .market_model import (ConfigurationError, ConstraintSet, CostSpec, MarketModel,
                           RobustnessSpec, SimulationError,
                           UnsupportedConfigurationError, ValidationReport,
                           holder_conjugate, project_constraint, quadratic_hedge_cost,
                           validate_model)
from .mv_hedging import MVCostSpec, SmpResult, mv_cost_to_general, mv_sensitivity, smp_residual
from .sensitivity import (EpsRow, FirstOrderSensitivity, PairingCheck,
                          PerturbationDirection, PerturbedEvaluator, RobustValueResult,
                          SensitivityReport, WorstCaseResult, adversarial_direction,
                          expansion_report, first_order_sensitivity, normalize_direction,
                          pairing_identity_check, random_directions, robust_value,
                          sensitivity_processes, worst_case_value)
from .simulation import (BrownianBatch, NormEstimate, PathBatch, Perturbation,
                         TimeGrid, bdg_constant, estimate_objective, hp_norm, lp_norm,
                         read_path_dump, sample_brownian, simulate_state,
                         simulate_wealth, state_deviation_bound, sup_norm_p,
                         wealth_deviation_bound, wealth_from_controls, write_path_dump)
from .strategy import Strategy, evaluate_strategy, feedback_features, perturb_parameters

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
