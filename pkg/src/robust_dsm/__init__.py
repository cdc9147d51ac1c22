"""Robust demand-side management: a day-ahead game between users with
generation and storage, priced against worst-case consumption errors."""

from .errors import (ConfigurationError, DegenerateDirection, DimensionMismatch, DsmError,
                     EmptyUserSet, InfeasibleUserModel, MaxIterationsExceeded, MaxOuterIterations,
                     NonPositiveAggregateLoad)
from .game import (EquilibriumResult, SolverConfig, SweepMode, cost_disagreement, equilibrium_gap,
                   monotonicity_diagnostics, naive_config, solve, verify_equilibrium)
from .model import (GridCostParams, TimeGrid, aggregate_load, grid_cost, total_grid_cost,
                    user_costs, user_day_ahead_cost)
from .realtime import (PenaltyParams, monte_carlo_compare, nonrobust_rt_cost, penalty_psi,
                       robust_rt_cost, sample_rt_deviations)
from .scenario import Scenario, ScenarioSpec, build_scenario, calibrate_prices
from .users import (DeviceSchedule, UserKind, UserModel, best_response,
                    feasible_region_check)
from .worstcase import (SlotErrorProblem, contraction_constant, fixed_point_map,
                        lambda_from_delta, project_halfspace, solve_errors, solve_slot_errors,
                        stationarity_residual)

__version__ = "0.1.0"
