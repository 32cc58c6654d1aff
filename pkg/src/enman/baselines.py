"""Comparison anchors: the offline-optimal allocation and a uniform heuristic.

The oracle sees the whole day's harvest in advance and maximizes total log
utility subject to the battery recursion, the reservoir/capacity box, the
per-hour allocation floor, and an exact end-of-day battery target. The
problem is strictly concave with linear constraints, so the optimum is
piecewise-uniform between active battery constraints; we solve it with SLSQP
and then snap to that exact piecewise structure.

The uniform heuristic plans a single hourly allocation from the *expected*
harvest profile and then executes it blindly against the real trace, which
is how prediction-based duty-cycle schemes behave when the forecast is off.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from enman.envsim import DeviceConfig

_FEAS_TOL = 1e-9


class TraceShapeError(ValueError):
    """Harvest trace length does not match the configured horizon."""


@dataclass
class AllocationPlan:
    """A day of hourly allocations plus its realized outcome."""

    alloc_j: np.ndarray
    feasible: bool
    achieved_terminal_j: float
    total_utility: float


@dataclass
class PlanExecution:
    """Result of running planned allocations through the battery dynamics."""

    applied_j: np.ndarray
    battery_j: np.ndarray          # levels b_0 .. b_T
    total_utility: float
    terminal_j: float
    reservoir_violation_hours: int
    drained: bool
    overflow: bool                 # capacity clip wasted some harvest


def _check_trace(config: DeviceConfig, trace: np.ndarray) -> np.ndarray:
    trace = np.asarray(trace, dtype=np.float64)
    if trace.shape != (config.horizon_steps,):
        raise TraceShapeError(
            f"trace length {trace.shape} != horizon {config.horizon_steps}")
    return trace


def _cumulative_bounds(config: DeviceConfig, trace: np.ndarray,
                       init_battery_j: float, target_j: float):
    """Constraints on cumulative allocation C_t implied by the battery box.

    Returns (lower, upper, final): battery level at hour t+1 stays within
    [reservoir, capacity] iff lower[t] <= C_t <= upper[t]; the end-of-day
    target pins C_{T-1} = final exactly.
    """
    cum_harvest = np.cumsum(config.beta * trace)
    upper = (init_battery_j + cum_harvest - config.reservoir_j) / config.alpha
    lower = (init_battery_j + cum_harvest - config.capacity_j) / config.alpha
    final = (init_battery_j + cum_harvest[-1] - target_j) / config.alpha
    return lower, upper, final


def simulate_plan(config: DeviceConfig, trace: np.ndarray, init_battery_j: float,
                  planned_alloc_j: np.ndarray) -> PlanExecution:
    """Execute planned allocations against a real trace.

    Mirrors the environment's allocation bounds: each hour the applied
    allocation is the plan clipped to [min_alloc, battery], with a forced
    full drain when the battery is below the idle floor. A battery at zero
    ends the day early.
    """
    trace = _check_trace(config, trace)
    planned = np.asarray(planned_alloc_j, dtype=np.float64)
    T = config.horizon_steps
    applied = np.zeros(T)
    battery = np.zeros(T + 1)
    battery[0] = init_battery_j
    total_u = 0.0
    violations = 0
    drained = False
    overflow = False
    b = init_battery_j
    for t in range(T):
        if b <= 0.0:
            drained = True
            battery[t + 1:] = 0.0
            break
        if b < config.min_alloc_j:
            alloc = b
        else:
            alloc = min(max(planned[t], config.min_alloc_j), b)
        raw = b + config.beta * trace[t] - config.alpha * alloc
        if raw > config.capacity_j:
            overflow = True
        b = min(max(raw, 0.0), config.capacity_j)
        applied[t] = alloc
        battery[t + 1] = b
        total_u += math.log(alloc / config.min_alloc_j)
        if b < config.reservoir_j:
            violations += 1
    drained = drained or b == 0.0
    return PlanExecution(applied, battery, total_u, battery[T],
                         violations, drained, overflow)


def plan_battery_trajectory(config: DeviceConfig, trace: np.ndarray,
                            init_battery_j: float, alloc_j: np.ndarray) -> np.ndarray:
    """Battery levels b_0..b_T under the exact recursion (no clipping)."""
    trace = _check_trace(config, trace)
    deltas = config.beta * trace - config.alpha * np.asarray(alloc_j)
    return np.concatenate(([init_battery_j], init_battery_j + np.cumsum(deltas)))


def _polish(config: DeviceConfig, lower, upper, final, raw_alloc: np.ndarray):
    """Snap a near-optimal solution to the exact piecewise-uniform optimum.

    Strict concavity makes the optimal allocation constant between active
    cumulative constraints, so anchoring the cumulative path at the bounds
    it touches and spreading evenly in between reproduces the optimum to
    machine precision. Returns None when the anchor set looks wrong.
    """
    T = raw_alloc.shape[0]
    cum = np.cumsum(raw_alloc)
    scale = max(1.0, float(np.max(np.abs(cum))))
    atol = 1e-5 * scale
    anchors = []
    for t in range(T - 1):
        du = abs(cum[t] - upper[t])
        dl = abs(cum[t] - lower[t])
        if min(du, dl) < atol:
            anchors.append((t, upper[t] if du <= dl else lower[t]))
    anchors.append((T - 1, final))

    alloc = np.zeros(T)
    prev_t, prev_v = -1, 0.0
    for t, v in anchors:
        n = t - prev_t
        alloc[prev_t + 1: t + 1] = (v - prev_v) / n
        prev_t, prev_v = t, v
    if np.any(alloc < config.min_alloc_j - 1e-9):
        return None
    cum = np.cumsum(alloc)
    ok = (np.all(cum[:-1] <= upper[:-1] + _FEAS_TOL)
          and np.all(cum[:-1] >= lower[:-1] - _FEAS_TOL)
          and abs(cum[-1] - final) <= _FEAS_TOL)
    return np.maximum(alloc, config.min_alloc_j) if ok else None


def oracle(config: DeviceConfig, harvest_trace: np.ndarray,
           init_battery_j: float, target_j: float) -> AllocationPlan:
    """Clairvoyant optimal allocation for one day.

    Maximizes total log utility given the full harvest trace, subject to
    the battery recursion/box and battery_T = target_j. When even the
    per-hour floor cannot be funded the plan is marked infeasible and a
    min-allocation fallback (executed against the trace) is returned.
    """
    trace = _check_trace(config, harvest_trace)
    T = config.horizon_steps
    m = config.min_alloc_j
    lower, upper, final = _cumulative_bounds(config, trace, init_battery_j, target_j)

    # Feasibility: a cumulative path with slope >= m must fit the corridor.
    steps = np.arange(1, T + 1, dtype=np.float64)
    hi = np.minimum(upper, final - m * (T - steps))
    hi[-1] = final
    lo = np.maximum(lower, m * steps)
    lo[-1] = max(lower[-1], m * T)
    if np.any(lo > hi + 1e-9):
        execution = simulate_plan(config, trace, init_battery_j, np.full(T, m))
        return AllocationPlan(execution.applied_j, False,
                              execution.terminal_j, execution.total_utility)

    # Feasible warm start: clip uniform to the corridor, then restore
    # monotonicity at the minimum slope.
    cum0 = np.clip(np.cumsum(np.full(T, final / T)), lo, hi)
    for t in range(1, T):
        cum0[t] = max(cum0[t], cum0[t - 1] + m)
    x0 = np.maximum(np.diff(np.concatenate(([0.0], cum0))), m)

    tri = np.tril(np.ones((T, T)))

    def neg_utility(a):
        return -np.sum(np.log(a))

    def neg_utility_grad(a):
        return -1.0 / a

    constraints = [
        {"type": "eq",
         "fun": lambda a: np.sum(a) - final,
         "jac": lambda a: np.ones(T)},
    ]
    if T > 1:
        constraints += [
            {"type": "ineq",
             "fun": lambda a: upper[:-1] - tri[:-1] @ a,
             "jac": lambda a: -tri[:-1]},
            {"type": "ineq",
             "fun": lambda a: tri[:-1] @ a - lower[:-1],
             "jac": lambda a: tri[:-1]},
        ]
    with warnings.catch_warnings():
        # SLSQP steps slightly outside the bounds and clips; harmless here.
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(neg_utility, x0, jac=neg_utility_grad, method="SLSQP",
                       bounds=[(m, None)] * T, constraints=constraints,
                       options={"maxiter": 1000, "ftol": 1e-14})
    alloc = np.maximum(res.x, m)

    polished = _polish(config, lower, upper, final, alloc)
    if polished is not None:
        raw_u = float(np.sum(np.log(alloc / m)))
        pol_u = float(np.sum(np.log(polished / m)))
        if pol_u >= raw_u - 1e-6:
            alloc = polished

    total_u = float(np.sum(np.log(alloc / m)))
    terminal = init_battery_j + config.beta * trace.sum() - config.alpha * alloc.sum()
    return AllocationPlan(alloc, True, float(terminal), total_u)


def uniform_predicted(config: DeviceConfig, expected_profile: np.ndarray,
                      actual_trace: np.ndarray, init_battery_j: float,
                      target_j: float) -> AllocationPlan:
    """Prediction-based uniform allocation, realized on the actual trace.

    Plans one flat hourly rate that would be energy-neutral if the expected
    profile came true, then executes it blindly. The plan reports what
    actually happened: applied allocations, realized utility, and the real
    terminal level.
    """
    expected = np.asarray(expected_profile, dtype=np.float64)
    T = config.horizon_steps
    if expected.shape != (T,):
        raise TraceShapeError(f"expected profile length {expected.shape} != horizon {T}")
    rate = (init_battery_j - target_j + config.beta * expected.sum()) / (config.alpha * T)
    rate = max(rate, config.min_alloc_j)
    execution = simulate_plan(config, actual_trace, init_battery_j, np.full(T, rate))
    feasible = (not execution.drained and not execution.overflow
                and execution.reservoir_violation_hours == 0)
    return AllocationPlan(execution.applied_j, feasible,
                          execution.terminal_j, execution.total_utility)


def save_plan_csv(path, config: DeviceConfig, trace: np.ndarray,
                  init_battery_j: float, plan: AllocationPlan) -> None:
    """Write a plan as CSV rows of hour, allocation, resulting battery."""
    battery = plan_battery_trajectory(config, trace, init_battery_j, plan.alloc_j)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["hour", "alloc_j", "battery_j"])
        for hour, alloc in enumerate(plan.alloc_j):
            writer.writerow([hour, repr(float(alloc)), repr(float(battery[hour + 1]))])
