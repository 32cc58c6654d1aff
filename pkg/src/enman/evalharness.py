"""Deterministic evaluation of policies and baselines on held-out traces.

Every method is scored per (profile, initial battery, trace) episode: total
log utility for the day, utility normalized by the clairvoyant optimum for
that exact trace, end-of-day deviation from the target, hours spent below
the reservoir, and whether the battery ever fully drained. Rows aggregate
episodes per (profile, init) cell; compare() lines methods up Table-style
per profile.

Policies are executed greedily (the Gaussian mean) by default - a deployed
manager should be deterministic - with sampling available for diagnostics.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from enman import baselines, policyio, tinynet
from enman.envsim import DeviceConfig, Env, HarvestProfile, utility

DEFAULT_INIT_LEVELS_J = (16.0, 48.0, 112.0, 144.0)


class TraceSetMismatchError(ValueError):
    """compare() was given reports evaluated on different trace sets."""


@dataclass
class EpisodeEval:
    profile: str
    init_j: float
    trace_idx: int
    utility: float
    oracle_utility: float
    oracle_feasible: bool
    terminal_deviation_j: float
    reservoir_violation_hours: int
    drained: bool


@dataclass
class EvalRow:
    profile: str
    init_j: float
    method: str
    utility: float
    normalized: float
    terminal_dev_j: float
    violations: float
    drained: bool


@dataclass
class EvalReport:
    method: str
    rows: list[EvalRow]
    episodes: list[EpisodeEval]
    fingerprint: str


def heldout_traces(profile: HarvestProfile, count: int = 20, seed: int = 0) -> list[np.ndarray]:
    """Evaluation traces drawn from a seed namespace disjoint from training.

    Training episodes key their draws on spawn_key (0, episode); these use
    (3, i), so with any root seed the evaluation set is never seen during
    training.
    """
    from enman.envsim import sample_profile

    return [sample_profile(profile, np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(3, i)))) for i in range(count)]


def _as_trace_map(traces) -> dict[str, list[np.ndarray]]:
    if isinstance(traces, dict):
        return {label: [np.asarray(t, dtype=np.float64) for t in ts]
                for label, ts in traces.items()}
    return {"default": [np.asarray(t, dtype=np.float64) for t in traces]}


def trace_fingerprint(trace_map: dict, init_levels) -> str:
    h = hashlib.sha256()
    for label in trace_map:
        h.update(label.encode())
        for t in trace_map[label]:
            h.update(np.ascontiguousarray(t, dtype=np.float64).tobytes())
    h.update(np.asarray(sorted(init_levels), dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def _greedy_actor(policy):
    """Normalize the accepted policy flavors to a callable obs -> raw action."""
    if callable(policy) and not isinstance(policy, (tinynet.PolicyParams,
                                                    policyio.PolicyBundle)):
        return policy
    if isinstance(policy, policyio.PolicyBundle):
        return lambda obs: policyio.forward_mean(policy, obs)

    def actor(obs):
        out, _ = tinynet.forward(policy.trunk, obs.as_array())
        return float(out[0])

    return actor


def run_policy_episode(policy, config: DeviceConfig, trace: np.ndarray,
                       init_battery_j: float, terminal_mode: str = "combined",
                       sample_actions: bool = False, seed: int = 0):
    """One full evaluation episode; returns (utility, terminal_dev, violations, drained)."""
    actor = _greedy_actor(policy)
    profile = HarvestProfile(kind="trace", hourly_mean_j=trace,
                             hourly_std_j=np.zeros_like(trace), trace_j=trace)
    env = Env(config, profile, terminal_mode=terminal_mode)
    _, obs = env.reset(init_battery_j)
    rng = np.random.default_rng(seed) if sample_actions else None
    total_u = 0.0
    violations = 0
    done = False
    battery = init_battery_j
    while not done:
        raw = actor(obs)
        if sample_actions:
            raw += _policy_std(policy) * rng.standard_normal()
        outcome = env.step(raw)
        total_u += utility(outcome.info["alloc_applied_j"], config.min_alloc_j)
        battery = outcome.info["battery_after_j"]
        if battery < config.reservoir_j:
            violations += 1
        obs = outcome.next_obs
        done = outcome.done
    return total_u, abs(battery - init_battery_j), violations, battery == 0.0


def _policy_std(policy) -> float:
    if isinstance(policy, tinynet.PolicyParams):
        return policy.std
    if isinstance(policy, policyio.PolicyBundle):
        return float(np.exp(policy.log_std))
    return 0.0


def aggregate_report(method: str, episodes: list[EpisodeEval],
               fingerprint: str) -> EvalReport:
    rows = []
    keys = []
    for ep in episodes:
        key = (ep.profile, ep.init_j)
        if key not in keys:
            keys.append(key)
    for profile, init_j in keys:
        cell = [e for e in episodes if (e.profile, e.init_j) == (profile, init_j)]
        mean_u = float(np.mean([e.utility for e in cell]))
        feasible = [e for e in cell if e.oracle_feasible]
        if feasible:
            normalized = mean_u / float(np.mean([e.oracle_utility for e in feasible]))
        else:
            normalized = float("nan")
        rows.append(EvalRow(profile, init_j, method, mean_u, normalized,
                            float(np.mean([e.terminal_deviation_j for e in cell])),
                            float(np.mean([e.reservoir_violation_hours for e in cell])),
                            any(e.drained for e in cell)))
    return EvalReport(method, rows, episodes, fingerprint)


def evaluate(policy, config: DeviceConfig, traces,
             init_levels=DEFAULT_INIT_LEVELS_J, method: str = "policy",
             terminal_mode: str = "combined") -> EvalReport:
    """Greedy policy evaluation over every (profile, init, trace) episode."""
    trace_map = _as_trace_map(traces)
    episodes = []
    for label, ts in trace_map.items():
        for i, trace in enumerate(ts):
            for init in init_levels:
                plan = baselines.oracle(config, trace, init, init)
                u, dev, viol, drained = run_policy_episode(
                    policy, config, trace, init, terminal_mode)
                episodes.append(EpisodeEval(label, init, i, u,
                                            plan.total_utility, plan.feasible,
                                            dev, viol, drained))
    return aggregate_report(method, episodes, trace_fingerprint(trace_map, init_levels))


def evaluate_oracle(config: DeviceConfig, traces,
                    init_levels=DEFAULT_INIT_LEVELS_J,
                    method: str = "oracle") -> EvalReport:
    trace_map = _as_trace_map(traces)
    episodes = []
    for label, ts in trace_map.items():
        for i, trace in enumerate(ts):
            for init in init_levels:
                plan = baselines.oracle(config, trace, init, init)
                episodes.append(EpisodeEval(
                    label, init, i, plan.total_utility, plan.total_utility,
                    plan.feasible, abs(plan.achieved_terminal_j - init),
                    0, False))
    report = aggregate_report(method, episodes, trace_fingerprint(trace_map, init_levels))
    for row in report.rows:
        if not np.isnan(row.normalized):
            row.normalized = 1.0
    return report


def evaluate_uniform(config: DeviceConfig, expected_means, traces,
                     init_levels=DEFAULT_INIT_LEVELS_J,
                     method: str = "uniform_predicted") -> EvalReport:
    """The prediction-based uniform baseline, realized on the actual traces."""
    trace_map = _as_trace_map(traces)
    expected = np.asarray(expected_means, dtype=np.float64)
    episodes = []
    for label, ts in trace_map.items():
        for i, trace in enumerate(ts):
            for init in init_levels:
                ref = baselines.oracle(config, trace, init, init)
                plan = baselines.uniform_predicted(config, expected, trace, init, init)
                execution = baselines.simulate_plan(config, trace, init, plan.alloc_j)
                episodes.append(EpisodeEval(
                    label, init, i, plan.total_utility, ref.total_utility,
                    ref.feasible, abs(plan.achieved_terminal_j - init),
                    execution.reservoir_violation_hours, execution.drained))
    return aggregate_report(method, episodes, trace_fingerprint(trace_map, init_levels))


REPORT_COLUMNS = ("profile", "init_j", "method", "utility", "normalized",
                  "terminal_dev_j", "violations", "drained")


def report_to_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for r in report.rows:
            writer.writerow([r.profile, repr(r.init_j), r.method, repr(r.utility),
                             repr(r.normalized), repr(r.terminal_dev_j),
                             repr(r.violations), int(r.drained)])


@dataclass
class ComparisonTable:
    methods: list[str]
    profiles: list[str]
    cells: np.ndarray  # mean utility, methods x (profiles + overall avg)

    def render_text(self) -> str:
        header = ["method"] + self.profiles + ["avg"]
        rows = [[m] + [f"{v:.2f}" for v in self.cells[i]]
                for i, m in enumerate(self.methods)]
        widths = [max(len(str(r[c])) for r in [header] + rows)
                  for c in range(len(header))]
        lines = ["  ".join(str(v).rjust(w) for v, w in zip(r, widths))
                 for r in [header] + rows]
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["method"] + self.profiles + ["avg"])
            for i, m in enumerate(self.methods):
                writer.writerow([m] + [repr(float(v)) for v in self.cells[i]])


def compare(*reports: EvalReport) -> ComparisonTable:
    """Mean utility per method and profile; all reports must share traces."""
    if not reports:
        raise ValueError("compare() needs at least one report")
    fp = reports[0].fingerprint
    for r in reports[1:]:
        if r.fingerprint != fp:
            raise TraceSetMismatchError(
                f"report {r.method!r} was evaluated on a different trace set")
    profiles = []
    for row in reports[0].rows:
        if row.profile not in profiles:
            profiles.append(row.profile)
    cells = np.zeros((len(reports), len(profiles) + 1))
    for i, rep in enumerate(reports):
        for j, profile in enumerate(profiles):
            vals = [row.utility for row in rep.rows if row.profile == profile]
            cells[i, j] = float(np.mean(vals))
        cells[i, -1] = float(np.mean(cells[i, :-1]))
    return ComparisonTable([r.method for r in reports], profiles, cells)
