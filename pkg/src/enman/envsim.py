"""Episodic simulator of the battery / harvest / allocation loop.

One episode is a day of hourly steps. At each step the agent allocates an
energy budget from the battery; harvested energy for that hour then lands in
the battery (revealed to the agent only at the next observation, so the
policy never sees the future). The reward is the logarithmic device utility
shaped by two squared penalties: dipping below the emergency reservoir, and
missing the end-of-day battery target that makes the day energy-neutral.

All energies are joules.
"""

from __future__ import annotations

import csv
import math
from configparser import ConfigParser
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import ndtr, ndtri


class ConfigInvariantError(ValueError):
    """A DeviceConfig or HarvestProfile field violates its invariants."""


class RangeError(ValueError):
    """A value is outside its documented range."""


class EpisodeDoneError(RuntimeError):
    """step() was called on a finished episode."""


class ProfileKindError(ValueError):
    """Operation not applicable to this profile kind."""


class UtilityDomainError(ValueError):
    """Utility is undefined for non-positive allocations."""


# Fraction of capacity used for "random" initial battery draws; at the
# default 160 J capacity this is the [16, 144] J training envelope.
RANDOM_INIT_FRAC = (0.1, 0.9)


@dataclass(frozen=True)
class DeviceConfig:
    """Static characteristics of the target device.

    alpha is the fraction of an allocation actually consumed; beta is the
    harvester efficiency. horizon_steps is the episode length in hours.
    """

    capacity_j: float = 160.0
    reservoir_j: float = 10.0
    min_alloc_j: float = 0.64
    alpha: float = 1.0
    beta: float = 1.0
    horizon_steps: int = 24

    def __post_init__(self):
        if not (0.0 < self.min_alloc_j < self.reservoir_j < self.capacity_j):
            raise ConfigInvariantError(
                "need 0 < min_alloc_j < reservoir_j < capacity_j, got "
                f"{self.min_alloc_j}, {self.reservoir_j}, {self.capacity_j}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigInvariantError(f"{name} must be in (0, 1], got {v}")
        if self.horizon_steps < 1:
            raise ConfigInvariantError("horizon_steps must be >= 1")


@dataclass
class HarvestProfile:
    """Hourly harvest source: parametric distributions or a fixed trace.

    Parametric profiles draw each hour independently from a Gaussian
    truncated below at zero; trace profiles replay trace_j verbatim.
    """

    kind: str  # "parametric" | "trace"
    hourly_mean_j: np.ndarray
    hourly_std_j: np.ndarray
    trace_j: np.ndarray | None = None
    cluster_label: str = ""

    def __post_init__(self):
        if self.kind not in ("parametric", "trace"):
            raise ConfigInvariantError(f"unknown profile kind {self.kind!r}")
        self.hourly_mean_j = np.asarray(self.hourly_mean_j, dtype=np.float64)
        self.hourly_std_j = np.asarray(self.hourly_std_j, dtype=np.float64)
        if np.any(self.hourly_mean_j < 0) or np.any(self.hourly_std_j < 0):
            raise ConfigInvariantError("hourly means/stds must be >= 0")
        if self.trace_j is not None:
            self.trace_j = np.asarray(self.trace_j, dtype=np.float64)
            if np.any(self.trace_j < 0):
                raise ConfigInvariantError("trace values must be >= 0")
        if self.kind == "trace" and self.trace_j is None:
            raise ConfigInvariantError("trace profiles need trace_j")


@dataclass
class EnvState:
    """Simulator ground truth for one episode."""

    battery_j: float
    t: int
    initial_battery_j: float
    prev_harvest_j: float
    cum_harvest_j: float
    target_j: float
    done: bool
    trace_j: np.ndarray = field(repr=False, default=None)  # this episode's 24 draws


class Observation(NamedTuple):
    """Normalized 5-tuple the policy sees."""

    battery_norm: float
    prev_harvest_norm: float
    initial_battery_norm: float
    time_norm: float
    cum_harvest_norm: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


@dataclass
class StepOutcome:
    next_obs: Observation
    reward: float
    done: bool
    info: dict


def utility(alloc_j: float, min_alloc_j: float = 0.64) -> float:
    """Logarithmic device utility: ln(alloc / min_alloc).

    Zero at the idle floor, negative below it. Any monotone utility with
    u(min_alloc_j) = 0 can be substituted via Env(utility_fn=...).
    """
    if alloc_j <= 0.0:
        raise UtilityDomainError(f"allocation must be positive, got {alloc_j}")
    return math.log(alloc_j / min_alloc_j)


def map_action(config: DeviceConfig, battery_j: float, action_raw: float) -> float:
    """Map a raw policy output to the applied allocation.

    The raw action is the requested allocation in joules, clipped to the
    admissible interval [min_alloc_j, battery_j]. A battery below the idle
    floor forces a full drain. Keeping the action in energy units leaves
    the Gaussian head's unit-scale exploration noise commensurate with the
    few-joule hourly allocations that matter.
    """
    if battery_j < config.min_alloc_j:
        return battery_j
    return min(max(action_raw, config.min_alloc_j), battery_j)


def sample_profile(profile: HarvestProfile, seed) -> np.ndarray:
    """Draw one 24-value trace from a parametric profile.

    Each hour is an independent Gaussian truncated below at zero, sampled
    by inverse CDF so a fixed seed gives an identical trace.
    """
    if profile.kind != "parametric":
        raise ProfileKindError("traces replay verbatim; sampling needs a parametric profile")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mu = profile.hourly_mean_j
    sd = profile.hourly_std_j
    u = rng.random(mu.shape[0])
    out = mu.copy()
    pos = sd > 0.0
    if np.any(pos):
        cdf_at_zero = ndtr(-mu[pos] / sd[pos])
        q = cdf_at_zero + (1.0 - cdf_at_zero) * u[pos]
        out[pos] = mu[pos] + sd[pos] * ndtri(q)
    return np.maximum(out, 0.0)


def truncated_mean(mu: float, sd: float) -> float:
    """Analytic mean of a Gaussian truncated below at zero."""
    if sd == 0.0:
        return max(mu, 0.0)
    a = -mu / sd
    phi = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    return mu + sd * phi / (1.0 - ndtr(a))


class Env:
    """Gym-style episodic environment over one device and harvest profile.

    terminal_mode selects the final-hour reward: "combined" keeps the
    allocation utility and adds the end-of-day target penalty; "literal"
    replaces the final reward with the penalty alone.

    Instances are single-threaded; all randomness flows from the seed given
    to reset() (or the constructor seed when reset() gets none).
    """

    def __init__(self, config: DeviceConfig, profile: HarvestProfile,
                 terminal_mode: str = "combined",
                 utility_fn: Callable[[float], float] | None = None,
                 seed=None):
        if terminal_mode not in ("combined", "literal"):
            raise ValueError(f"unknown terminal_mode {terminal_mode!r}")
        self.config = config
        self.profile = profile
        self.terminal_mode = terminal_mode
        self._utility = utility_fn or (lambda a: utility(a, config.min_alloc_j))
        self._rng = np.random.default_rng(seed)
        self.state: EnvState | None = None

    def reset(self, init_battery_j="random", seed=None) -> tuple[EnvState, Observation]:
        """Start a new episode; returns the state and first observation.

        init_battery_j is either an explicit level in [reservoir_j,
        capacity_j] or "random" for a uniform draw over the middle 80% of
        capacity. Parametric profiles pre-sample a fresh 24-value trace.
        """
        cfg = self.config
        rng = self._rng if seed is None else np.random.default_rng(seed)
        if init_battery_j == "random":
            lo, hi = (f * cfg.capacity_j for f in RANDOM_INIT_FRAC)
            init = float(rng.uniform(lo, hi))
        else:
            init = float(init_battery_j)
            if not (cfg.reservoir_j <= init <= cfg.capacity_j):
                raise RangeError(
                    f"init_battery_j {init} outside [{cfg.reservoir_j}, {cfg.capacity_j}]")
        if self.profile.kind == "parametric":
            trace = sample_profile(self.profile, rng)
        else:
            trace = self.profile.trace_j.copy()
        if trace.shape[0] != cfg.horizon_steps:
            raise ConfigInvariantError(
                f"trace length {trace.shape[0]} != horizon {cfg.horizon_steps}")
        self.state = EnvState(battery_j=init, t=0, initial_battery_j=init,
                              prev_harvest_j=0.0, cum_harvest_j=0.0,
                              target_j=init, done=False, trace_j=trace)
        return self.state, self._observation()

    def _observation(self) -> Observation:
        s, cfg = self.state, self.config
        return Observation(
            battery_norm=s.battery_j / cfg.capacity_j,
            prev_harvest_norm=s.prev_harvest_j / cfg.capacity_j,
            initial_battery_norm=s.initial_battery_j / cfg.capacity_j,
            time_norm=s.t / cfg.horizon_steps,
            cum_harvest_norm=s.cum_harvest_j / cfg.capacity_j,
        )

    def step(self, action_raw: float) -> StepOutcome:
        """Apply one allocation, land the hour's harvest, score the reward."""
        s, cfg = self.state, self.config
        if s is None or s.done:
            raise EpisodeDoneError("reset() the environment before stepping")
        alloc = map_action(cfg, s.battery_j, action_raw)
        harvest = float(s.trace_j[s.t])
        battery_after = s.battery_j + cfg.beta * harvest - cfg.alpha * alloc
        battery_after = min(max(battery_after, 0.0), cfg.capacity_j)

        at_horizon = s.t + 1 == cfg.horizon_steps
        drained = battery_after == 0.0
        reward = self._utility(alloc)
        info = {"alloc_applied_j": alloc, "harvest_j": harvest,
                "battery_after_j": battery_after}
        if at_horizon:
            penalty = (battery_after - s.target_j) ** 2
            if self.terminal_mode == "literal":
                reward = -penalty
            else:
                reward -= penalty
            info["terminal_deviation_j"] = abs(battery_after - s.target_j)
        else:
            if battery_after < cfg.reservoir_j:
                reward -= (cfg.reservoir_j - battery_after) ** 2
            if drained:
                # A dead battery is the worst energy-neutrality failure;
                # charge the full end-of-day penalty now.
                reward -= s.target_j ** 2
                info["terminal_deviation_j"] = s.target_j

        s.battery_j = battery_after
        s.prev_harvest_j = harvest
        s.cum_harvest_j += harvest
        s.t += 1
        s.done = at_horizon or drained
        return StepOutcome(self._observation(), reward, s.done, info)


# ---------------------------------------------------------------------------
# Default cluster profiles
#
# The four templates are synthetic diurnal shapes (no harvest at night, a
# midday peak) with daily totals increasing from cluster 1 to cluster 4.
# Only behavior relative to the offline optimum is meaningful; edit or
# replace them freely via profile files.

_CLUSTER_SHAPES = {
    # start hour, end hour, peak hour, peak width (h), daily total (J)
    1: (8, 17, 12.5, 2.6, 50.0),
    2: (7, 19, 13.0, 3.2, 90.0),
    3: (7, 20, 13.0, 3.8, 130.0),
    4: (6, 20, 12.5, 4.5, 190.0),
}
_CLUSTER_REL_STD = 0.15


def cluster_profile(cluster: int, scale: float = 1.0) -> HarvestProfile:
    """One of the four built-in parametric cluster templates, scaled."""
    if cluster not in _CLUSTER_SHAPES:
        raise RangeError(f"cluster must be in {sorted(_CLUSTER_SHAPES)}, got {cluster}")
    if scale < 0:
        raise RangeError(f"scale must be >= 0, got {scale}")
    start, end, peak, width, total = _CLUSTER_SHAPES[cluster]
    hours = np.arange(24)
    w = np.exp(-0.5 * ((hours - peak) / width) ** 2)
    w[(hours < start) | (hours > end)] = 0.0
    mean = total * scale * w / w.sum()
    return HarvestProfile(kind="parametric", hourly_mean_j=mean,
                          hourly_std_j=_CLUSTER_REL_STD * mean,
                          cluster_label=f"cluster{cluster}")


def default_cluster_profiles() -> dict[str, HarvestProfile]:
    return {f"cluster{i}": cluster_profile(i) for i in (1, 2, 3, 4)}


# ---------------------------------------------------------------------------
# File formats: traces are CSV (hour,harvest_j); profiles are key = value
# text files with the HarvestProfile fields.

def save_trace_csv(path, trace_j: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["hour", "harvest_j"])
        for hour, value in enumerate(np.asarray(trace_j, dtype=np.float64)):
            writer.writerow([hour, repr(float(value))])


def load_trace_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise RangeError(f"{path}: empty trace file")
    values = np.zeros(len(rows))
    for row in rows:
        values[int(row["hour"])] = float(row["harvest_j"])
    if np.any(values < 0):
        raise ConfigInvariantError(f"{path}: negative harvest value")
    return values


def _fmt_row(values: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_profile(path, profile: HarvestProfile) -> None:
    cp = ConfigParser()
    cp["profile"] = {
        "kind": profile.kind,
        "cluster_label": profile.cluster_label,
        "hourly_mean_j": _fmt_row(profile.hourly_mean_j),
        "hourly_std_j": _fmt_row(profile.hourly_std_j),
    }
    if profile.trace_j is not None:
        cp["profile"]["trace_j"] = _fmt_row(profile.trace_j)
    with open(path, "w") as f:
        cp.write(f)


def load_profile(path) -> HarvestProfile:
    cp = ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(f"profile file not found: {path}")
    sec = cp["profile"]
    parse = lambda key: np.array([float(v) for v in sec[key].split(",")])
    trace = parse("trace_j") if "trace_j" in sec else None
    return HarvestProfile(kind=sec["kind"],
                          hourly_mean_j=parse("hourly_mean_j"),
                          hourly_std_j=parse("hourly_std_j"),
                          trace_j=trace,
                          cluster_label=sec.get("cluster_label", ""))
