"""On-policy trainer: clipped-surrogate policy optimization.

Each update round fills a fixed-size trajectory buffer with whole episodes
(fresh random initial battery and harvest draw per episode), computes
one-step advantages and value targets from a frozen snapshot, then runs K
epochs of shuffled minibatch updates against the clipped surrogate plus a
value-error term and an entropy bonus. The buffer is cleared afterwards;
transitions are never reused across rounds.

All randomness derives from one root seed through numpy SeedSequence spawn
keys: (0, episode) for rollouts, (1, update) for minibatch shuffles, (2, i)
for parameter init. Collection is therefore reproducible regardless of how
episodes are distributed across workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from enman.envsim import DeviceConfig, Env, HarvestProfile
from enman.tinynet import (AdamState, PolicyParams, ValueParams, adam_step,
                           backward, forward, gaussian_entropy,
                           gaussian_logprob, init_policy, init_value)


class BufferError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient; carries the offending update index."""

    def __init__(self, update_idx: int, what: str):
        super().__init__(f"update {update_idx}: {what}")
        self.update_idx = update_idx


@dataclass
class HyperParams:
    gamma: float = 1.0
    clip_eps: float = 0.3
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    epochs: int = 10
    minibatch: int = 64
    buffer_size: int = 2048
    episodes: int = 25600          # ~300 update rounds at the defaults
    learning_rate: float = 1e-4
    advantage_normalize: bool = True

    def __post_init__(self):
        if not (0 < self.minibatch <= self.buffer_size):
            raise ValueError("need 0 < minibatch <= buffer_size")
        if self.epochs < 1 or self.clip_eps <= 0:
            raise ValueError("need epochs >= 1 and clip_eps > 0")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")


class TrajectoryBuffer:
    """Fixed-capacity columnar store of transitions for one update round."""

    _COLUMNS = ("actions", "rewards", "dones", "old_logprob", "value",
                "next_value", "advantage", "target")

    def __init__(self, capacity: int, obs_dim: int = 5):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.old_logprob = np.zeros(capacity)
        self.value = np.zeros(capacity)
        self.next_value = np.zeros(capacity)
        self.advantage = np.zeros(capacity)
        self.target = np.zeros(capacity)
        self.n = 0

    def __len__(self) -> int:
        return self.n

    @property
    def full(self) -> bool:
        return self.n == self.capacity

    def append(self, obs, action, reward, next_obs, done, old_logprob):
        if self.full:
            raise BufferError("buffer is full")
        i = self.n
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = done
        self.old_logprob[i] = old_logprob
        self.n = i + 1

    def clear(self):
        self.n = 0


@dataclass
class CollectStats:
    episodes: int
    steps: int
    returns: list[float] = field(default_factory=list)
    terminal_deviations_j: list[float] = field(default_factory=list)
    drained: int = 0


def collect(make_env: Callable[[int], Env], policy: PolicyParams,
            value: ValueParams, buffer: TrajectoryBuffer, seed: int,
            start_episode: int = 0) -> CollectStats:
    """Fill the buffer with on-policy samples, whole episodes at a time.

    make_env(episode_index) supplies the environment for each episode; the
    index also keys the episode's seed, so results do not depend on how
    collection is split across workers. Actions are sampled from the
    Gaussian head; the acting policy's log-probability and the value
    estimates are recorded before any update touches the parameters.
    """
    if buffer.n != 0:
        raise BufferError("collect() needs an empty buffer")
    log_std = float(policy.log_std[0])
    std = math.exp(log_std)
    stats = CollectStats(episodes=0, steps=0)
    episode = start_episode
    while not buffer.full:
        env = make_env(episode)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, episode)))
        _, obs = env.reset("random", seed=rng)
        ep_return = 0.0
        completed = False
        while not buffer.full:
            obs_arr = obs.as_array()
            mean_out, _ = forward(policy.trunk, obs_arr)
            mean = float(mean_out[0])
            action = mean + std * rng.standard_normal()
            logprob = float(gaussian_logprob(mean, log_std, action))
            outcome = env.step(action)
            buffer.append(obs_arr, action, outcome.reward,
                          outcome.next_obs.as_array(), outcome.done, logprob)
            ep_return += outcome.reward
            stats.steps += 1
            obs = outcome.next_obs
            if outcome.done:
                completed = True
                stats.returns.append(ep_return)
                dev = outcome.info.get("terminal_deviation_j")
                if dev is not None:
                    stats.terminal_deviations_j.append(dev)
                if outcome.info["battery_after_j"] == 0.0:
                    stats.drained += 1
                break
        if completed:
            stats.episodes += 1
        episode += 1

    n = buffer.n
    v_obs, _ = forward(value, buffer.obs[:n])
    v_next, _ = forward(value, buffer.next_obs[:n])
    buffer.value[:n] = v_obs[:, 0]
    buffer.next_value[:n] = v_next[:, 0]
    return stats


def compute_advantages(buffer: TrajectoryBuffer, value: ValueParams,
                       gamma: float, normalize: bool = True) -> TrajectoryBuffer:
    """One-step advantages and value targets over a full buffer.

    next_value is forced to zero on terminal transitions. When normalize is
    set, advantages are standardized across the buffer; targets are left in
    reward units either way.
    """
    n = buffer.n
    v_obs, _ = forward(value, buffer.obs[:n])
    v_next, _ = forward(value, buffer.next_obs[:n])
    buffer.value[:n] = v_obs[:, 0]
    buffer.next_value[:n] = np.where(buffer.dones[:n], 0.0, v_next[:, 0])
    buffer.target[:n] = buffer.rewards[:n] + gamma * buffer.next_value[:n]
    adv = buffer.target[:n] - buffer.value[:n]
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    buffer.advantage[:n] = adv
    return buffer


@dataclass
class LossParts:
    total: float
    policy_loss: float
    value_loss: float
    entropy: float


def clipped_surrogate(ratio, advantage, clip_eps):
    """Pointwise min(ratio * A, clip(ratio, 1-eps, 1+eps) * A). Broadcasts."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage,
                      np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage)


def ppo_loss(buffer: TrajectoryBuffer, idx: np.ndarray, policy: PolicyParams,
             value: ValueParams, hp: HyperParams):
    """Clipped-surrogate loss and its analytic gradients on one minibatch.

    Returns (parts, policy_grads, value_grads) where the gradient lists
    line up with PolicyParams.flat() / ValueParams.flat(). The surrogate is
    min(ratio * A, clip(ratio) * A); gradient flows only where the
    unclipped branch attains the min, which is the exact subgradient.
    """
    obs = buffer.obs[idx]
    actions = buffer.actions[idx]
    old_lp = buffer.old_logprob[idx]
    adv = buffer.advantage[idx]
    targets = buffer.target[idx]
    batch = idx.shape[0]

    mean_out, cache_p = forward(policy.trunk, obs)
    mean = mean_out[:, 0]
    log_std = float(policy.log_std[0])
    sigma = math.exp(log_std)
    new_lp = gaussian_logprob(mean, log_std, actions)
    ratio = np.exp(new_lp - old_lp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps) * adv
    surrogate = clipped_surrogate(ratio, adv, hp.clip_eps)
    policy_loss = -float(surrogate.mean())

    v_out, cache_v = forward(value, obs)
    v = v_out[:, 0]
    diff = v - targets
    value_loss = float(np.mean(diff * diff))
    entropy = float(gaussian_entropy(log_std))
    total = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy

    # d(total)/d(new_lp): active only where the unclipped branch is the min.
    dlp = np.where(unclipped <= clipped, unclipped, 0.0) * (-1.0 / batch)
    z = (actions - mean) / sigma
    dmean = dlp * z / sigma
    dlogstd = float(np.sum(dlp * (z * z - 1.0))) - hp.entropy_coef

    gw_p, gb_p = backward(policy.trunk, cache_p, dmean.reshape(-1, 1))
    dv = (2.0 * hp.value_coef / batch) * diff
    gw_v, gb_v = backward(value, cache_v, dv.reshape(-1, 1))

    policy_grads = []
    for w, b in zip(gw_p, gb_p):
        policy_grads.extend((w, b))
    policy_grads.append(np.array([dlogstd]))
    value_grads = []
    for w, b in zip(gw_v, gb_v):
        value_grads.extend((w, b))
    return LossParts(total, policy_loss, value_loss, entropy), policy_grads, value_grads


@dataclass
class UpdateLog:
    update_idx: int
    mean_return: float
    policy_loss: float
    value_loss: float
    entropy: float
    mean_terminal_deviation_j: float


@dataclass
class TrainResult:
    policy: PolicyParams
    value: ValueParams
    log: list[UpdateLog]
    episodes: int


def train(config: DeviceConfig, profiles, hp: HyperParams, seed: int,
          hidden: int = 64, terminal_mode: str = "combined",
          on_update: Callable[[UpdateLog], None] | None = None) -> TrainResult:
    """Run the full training loop; returns trained nets and per-update logs.

    profiles may be one HarvestProfile or a list; episodes rotate through
    the list round-robin. Training stops once hp.episodes episodes have
    been collected. Any non-finite loss aborts with the update index.
    """
    if isinstance(profiles, HarvestProfile):
        profiles = [profiles]
    dims = (5, hidden, 1)
    policy = init_policy(dims, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, 0))))
    value = init_value(dims, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, 1))))
    policy_flat = policy.flat()
    value_flat = value.flat()
    adam_p = AdamState.for_params(policy_flat, hp.learning_rate)
    adam_v = AdamState.for_params(value_flat, hp.learning_rate)
    buffer = TrajectoryBuffer(hp.buffer_size)
    log: list[UpdateLog] = []
    episodes_done = 0
    update_idx = 0

    def make_env(episode: int) -> Env:
        return Env(config, profiles[episode % len(profiles)],
                   terminal_mode=terminal_mode)

    while episodes_done < hp.episodes:
        buffer.clear()
        stats = collect(make_env, policy, value, buffer, seed,
                        start_episode=episodes_done)
        compute_advantages(buffer, value, hp.gamma, hp.advantage_normalize)

        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(1, update_idx)))
        sums = np.zeros(4)
        batches = 0
        for _ in range(hp.epochs):
            order = shuffle_rng.permutation(buffer.n)
            for b in range(buffer.n // hp.minibatch):
                idx = order[b * hp.minibatch:(b + 1) * hp.minibatch]
                parts, pg, vg = ppo_loss(buffer, idx, policy, value, hp)
                if not math.isfinite(parts.total):
                    raise TrainingDiverged(update_idx, f"loss {parts.total}")
                adam_step(adam_p, policy_flat, pg)
                adam_step(adam_v, value_flat, vg)
                sums += (parts.total, parts.policy_loss, parts.value_loss,
                         parts.entropy)
                batches += 1

        mean_return = float(np.mean(stats.returns)) if stats.returns else math.nan
        mean_dev = (float(np.mean(stats.terminal_deviations_j))
                    if stats.terminal_deviations_j else math.nan)
        row = UpdateLog(update_idx, mean_return,
                        float(sums[1] / batches), float(sums[2] / batches),
                        float(sums[3] / batches), mean_dev)
        log.append(row)
        if on_update is not None:
            on_update(row)
        episodes_done += stats.episodes
        update_idx += 1
    return TrainResult(policy, value, log, episodes_done)


LOG_COLUMNS = ("update_idx", "mean_return", "policy_loss", "value_loss",
               "entropy", "mean_terminal_deviation_j")


def write_training_log(path, rows: list[UpdateLog], comment: str | None = None) -> None:
    """Training log CSV; an optional '# ...' provenance line goes first."""
    with open(path, "w", newline="") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(LOG_COLUMNS)
        for r in rows:
            writer.writerow([r.update_idx, repr(r.mean_return),
                             repr(r.policy_loss), repr(r.value_loss),
                             repr(r.entropy), repr(r.mean_terminal_deviation_j)])
