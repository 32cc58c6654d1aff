"""Tiny fully-connected network engine with analytic backpropagation.

Networks are plain lists of float64 weight/bias arrays with tanh hidden
layers and an identity output. A state-independent Gaussian head (mean from
the net, one learnable log-std) provides continuous actions. Training runs
in float64 throughout; the float32 cut happens only at export time in
`enman.policyio`. Array math is delegated to `enman.kernels`, which picks
the compiled backend when available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from enman import kernels

LOG_2PI = math.log(2.0 * math.pi)


class ShapeError(ValueError):
    """Array dimensions do not match the network layout."""


class StaleCacheError(RuntimeError):
    """backward() was called with a cache from a different forward pass."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


@dataclass
class MlpParams:
    """Affine layers; tanh on hidden layers, identity on the output layer.

    weights[i] has shape (fan_out, fan_in); biases[i] has shape (fan_out,).
    Adjacent layers must chain: weights[i+1].shape[1] == weights[i].shape[0].
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i}: fan_in {w.shape[1]} does not chain")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def flat(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


# The value network is structurally just an MLP mapping the observation to
# one scalar; give it its own name for readability at call sites.
ValueParams = MlpParams


@dataclass
class PolicyParams:
    """Gaussian policy: trunk outputs the mean, log_std is one learnable real.

    log_std is stored as a shape-(1,) array so the optimizer can update it
    in place alongside the trunk parameters.
    """

    trunk: MlpParams
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @property
    def std(self) -> float:
        return float(np.exp(self.log_std[0]))

    def flat(self) -> list[np.ndarray]:
        return self.trunk.flat() + [self.log_std]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.trunk.copy(), self.log_std.copy())


@dataclass
class ForwardCache:
    """Activations retained by forward() for the matching backward()."""

    x: np.ndarray                 # (batch, fan_in)
    hidden: list[np.ndarray]      # post-tanh, one (batch, width) per hidden layer
    params: MlpParams             # the exact params object forward() ran with


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a single vector or a (batch, fan_in) matrix.

    Returns the output with the same leading shape as the input, plus the
    cache needed by backward(). Pure: params are never modified.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    x2d = np.ascontiguousarray(arr.reshape(1, -1) if single else arr)
    fan_in = params.weights[0].shape[1]
    if x2d.shape[1] != fan_in:
        raise ShapeError(f"input has {x2d.shape[1]} features, net expects {fan_in}")
    out, hidden = kernels.mlp_forward(params.weights, params.biases, x2d)
    cache = ForwardCache(x2d, hidden, params)
    return (out[0] if single else out), cache


def backward(params: MlpParams, cache: ForwardCache,
             output_grad: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradients of sum(output * output_grad) w.r.t. every parameter.

    output_grad must match the forward batch; returns (grads_w, grads_b).
    """
    if cache.params is not params:
        raise StaleCacheError("cache does not belong to these params")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g.reshape(1, -1) if g.shape[0] == params.weights[-1].shape[0] \
            else g.reshape(-1, 1)
    g = np.ascontiguousarray(g)
    if g.shape != (cache.x.shape[0], params.weights[-1].shape[0]):
        raise ShapeError(f"output_grad shape {g.shape} does not match forward batch")
    return kernels.mlp_backward(params.weights, cache.x, cache.hidden, g)


def gaussian_logprob(mean, log_std, sample):
    """Log density of N(mean, exp(log_std)^2) at sample. Broadcasts."""
    z = (np.asarray(sample) - mean) * np.exp(-log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def gaussian_entropy(log_std):
    """Differential entropy of N(., exp(log_std)^2)."""
    return 0.5 * (LOG_2PI + 1.0) + log_std


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update, in place. Returns params.

    Rejects non-finite gradients before touching any accumulator, so a bad
    batch never corrupts the optimizer state.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("params/grads do not match the optimizer state")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update rejected")
    state.step_count += 1
    t = state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        kernels.adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                            m.reshape(-1), v.reshape(-1),
                            t, state.lr, state.beta1, state.beta2, state.eps)
    return params


def init_mlp(dims: tuple[int, ...], seed, out_scale: float = 1.0) -> MlpParams:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights, zero biases.

    out_scale multiplies the output layer's weights (used to start the
    policy mean near zero).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = math.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if i == len(dims) - 2:
            w *= out_scale
        weights.append(np.ascontiguousarray(w))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def init_policy(dims: tuple[int, ...], seed) -> PolicyParams:
    """Policy net: output layer scaled by 0.01, log_std starts at 0."""
    return PolicyParams(init_mlp(dims, seed, out_scale=0.01), np.zeros(1))


def init_value(dims: tuple[int, ...], seed) -> ValueParams:
    return init_mlp(dims, seed)
