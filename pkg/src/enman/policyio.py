"""Policy serialization and a dependency-free inference kernel.

Two little-endian binary containers:

Deployment bundle (magic "TMAN", float32 payload)::

    offset  field
    0       magic "TMAN" (4 bytes)
    4       format version, u16
    6       layer count L, u16
    8       dims, (L+1) x u16            fan_in, hidden..., fan_out
    .       per layer: weights f32 row-major (fan_out x fan_in), bias f32
    .       log_std f32
    .       capacity_j f32, min_alloc_j f32, reservoir_j f32
    .       horizon_steps u16
    end-4   crc32 of every preceding byte, u32

Training checkpoint (magic "TMCK"): same idea at float64 for the policy net
plus the value net, so a run can be resumed or re-exported exactly.

infer() walks the bundle with plain Python floats and math.tanh only - the
same arithmetic a microcontroller port would do - and maps the Gaussian
mean through the environment's action transform.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from enman.envsim import DeviceConfig
from enman.tinynet import MlpParams, PolicyParams, ValueParams

MAGIC = b"TMAN"
CHECKPOINT_MAGIC = b"TMCK"
VERSION = 1


class PolicyIOError(ValueError):
    pass


class BadMagicError(PolicyIOError):
    pass


class UnsupportedVersionError(PolicyIOError):
    pass


class ChecksumError(PolicyIOError):
    pass


class ObservationShapeError(ValueError):
    pass


@dataclass
class PolicyBundle:
    """Decoded policy plus the device constants inference needs.

    Weights/biases are nested Python lists (float) so infer() runs without
    any third-party dependency. Treat bundles as immutable after load.
    """

    dims: tuple[int, ...]
    weights: list[list[list[float]]]
    biases: list[list[float]]
    log_std: float
    capacity_j: float
    min_alloc_j: float
    reservoir_j: float
    horizon_steps: int


def _encode(policy: PolicyParams, config: DeviceConfig) -> bytes:
    dims = policy.trunk.dims
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<HH", VERSION, len(dims) - 1)
    buf += struct.pack(f"<{len(dims)}H", *dims)
    for w, b in zip(policy.trunk.weights, policy.trunk.biases):
        flat = np.asarray(w, dtype="<f4").reshape(-1)
        buf += flat.tobytes()
        buf += np.asarray(b, dtype="<f4").tobytes()
    buf += struct.pack("<f", float(policy.log_std[0]))
    buf += struct.pack("<fff", config.capacity_j, config.min_alloc_j,
                       config.reservoir_j)
    buf += struct.pack("<H", config.horizon_steps)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


def _decode(data: bytes) -> PolicyBundle:
    if len(data) < 12 or data[:4] != MAGIC:
        raise BadMagicError("not a policy bundle")
    version, n_layers = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"bundle version {version}, expected {VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if crc != zlib.crc32(data[:-4]):
        raise ChecksumError("payload checksum mismatch")
    off = 8
    dims = struct.unpack_from(f"<{n_layers + 1}H", data, off)
    off += 2 * (n_layers + 1)
    weights, biases = [], []
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = struct.unpack_from(f"<{fan_in * fan_out}f", data, off)
        off += 4 * fan_in * fan_out
        b = struct.unpack_from(f"<{fan_out}f", data, off)
        off += 4 * fan_out
        weights.append([list(w[r * fan_in:(r + 1) * fan_in]) for r in range(fan_out)])
        biases.append(list(b))
    (log_std,) = struct.unpack_from("<f", data, off)
    off += 4
    cap, min_alloc, reservoir = struct.unpack_from("<fff", data, off)
    off += 12
    (horizon,) = struct.unpack_from("<H", data, off)
    return PolicyBundle(tuple(dims), weights, biases, log_std,
                        cap, min_alloc, reservoir, horizon)


def export(policy: PolicyParams, config: DeviceConfig, path) -> PolicyBundle:
    """Write the deployment bundle; returns the decoded on-disk content."""
    for p in policy.flat():
        if not np.all(np.isfinite(p)):
            raise PolicyIOError("refusing to export non-finite parameters")
    data = _encode(policy, config)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as exc:
        raise PolicyIOError(f"cannot write bundle to {path}: {exc}") from exc
    return _decode(data)


def load(path) -> PolicyBundle:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise PolicyIOError(f"cannot read bundle from {path}: {exc}") from exc
    return _decode(data)


def bundle_to_params(bundle: PolicyBundle) -> PolicyParams:
    """Reconstruct float64 params from a bundle (for tests/evaluation)."""
    trunk = MlpParams([np.array(w, dtype=np.float64) for w in bundle.weights],
                      [np.array(b, dtype=np.float64) for b in bundle.biases])
    return PolicyParams(trunk, np.array([bundle.log_std]))


def forward_mean(bundle: PolicyBundle, observation) -> float:
    """Gaussian mean from the bundle using stdlib floats only."""
    h = [float(v) for v in observation]
    if len(h) != bundle.dims[0]:
        raise ObservationShapeError(
            f"observation has {len(h)} values, bundle expects {bundle.dims[0]}")
    last = len(bundle.weights) - 1
    for i, (w, b) in enumerate(zip(bundle.weights, bundle.biases)):
        nxt = []
        for row, bias in zip(w, b):
            acc = bias
            for k, x in enumerate(h):
                acc += row[k] * x
            nxt.append(acc if i == last else math.tanh(acc))
        h = nxt
    return h[0]


def infer(bundle: PolicyBundle, observation) -> float:
    """Greedy allocation (J) for one observation; pure and allocation-free.

    Applies the same action transform as the simulator: the mean is the
    requested allocation in joules, clipped to [min_alloc, battery], with a
    forced drain when the battery sits below the idle floor.
    """
    mean = forward_mean(bundle, observation)
    battery_j = float(observation[0]) * bundle.capacity_j
    if battery_j < bundle.min_alloc_j:
        return battery_j
    return min(max(mean, bundle.min_alloc_j), battery_j)


class OpCounts(NamedTuple):
    macs: int
    activations: int
    params: int


def count_ops(bundle: PolicyBundle) -> OpCounts:
    """Analytic per-inference cost from the layer dims alone."""
    dims = bundle.dims
    macs = sum(dims[i] * dims[i + 1] for i in range(len(dims) - 1))
    activations = sum(dims[1:])
    params = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))
    return OpCounts(macs, activations, params + 1)  # +1 for log_std


def instrumented_forward(bundle: PolicyBundle, observation) -> tuple[float, OpCounts]:
    """forward_mean with explicit operation counting, for auditing count_ops."""
    h = [float(v) for v in observation]
    macs = 0
    activations = 0
    params_touched = 0
    last = len(bundle.weights) - 1
    for i, (w, b) in enumerate(zip(bundle.weights, bundle.biases)):
        nxt = []
        for row, bias in zip(w, b):
            acc = bias
            params_touched += 1
            for k, x in enumerate(h):
                acc += row[k] * x
                macs += 1
                params_touched += 1
            nxt.append(acc if i == last else math.tanh(acc))
            activations += 1
        h = nxt
    return h[0], OpCounts(macs, activations, params_touched + 1)


# ---------------------------------------------------------------------------
# float64 training checkpoints

def _encode_net(net: MlpParams) -> bytes:
    dims = net.dims
    buf = bytearray(struct.pack("<H", len(dims) - 1))
    buf += struct.pack(f"<{len(dims)}H", *dims)
    for w, b in zip(net.weights, net.biases):
        buf += np.asarray(w, dtype="<f8").reshape(-1).tobytes()
        buf += np.asarray(b, dtype="<f8").tobytes()
    return bytes(buf)


def _decode_net(data: bytes, off: int) -> tuple[MlpParams, int]:
    (n_layers,) = struct.unpack_from("<H", data, off)
    off += 2
    dims = struct.unpack_from(f"<{n_layers + 1}H", data, off)
    off += 2 * (n_layers + 1)
    weights, biases = [], []
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        # frombuffer views are read-only; copy so training can resume in place
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    return MlpParams(weights, biases), off


def save_checkpoint(path, policy: PolicyParams, value: ValueParams) -> None:
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<H", VERSION)
    buf += _encode_net(policy.trunk)
    buf += struct.pack("<d", float(policy.log_std[0]))
    buf += _encode_net(value)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    try:
        with open(path, "wb") as f:
            f.write(buf)
    except OSError as exc:
        raise PolicyIOError(f"cannot write checkpoint to {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[PolicyParams, ValueParams]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise PolicyIOError(f"cannot read checkpoint from {path}: {exc}") from exc
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError("not a checkpoint file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version}, expected {VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if crc != zlib.crc32(data[:-4]):
        raise ChecksumError("checkpoint checksum mismatch")
    trunk, off = _decode_net(data, 6)
    (log_std,) = struct.unpack_from("<d", data, off)
    value, _ = _decode_net(data, off + 8)
    return PolicyParams(trunk, np.array([log_std])), value
