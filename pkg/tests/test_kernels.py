"""Backend agreement: the compiled core must match the NumPy reference."""

import os
import subprocess
import sys

import numpy as np
import pytest

from enman import kernels
from enman.kernels import _pure

_core = pytest.importorskip("enman.kernels._core",
                            reason="compiled kernels not built")


def random_net(rng, dims):
    ws = [np.ascontiguousarray(rng.normal(size=(dims[i + 1], dims[i])))
          for i in range(len(dims) - 1)]
    bs = [rng.normal(size=dims[i + 1]) for i in range(len(dims) - 1)]
    return ws, bs


@pytest.mark.parametrize("dims,batch", [((5, 64, 1), 64), ((5, 16, 1), 1),
                                        ((3, 8, 8, 2), 17), ((4, 1), 5)])
def test_forward_backward_agree(dims, batch):
    rng = np.random.default_rng(hash(dims) % 2**32)
    ws, bs = random_net(rng, dims)
    x = np.ascontiguousarray(rng.normal(size=(batch, dims[0])))
    y_p, h_p = _pure.mlp_forward(ws, bs, x)
    y_c, h_c = _core.mlp_forward(ws, bs, x)
    np.testing.assert_allclose(y_c, y_p, rtol=1e-12, atol=1e-13)
    for a, b in zip(h_c, h_p):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)

    gy = np.ascontiguousarray(rng.normal(size=(batch, dims[-1])))
    gw_p, gb_p = _pure.mlp_backward(ws, x, h_p, gy)
    gw_c, gb_c = _core.mlp_backward(ws, x, h_c, gy)
    for a, b in zip(gw_c + gb_c, gw_p + gb_p):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_adam_agrees_exactly_over_many_steps():
    rng = np.random.default_rng(0)
    p1 = rng.normal(size=100)
    p2 = p1.copy()
    m1, v1 = np.zeros(100), np.zeros(100)
    m2, v2 = np.zeros(100), np.zeros(100)
    for t in range(1, 51):
        g = rng.normal(size=100)
        _pure.adam_update(p1, g, m1, v1, t, 1e-3, 0.9, 0.999, 1e-8)
        _core.adam_update(p2, g, m2, v2, t, 1e-3, 0.9, 0.999, 1e-8)
    np.testing.assert_allclose(p2, p1, rtol=1e-12)


def test_backend_reports_compiled_when_built():
    assert kernels.BACKEND == "compiled"


def test_env_var_forces_pure_backend():
    code = "from enman import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, ENMAN_KERNEL_BACKEND="pure")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "pure"
