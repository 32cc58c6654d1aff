"""Array-math kernels for the tiny MLP, with a compiled fast path.

`_core` is a Cython extension built at install time; `_pure` is the NumPy
reference. The two implement identical contracts, and when the extension is
present the dispatch below routes each call to whichever side wins for that
shape (see benchmarks/bench_kernels.py): scalar loops beat BLAS dispatch
overhead on single-observation forwards and on Adam's elementwise update,
while vectorized tanh and dgemm win on minibatch-sized forwards.

Set ENMAN_KERNEL_BACKEND=pure to force the NumPy backend throughout.
"""

import os

from enman.kernels import _pure

BACKEND = "pure"
_core = None

if os.environ.get("ENMAN_KERNEL_BACKEND", "").lower() != "pure":
    try:
        import enman.kernels._core as _core  # noqa: F811 (module, not attribute)

        BACKEND = "compiled"
    except ImportError:
        pass

if _core is None:
    mlp_forward = _pure.mlp_forward
    mlp_backward = _pure.mlp_backward
    adam_update = _pure.adam_update
else:
    # Crossovers measured on the 5->64->1 training shapes.
    _FORWARD_COMPILED_MAX_BATCH = 16
    _BACKWARD_COMPILED_MIN_BATCH = 256

    def mlp_forward(weights, biases, x):
        if x.shape[0] <= _FORWARD_COMPILED_MAX_BATCH:
            return _core.mlp_forward(weights, biases, x)
        return _pure.mlp_forward(weights, biases, x)

    def mlp_backward(weights, x, hidden, grad_out):
        if x.shape[0] >= _BACKWARD_COMPILED_MIN_BATCH:
            return _core.mlp_backward(weights, x, hidden, grad_out)
        return _pure.mlp_backward(weights, x, hidden, grad_out)

    adam_update = _core.adam_update

__all__ = ["BACKEND", "mlp_forward", "mlp_backward", "adam_update"]
