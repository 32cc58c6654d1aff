"""NumPy reference implementation of the MLP kernels.

Always importable. The compiled Cython core (`enman.kernels._core`) takes
priority when it was built; both backends implement the same contract over
float64 C-contiguous arrays.
"""

import numpy as np


def mlp_forward(weights, biases, x):
    """Forward pass: tanh on hidden layers, identity on the output layer.

    x has shape (batch, fan_in). Returns (output, hidden) where output has
    shape (batch, fan_out_last) and hidden is the list of post-tanh hidden
    activations, one (batch, width) array per hidden layer.
    """
    h = x
    hidden = []
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w.T + b)
        hidden.append(h)
    out = h @ weights[-1].T + biases[-1]
    return out, hidden


def mlp_backward(weights, x, hidden, grad_out):
    """Backpropagate grad_out (batch, fan_out_last) to per-layer gradients.

    Returns (grads_w, grads_b) matching the layout of weights/biases.
    """
    n = len(weights)
    grads_w = [None] * n
    grads_b = [None] * n
    g = grad_out
    for i in range(n - 1, -1, -1):
        inp = hidden[i - 1] if i > 0 else x
        grads_w[i] = g.T @ inp
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ weights[i]) * (1.0 - hidden[i - 1] ** 2)
    return grads_w, grads_b


def adam_update(param, grad, m, v, step, lr, beta1, beta2, eps):
    """In-place bias-corrected Adam update on one flat parameter array."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
