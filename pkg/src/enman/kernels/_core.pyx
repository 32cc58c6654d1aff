# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled MLP kernels; same contract as enman.kernels._pure."""

from libc.math cimport sqrt, tanh

import numpy as np


def mlp_forward(list weights, list biases, double[:, ::1] x):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l, i, j, k, batch, fan_in, fan_out
    cdef double acc
    cdef double[:, ::1] h = x
    cdef double[:, ::1] w
    cdef double[::1] b
    cdef double[:, ::1] out
    hidden = []
    for l in range(n_layers):
        w = weights[l]
        b = biases[l]
        batch = h.shape[0]
        fan_out = w.shape[0]
        fan_in = w.shape[1]
        out_arr = np.empty((batch, fan_out))
        out = out_arr
        if l < n_layers - 1:
            for i in range(batch):
                for j in range(fan_out):
                    acc = b[j]
                    for k in range(fan_in):
                        acc += w[j, k] * h[i, k]
                    out[i, j] = tanh(acc)
            hidden.append(out_arr)
        else:
            for i in range(batch):
                for j in range(fan_out):
                    acc = b[j]
                    for k in range(fan_in):
                        acc += w[j, k] * h[i, k]
                    out[i, j] = acc
        h = out
    return out_arr, hidden


def mlp_backward(list weights, double[:, ::1] x, list hidden, double[:, ::1] grad_out):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l, i, j, k, batch, fan_in, fan_out
    cdef double acc, gval, hval
    cdef double[:, ::1] g = grad_out
    cdef double[:, ::1] w, inp, gw, gprev
    cdef double[::1] gb
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    batch = x.shape[0]
    for l in range(n_layers - 1, -1, -1):
        w = weights[l]
        inp = hidden[l - 1] if l > 0 else x
        fan_out = w.shape[0]
        fan_in = w.shape[1]
        gw_arr = np.zeros((fan_out, fan_in))
        gb_arr = np.zeros(fan_out)
        gw = gw_arr
        gb = gb_arr
        for i in range(batch):
            for j in range(fan_out):
                gval = g[i, j]
                gb[j] += gval
                for k in range(fan_in):
                    gw[j, k] += gval * inp[i, k]
        grads_w[l] = gw_arr
        grads_b[l] = gb_arr
        if l > 0:
            gprev_arr = np.empty((batch, fan_in))
            gprev = gprev_arr
            for i in range(batch):
                for k in range(fan_in):
                    acc = 0.0
                    for j in range(fan_out):
                        acc += g[i, j] * w[j, k]
                    hval = inp[i, k]
                    gprev[i, k] = acc * (1.0 - hval * hval)
            g = gprev_arr
    return grads_w, grads_b


def adam_update(double[::1] param, double[::1] grad, double[::1] m,
                double[::1] v, long step, double lr, double beta1,
                double beta2, double eps):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double one_m_b1 = 1.0 - beta1
    cdef double one_m_b2 = 1.0 - beta2
    cdef double corr1 = 1.0 - beta1 ** step
    cdef double corr2 = 1.0 - beta2 ** step
    cdef double mhat, vhat
    for i in range(n):
        m[i] = beta1 * m[i] + one_m_b1 * grad[i]
        v[i] = beta2 * v[i] + one_m_b2 * grad[i] * grad[i]
        mhat = m[i] / corr1
        vhat = v[i] / corr2
        param[i] -= lr * mhat / (sqrt(vhat) + eps)
