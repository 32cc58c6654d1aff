"""Benchmark the compiled kernels against the NumPy fallback.

Times the three kernel entry points on training-representative shapes: the
5->64->1 network at rollout batch (1), minibatch (64) and full-buffer (2048)
sizes. Run from the repo root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from enman.kernels import _pure

try:
    from enman.kernels import _core
except ImportError:
    _core = None


def bench(fn, *args, repeat=200):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat * 1e6  # us/call


def net(rng, dims=(5, 64, 1)):
    ws = [np.ascontiguousarray(rng.normal(size=(dims[i + 1], dims[i])))
          for i in range(len(dims) - 1)]
    bs = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return ws, bs


def main():
    rng = np.random.default_rng(0)
    ws, bs = net(rng)
    rows = []
    for batch in (1, 64, 2048):
        x = np.ascontiguousarray(rng.normal(size=(batch, 5)))
        gy = np.ascontiguousarray(rng.normal(size=(batch, 1)))
        repeat = 2000 if batch <= 64 else 100

        t_pure_f = bench(_pure.mlp_forward, ws, bs, x, repeat=repeat)
        _, hidden = _pure.mlp_forward(ws, bs, x)
        t_pure_b = bench(_pure.mlp_backward, ws, x, hidden, gy, repeat=repeat)
        if _core is not None:
            t_core_f = bench(_core.mlp_forward, ws, bs, x, repeat=repeat)
            t_core_b = bench(_core.mlp_backward, ws, x, hidden, gy, repeat=repeat)
        else:
            t_core_f = t_core_b = float("nan")
        rows.append((f"forward  B={batch}", t_pure_f, t_core_f))
        rows.append((f"backward B={batch}", t_pure_b, t_core_b))

    p = rng.normal(size=450)
    g = rng.normal(size=450)
    m = np.zeros(450)
    v = np.zeros(450)
    t_pure_a = bench(_pure.adam_update, p, g, m, v, 10, 1e-4, 0.9, 0.999, 1e-8,
                     repeat=2000)
    if _core is not None:
        t_core_a = bench(_core.adam_update, p, g, m, v, 10, 1e-4, 0.9, 0.999,
                         1e-8, repeat=2000)
    else:
        t_core_a = float("nan")
    rows.append(("adam n=450", t_pure_a, t_core_a))

    print(f"{'kernel':<16} {'pure us':>10} {'compiled us':>12} {'speedup':>8}")
    for name, pure_t, core_t in rows:
        speed = pure_t / core_t if core_t == core_t else float("nan")
        print(f"{name:<16} {pure_t:>10.2f} {core_t:>12.2f} {speed:>7.1f}x")
    if _core is None:
        print("\ncompiled kernels not built; showing pure backend only")


if __name__ == "__main__":
    main()
