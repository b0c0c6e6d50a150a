#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Times the per-step kernels (GRU forward/backward, cosine reattention,
contrastive loss) directly for both implementations, then one full training
step (forward + backward + gradient reduction) under whichever backend is
active.  Run the script twice, once with ``NEXTACT_BACKEND=python``, to get
the end-to-end comparison:

    python benchmarks/bench_backends.py
    NEXTACT_BACKEND=python python benchmarks/bench_backends.py
"""

import time

import numpy as np

from nextact.backend import BACKEND, kernels_py

try:
    from nextact.backend import _kernels
except ImportError:
    _kernels = None

from nextact import seeding
from nextact.data import AnticipationInstance
from nextact.model import SrlParams, forward_loss

D = 32
O = 6
N = 16
REPS = 20000


def time_it(fn, reps=REPS):
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps * 1e6  # microseconds/call


def bench_kernels(mod, rng):
    x = rng.normal(size=2 * D)
    h = rng.normal(size=D)
    w = rng.normal(size=(3, 2 * D, D)) * 0.1
    u = rng.normal(size=(3, D, D)) * 0.1
    b = rng.normal(size=(3, D)) * 0.1
    g = rng.normal(size=D)
    fmat = np.ascontiguousarray(rng.normal(size=(O, D)))
    samples = np.ascontiguousarray(rng.normal(size=(N, D)))

    hn, z, r, hbar = mod.gru_forward(x, h, w, u, b)
    s, fnorms, hnorm = mod.cosine_scores(h, fmat)
    _, probs = mod.infonce(h, samples, 1.0)

    dx, dh = np.zeros(2 * D), np.zeros(D)
    dw, du, db = np.zeros_like(w), np.zeros_like(u), np.zeros_like(b)
    ds, dfmat = np.zeros(O), np.zeros((O, D))

    rows = {
        "gru_forward": lambda: mod.gru_forward(x, h, w, u, b),
        "gru_backward": lambda: mod.gru_backward(
            g, x, h, w, u, z, r, hbar, dx, dh, dw, du, db
        ),
        "cosine_scores": lambda: mod.cosine_scores(h, fmat),
        "cosine_backward": lambda: mod.cosine_scores_backward(
            s, h, fmat, s, fnorms, hnorm, dh, dfmat
        ),
        "attend_mix": lambda: mod.attend_mix(s, fmat),
        "infonce": lambda: mod.infonce(h, samples, 1.0),
        "infonce_backward": lambda: mod.infonce_backward(1.0, samples, probs, 1.0, dh),
    }
    return {name: time_it(fn) for name, fn in rows.items()}


def bench_instance(rng):
    params = SrlParams.create(D, 20, 4, 5, rng, dropout=0.0, alpha=0.5, beta=0.5)
    inst = AnticipationInstance(
        video_id="bench",
        observed=rng.normal(size=(O, D)),
        future=rng.normal(size=(8, D)),
        horizon=8,
        labels=(3, 1, 2),
    )
    negatives = [rng.normal(size=(N - 1, D)) for _ in range(8)]

    def one():
        loss, _, bound = forward_loss(params, inst, negatives, rng=None, training=False)
        bound.graph.backward(loss)
        return bound.grad_by_name()

    one()
    t0 = time.perf_counter()
    reps = 300
    for _ in range(reps):
        one()
    return (time.perf_counter() - t0) / reps * 1e3  # ms/instance


def main():
    rng = seeding.stream(0, "bench")
    impls = {"python": kernels_py}
    if _kernels is not None:
        impls["ext"] = _kernels

    results = {name: bench_kernels(mod, rng) for name, mod in impls.items()}
    names = list(next(iter(results.values())))
    cols = list(results)
    print(f"kernel-level timings, microseconds/call (d={D}, o={O}, N={N})")
    header = f"{'kernel':<18}" + "".join(f"{c:>12}" for c in cols)
    if len(cols) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for n in names:
        row = f"{n:<18}" + "".join(f"{results[c][n]:>12.2f}" for c in cols)
        if len(cols) == 2:
            row += f"{results['python'][n] / results['ext'][n]:>9.1f}x"
        print(row)

    ms = bench_instance(rng)
    print(f"\nend-to-end (active backend = {BACKEND}):")
    print(f"  forward+backward, one 8-step instance: {ms:.3f} ms "
          f"({1000.0 / ms:.0f} instances/s)")


if __name__ == "__main__":
    main()
