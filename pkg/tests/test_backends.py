"""Compiled kernels vs the pure-numpy fallback: same numbers, same API."""

import numpy as np
import pytest

from nextact.backend import BACKEND, kernels, kernels_py

ext = pytest.importorskip(
    "nextact.backend._kernels", reason="compiled kernel extension not built"
)

ATOL = 1e-12


def gru_args(rng, n_in=7, d=5):
    return (
        rng.uniform(-2, 2, n_in),
        rng.uniform(-2, 2, d),
        rng.uniform(-1, 1, (3, n_in, d)),
        rng.uniform(-1, 1, (3, d, d)),
        rng.uniform(-1, 1, (3, d)),
    )


def test_active_backend_is_one_of_the_two():
    assert BACKEND in ("ext", "python")
    assert kernels.NAME == BACKEND


def test_gru_forward_agrees(rng):
    args = gru_args(rng)
    for a, b in zip(ext.gru_forward(*args), kernels_py.gru_forward(*args)):
        np.testing.assert_allclose(a, b, rtol=0, atol=ATOL)


def test_gru_backward_agrees(rng):
    x, h, w, u, b = gru_args(rng)
    hn, z, r, hbar = kernels_py.gru_forward(x, h, w, u, b)
    g = rng.uniform(-1, 1, 5)

    def run(mod):
        bufs = [np.zeros(7), np.zeros(5), np.zeros((3, 7, 5)), np.zeros((3, 5, 5)), np.zeros((3, 5))]
        mod.gru_backward(g, x, h, w, u, z, r, hbar, *bufs)
        return bufs

    for a, b2 in zip(run(ext), run(kernels_py)):
        np.testing.assert_allclose(a, b2, rtol=0, atol=ATOL)


def test_lstm_agrees(rng):
    x = rng.uniform(-2, 2, 6)
    h = rng.uniform(-2, 2, 4)
    c = rng.uniform(-2, 2, 4)
    w = rng.uniform(-1, 1, (4, 6, 4))
    u = rng.uniform(-1, 1, (4, 4, 4))
    b = rng.uniform(-1, 1, (4, 4))
    outs_e = ext.lstm_forward(x, h, c, w, u, b)
    outs_p = kernels_py.lstm_forward(x, h, c, w, u, b)
    for a, b2 in zip(outs_e, outs_p):
        np.testing.assert_allclose(a, b2, rtol=0, atol=ATOL)
    gh = rng.uniform(-1, 1, 4)
    gc = rng.uniform(-1, 1, 4)
    i, f, o, gcand, tc = outs_p[2:]

    def run(mod):
        bufs = [np.zeros(6), np.zeros(4), np.zeros(4),
                np.zeros((4, 6, 4)), np.zeros((4, 4, 4)), np.zeros((4, 4))]
        mod.lstm_backward(gh, gc, x, h, c, w, u, i, f, o, gcand, tc, *bufs)
        return bufs

    for a, b2 in zip(run(ext), run(kernels_py)):
        np.testing.assert_allclose(a, b2, rtol=0, atol=ATOL)


def test_cosine_and_mix_agree(rng):
    h = rng.uniform(-2, 2, 6)
    fmat = rng.uniform(-2, 2, (5, 6))
    fmat[2] = 0.0  # zero-norm row
    s_e, fn_e, hn_e = ext.cosine_scores(h, fmat)
    s_p, fn_p, hn_p = kernels_py.cosine_scores(h, fmat)
    np.testing.assert_allclose(s_e, s_p, rtol=0, atol=ATOL)
    np.testing.assert_allclose(fn_e, fn_p, rtol=0, atol=ATOL)
    assert abs(hn_e - hn_p) < ATOL
    # the ordered-accumulation contract makes attend_mix bitwise identical
    np.testing.assert_array_equal(ext.attend_mix(s_p, fmat), kernels_py.attend_mix(s_p, fmat))

    gs = rng.uniform(-1, 1, 5)

    def run_cos(mod):
        dh, dfmat = np.zeros(6), np.zeros((5, 6))
        mod.cosine_scores_backward(gs, h, fmat, s_p, fn_p, hn_p, dh, dfmat)
        return dh, dfmat

    for a, b2 in zip(run_cos(ext), run_cos(kernels_py)):
        np.testing.assert_allclose(a, b2, rtol=0, atol=ATOL)


def test_infonce_agrees(rng):
    h = rng.uniform(-2, 2, 6)
    samples = rng.uniform(-2, 2, (9, 6))
    le, pe = ext.infonce(h, samples, 0.7)
    lp, pp = kernels_py.infonce(h, samples, 0.7)
    assert abs(le - lp) < ATOL
    np.testing.assert_allclose(pe, pp, rtol=0, atol=ATOL)
    dh_e, dh_p = np.zeros(6), np.zeros(6)
    ext.infonce_backward(1.3, samples, pp, 0.7, dh_e)
    kernels_py.infonce_backward(1.3, samples, pp, 0.7, dh_p)
    np.testing.assert_allclose(dh_e, dh_p, rtol=0, atol=ATOL)


def test_full_loss_agrees_across_backends(rng):
    """End to end: the graph built on either kernel set gives the same loss
    and gradients (to rounding)."""
    from nextact import model as md
    from nextact.data import AnticipationInstance
    from nextact.seeding import stream

    params = md.SrlParams.create(8, 3, 3, 3, stream(0, "init"), dropout=0.0,
                                 alpha=0.6, beta=0.7)
    inst = AnticipationInstance(
        "x", rng.uniform(-1, 1, (3, 8)), rng.uniform(-1, 1, (2, 8)), 2, (0, 1, 2)
    )
    negs = [rng.uniform(-1, 1, (3, 8)) for _ in range(2)]

    import nextact.backend as backend_pkg

    results = {}
    original = backend_pkg.kernels
    for name, mod in (("ext", ext), ("python", kernels_py)):
        for target in ("nextact.layers", "nextact.model"):
            import importlib
            importlib.import_module(target).K = mod
        total, comps, bound = md.forward_loss(params, inst, negs, training=False)
        bound.graph.backward(total)
        results[name] = (total.item(), {k: v.copy() for k, v in bound.grad_by_name().items()})
    for target in ("nextact.layers", "nextact.model"):
        import importlib
        importlib.import_module(target).K = original

    assert abs(results["ext"][0] - results["python"][0]) < 1e-10
    for name in results["ext"][1]:
        np.testing.assert_allclose(
            results["ext"][1][name], results["python"][1][name], rtol=0, atol=1e-10
        )
