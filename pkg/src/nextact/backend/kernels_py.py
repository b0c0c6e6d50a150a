"""Pure-numpy implementations of the hot per-step kernels.

This is the fallback backend selected when the compiled extension is missing
(or when ``NEXTACT_BACKEND=python``).  Function signatures and numerics match
``_kernels.pyx``; both use the same sigmoid form (tanh-based) and the same
accumulation order in ``attend_mix`` so the two backends agree to rounding.

Forward kernels allocate and return their outputs; backward kernels
*accumulate* (+=) into caller-provided gradient buffers, which is what lets
the reverse sweep run without per-step allocations.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# GRU step with gate blocks w:(3,in,d), u:(3,d,d), b:(3,d) in order z, r, h:
#   z = sigmoid(x w[0] + h u[0] + b[0])
#   r = sigmoid(x w[1] + h u[1] + b[1])
#   hbar = tanh(x w[2] + (r*h) u[2] + b[2])
#   h' = (1-z)*h + z*hbar


def gru_forward(x, h, w, u, b):
    xw = x @ w  # (3, d)
    z = _sigmoid(xw[0] + h @ u[0] + b[0])
    r = _sigmoid(xw[1] + h @ u[1] + b[1])
    hbar = np.tanh(xw[2] + (r * h) @ u[2] + b[2])
    h_new = (1.0 - z) * h + z * hbar
    return h_new, z, r, hbar


def gru_backward(g, x, h, w, u, z, r, hbar, dx, dh, dw, du, db):
    dz = g * (hbar - h) * z * (1.0 - z)
    dhb = g * z * (1.0 - hbar * hbar)
    drh = u[2] @ dhb
    dr = drh * h * r * (1.0 - r)

    pre = np.stack([dz, dr, dhb])  # (3, d)
    dw += x[:, None] * pre[:, None, :]
    du[0] += np.outer(h, dz)
    du[1] += np.outer(h, dr)
    du[2] += np.outer(r * h, dhb)
    db += pre
    dx += w[0] @ dz + w[1] @ dr + w[2] @ dhb
    dh += g * (1.0 - z) + drh * r + u[0] @ dz + u[1] @ dr


# ---------------------------------------------------------------------------
# LSTM step with gate blocks in order i, f, o, g:
#   i/f/o = sigmoid(x w[k] + h u[k] + b[k]), gc = tanh(x w[3] + h u[3] + b[3])
#   c' = f*c + i*gc ; h' = o * tanh(c')


def lstm_forward(x, h, c, w, u, b):
    pre = x @ w + h @ u + b  # (4, d)
    i = _sigmoid(pre[0])
    f = _sigmoid(pre[1])
    o = _sigmoid(pre[2])
    gc = np.tanh(pre[3])
    c_new = f * c + i * gc
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, i, f, o, gc, tc


def lstm_backward(gh, gc_up, x, h, c, w, u, i, f, o, gc, tc,
                  dx, dh, dc, dw, du, db):
    do = gh * tc * o * (1.0 - o)
    dc_new = gc_up + gh * o * (1.0 - tc * tc)
    df = dc_new * c * f * (1.0 - f)
    di = dc_new * gc * i * (1.0 - i)
    dg = dc_new * i * (1.0 - gc * gc)

    pre = np.stack([di, df, do, dg])  # (4, d)
    dw += x[:, None] * pre[:, None, :]
    du += h[:, None] * pre[:, None, :]
    db += pre
    dx += pre[0] @ w[0].T + pre[1] @ w[1].T + pre[2] @ w[2].T + pre[3] @ w[3].T
    dh += pre[0] @ u[0].T + pre[1] @ u[1].T + pre[2] @ u[2].T + pre[3] @ u[3].T
    dc += dc_new * f


# ---------------------------------------------------------------------------
# Cosine reattention scores: s_j = cos(F_j, h), with s_j = 0 whenever either
# vector has zero norm; results clipped into [-1, 1] against float rounding.


def cosine_scores(h, fmat):
    o = fmat.shape[0]
    hnorm = float(np.sqrt(h @ h))
    fnorms = np.sqrt(np.einsum("ij,ij->i", fmat, fmat))
    s = np.zeros(o)
    if hnorm > 0.0:
        ok = fnorms > 0.0
        s[ok] = (fmat[ok] @ h) / (fnorms[ok] * hnorm)
        np.clip(s, -1.0, 1.0, out=s)
    return s, fnorms, hnorm


def cosine_scores_backward(gs, h, fmat, s, fnorms, hnorm, dh, dfmat):
    if hnorm == 0.0:
        return
    hu = h / hnorm
    for j in range(fmat.shape[0]):
        fn = fnorms[j]
        if fn == 0.0:
            continue
        fu = fmat[j] / fn
        dh += gs[j] * (fu - s[j] * hu) / hnorm
        dfmat[j] += gs[j] * (hu - s[j] * fu) / fn


# ---------------------------------------------------------------------------
# Reattended mix: f1 = sum_j s_j F_j.  The explicit j-ordered loop keeps the
# accumulation order identical to the compiled backend (bitwise-testable).


def attend_mix(s, fmat):
    f1 = np.zeros(fmat.shape[1])
    for j in range(fmat.shape[0]):
        f1 += s[j] * fmat[j]
    return f1


def attend_mix_backward(g, s, fmat, ds, dfmat):
    ds += fmat @ g
    dfmat += np.outer(s, g)


# ---------------------------------------------------------------------------
# Contrastive revision loss over dot-product logits with the positive at row
# 0 of ``samples``:  loss = logsumexp(l) - l[0], l_j = inv_temp * h.x_j.
# Exact, overflow-free form of cross-entropy over softmax(logits).


def infonce(h, samples, inv_temp):
    logits = inv_temp * (samples @ h)
    m = logits.max()
    shifted = np.exp(logits - m)
    lse = m + np.log(shifted.sum())
    probs = shifted / shifted.sum()
    return float(lse - logits[0]), probs


def infonce_backward(g, samples, probs, inv_temp, dh):
    dh += g * inv_temp * (probs @ samples - samples[0])
