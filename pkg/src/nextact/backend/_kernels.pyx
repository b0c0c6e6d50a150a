# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels (GRU/LSTM step, cosine reattention, InfoNCE).

Signature- and semantics-compatible with ``kernels_py``; see that module for
the reference formulas.  Forward kernels return fresh arrays; backward
kernels accumulate into caller-provided gradient buffers.  Loops run
row-major over the weight matrices.
"""

import numpy as np

from libc.math cimport exp as cexp, log as clog, sqrt as csqrt, tanh as ctanh

NAME = "ext"


cdef inline double _sig(double v) noexcept nogil:
    return 0.5 * (1.0 + ctanh(0.5 * v))


def gru_forward(double[::1] x, double[::1] h,
                double[:, :, ::1] w, double[:, :, ::1] u, double[:, ::1] b):
    cdef Py_ssize_t n_in = x.shape[0]
    cdef Py_ssize_t d = h.shape[0]
    hnew_arr = np.empty(d)
    z_arr = np.empty(d)
    r_arr = np.empty(d)
    hbar_arr = np.empty(d)
    acc_arr = np.empty((3, d))
    cdef double[::1] hnew = hnew_arr, z = z_arr, r = r_arr, hbar = hbar_arr
    cdef double[:, ::1] acc = acc_arr
    cdef Py_ssize_t i, j
    cdef double xi, hi, rh
    with nogil:
        for j in range(d):
            acc[0, j] = b[0, j]
            acc[1, j] = b[1, j]
            acc[2, j] = b[2, j]
        for i in range(n_in):
            xi = x[i]
            for j in range(d):
                acc[0, j] += xi * w[0, i, j]
                acc[1, j] += xi * w[1, i, j]
                acc[2, j] += xi * w[2, i, j]
        for i in range(d):
            hi = h[i]
            for j in range(d):
                acc[0, j] += hi * u[0, i, j]
                acc[1, j] += hi * u[1, i, j]
        for j in range(d):
            z[j] = _sig(acc[0, j])
            r[j] = _sig(acc[1, j])
        for i in range(d):
            rh = r[i] * h[i]
            for j in range(d):
                acc[2, j] += rh * u[2, i, j]
        for j in range(d):
            hbar[j] = ctanh(acc[2, j])
            hnew[j] = (1.0 - z[j]) * h[j] + z[j] * hbar[j]
    return hnew_arr, z_arr, r_arr, hbar_arr


def gru_backward(double[::1] g, double[::1] x, double[::1] h,
                 double[:, :, ::1] w, double[:, :, ::1] u,
                 double[::1] z, double[::1] r, double[::1] hbar,
                 double[::1] dx, double[::1] dh,
                 double[:, :, ::1] dw, double[:, :, ::1] du, double[:, ::1] db):
    cdef Py_ssize_t n_in = x.shape[0]
    cdef Py_ssize_t d = h.shape[0]
    tmp = np.empty((3, d))
    cdef double[:, ::1] t = tmp  # rows: dz, dhb, dr (pre-activation adjoints)
    cdef Py_ssize_t i, j
    cdef double acc, drh, xi, hi, rh
    with nogil:
        for j in range(d):
            t[0, j] = g[j] * (hbar[j] - h[j]) * z[j] * (1.0 - z[j])
            t[1, j] = g[j] * z[j] * (1.0 - hbar[j] * hbar[j])
        for i in range(d):
            drh = 0.0
            for j in range(d):
                drh += u[2, i, j] * t[1, j]
            t[2, i] = drh * h[i] * r[i] * (1.0 - r[i])
            dh[i] += g[i] * (1.0 - z[i]) + drh * r[i]
        for i in range(n_in):
            xi = x[i]
            acc = 0.0
            for j in range(d):
                dw[0, i, j] += xi * t[0, j]
                dw[1, i, j] += xi * t[2, j]
                dw[2, i, j] += xi * t[1, j]
                acc += w[0, i, j] * t[0, j] + w[1, i, j] * t[2, j] + w[2, i, j] * t[1, j]
            dx[i] += acc
        for i in range(d):
            hi = h[i]
            rh = r[i] * hi
            acc = 0.0
            for j in range(d):
                du[0, i, j] += hi * t[0, j]
                du[1, i, j] += hi * t[2, j]
                du[2, i, j] += rh * t[1, j]
                acc += u[0, i, j] * t[0, j] + u[1, i, j] * t[2, j]
            dh[i] += acc
        for j in range(d):
            db[0, j] += t[0, j]
            db[1, j] += t[2, j]
            db[2, j] += t[1, j]


def lstm_forward(double[::1] x, double[::1] h, double[::1] c,
                 double[:, :, ::1] w, double[:, :, ::1] u, double[:, ::1] b):
    cdef Py_ssize_t n_in = x.shape[0]
    cdef Py_ssize_t d = h.shape[0]
    hnew_arr = np.empty(d); cnew_arr = np.empty(d)
    i_arr = np.empty(d); f_arr = np.empty(d); o_arr = np.empty(d)
    g_arr = np.empty(d); tc_arr = np.empty(d)
    acc_arr = np.empty((4, d))
    cdef double[::1] hnew = hnew_arr, cnew = cnew_arr
    cdef double[::1] ig = i_arr, fg = f_arr, og = o_arr, gg = g_arr, tc = tc_arr
    cdef double[:, ::1] acc = acc_arr
    cdef Py_ssize_t i, j
    cdef double xi, hi
    with nogil:
        for j in range(d):
            acc[0, j] = b[0, j]
            acc[1, j] = b[1, j]
            acc[2, j] = b[2, j]
            acc[3, j] = b[3, j]
        for i in range(n_in):
            xi = x[i]
            for j in range(d):
                acc[0, j] += xi * w[0, i, j]
                acc[1, j] += xi * w[1, i, j]
                acc[2, j] += xi * w[2, i, j]
                acc[3, j] += xi * w[3, i, j]
        for i in range(d):
            hi = h[i]
            for j in range(d):
                acc[0, j] += hi * u[0, i, j]
                acc[1, j] += hi * u[1, i, j]
                acc[2, j] += hi * u[2, i, j]
                acc[3, j] += hi * u[3, i, j]
        for j in range(d):
            ig[j] = _sig(acc[0, j])
            fg[j] = _sig(acc[1, j])
            og[j] = _sig(acc[2, j])
            gg[j] = ctanh(acc[3, j])
            cnew[j] = fg[j] * c[j] + ig[j] * gg[j]
            tc[j] = ctanh(cnew[j])
            hnew[j] = og[j] * tc[j]
    return hnew_arr, cnew_arr, i_arr, f_arr, o_arr, g_arr, tc_arr


def lstm_backward(double[::1] gh, double[::1] gcu, double[::1] x, double[::1] h, double[::1] c,
                  double[:, :, ::1] w, double[:, :, ::1] u,
                  double[::1] ig, double[::1] fg, double[::1] og, double[::1] gg, double[::1] tc,
                  double[::1] dx, double[::1] dh, double[::1] dc,
                  double[:, :, ::1] dw, double[:, :, ::1] du, double[:, ::1] db):
    cdef Py_ssize_t n_in = x.shape[0]
    cdef Py_ssize_t d = h.shape[0]
    tmp = np.empty((4, d))
    cdef double[:, ::1] t = tmp  # rows: di, df, do, dg (pre-activation adjoints)
    cdef Py_ssize_t i, j
    cdef double dcn, acc, xi, hi
    with nogil:
        for j in range(d):
            t[2, j] = gh[j] * tc[j] * og[j] * (1.0 - og[j])
            dcn = gcu[j] + gh[j] * og[j] * (1.0 - tc[j] * tc[j])
            t[1, j] = dcn * c[j] * fg[j] * (1.0 - fg[j])
            t[0, j] = dcn * gg[j] * ig[j] * (1.0 - ig[j])
            t[3, j] = dcn * ig[j] * (1.0 - gg[j] * gg[j])
            dc[j] += dcn * fg[j]
            db[0, j] += t[0, j]
            db[1, j] += t[1, j]
            db[2, j] += t[2, j]
            db[3, j] += t[3, j]
        for i in range(n_in):
            xi = x[i]
            acc = 0.0
            for j in range(d):
                dw[0, i, j] += xi * t[0, j]
                dw[1, i, j] += xi * t[1, j]
                dw[2, i, j] += xi * t[2, j]
                dw[3, i, j] += xi * t[3, j]
                acc += w[0, i, j] * t[0, j] + w[1, i, j] * t[1, j]
                acc += w[2, i, j] * t[2, j] + w[3, i, j] * t[3, j]
            dx[i] += acc
        for i in range(d):
            hi = h[i]
            acc = 0.0
            for j in range(d):
                du[0, i, j] += hi * t[0, j]
                du[1, i, j] += hi * t[1, j]
                du[2, i, j] += hi * t[2, j]
                du[3, i, j] += hi * t[3, j]
                acc += u[0, i, j] * t[0, j] + u[1, i, j] * t[1, j]
                acc += u[2, i, j] * t[2, j] + u[3, i, j] * t[3, j]
            dh[i] += acc


def cosine_scores(double[::1] h, double[:, ::1] fmat):
    cdef Py_ssize_t o = fmat.shape[0]
    cdef Py_ssize_t d = fmat.shape[1]
    s_arr = np.zeros(o)
    fnorms_arr = np.empty(o)
    cdef double[::1] s = s_arr, fnorms = fnorms_arr
    cdef Py_ssize_t i, j
    cdef double hn = 0.0, fn, dp, val
    with nogil:
        for i in range(d):
            hn += h[i] * h[i]
        hn = csqrt(hn)
        for j in range(o):
            fn = 0.0
            dp = 0.0
            for i in range(d):
                fn += fmat[j, i] * fmat[j, i]
                dp += fmat[j, i] * h[i]
            fn = csqrt(fn)
            fnorms[j] = fn
            if hn > 0.0 and fn > 0.0:
                val = dp / (fn * hn)
                if val > 1.0:
                    val = 1.0
                elif val < -1.0:
                    val = -1.0
                s[j] = val
    return s_arr, fnorms_arr, hn


def cosine_scores_backward(double[::1] gs, double[::1] h, double[:, ::1] fmat,
                           double[::1] s, double[::1] fnorms, double hnorm,
                           double[::1] dh, double[:, ::1] dfmat):
    cdef Py_ssize_t o = fmat.shape[0]
    cdef Py_ssize_t d = fmat.shape[1]
    cdef Py_ssize_t i, j
    cdef double fn, hu, fu
    if hnorm == 0.0:
        return
    with nogil:
        for j in range(o):
            fn = fnorms[j]
            if fn == 0.0:
                continue
            for i in range(d):
                hu = h[i] / hnorm
                fu = fmat[j, i] / fn
                dh[i] += gs[j] * (fu - s[j] * hu) / hnorm
                dfmat[j, i] += gs[j] * (hu - s[j] * fu) / fn


def attend_mix(double[::1] s, double[:, ::1] fmat):
    cdef Py_ssize_t o = fmat.shape[0]
    cdef Py_ssize_t d = fmat.shape[1]
    f1_arr = np.zeros(d)
    cdef double[::1] f1 = f1_arr
    cdef Py_ssize_t i, j
    with nogil:
        for j in range(o):
            for i in range(d):
                f1[i] += s[j] * fmat[j, i]
    return f1_arr


def attend_mix_backward(double[::1] g, double[::1] s, double[:, ::1] fmat,
                        double[::1] ds, double[:, ::1] dfmat):
    cdef Py_ssize_t o = fmat.shape[0]
    cdef Py_ssize_t d = fmat.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for j in range(o):
            acc = 0.0
            for i in range(d):
                acc += fmat[j, i] * g[i]
                dfmat[j, i] += s[j] * g[i]
            ds[j] += acc


def infonce(double[::1] h, double[:, ::1] samples, double inv_temp):
    cdef Py_ssize_t n = samples.shape[0]
    cdef Py_ssize_t d = samples.shape[1]
    logits_arr = np.empty(n)
    probs_arr = np.empty(n)
    cdef double[::1] logits = logits_arr, probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double acc, m, tot, lse
    with nogil:
        for j in range(n):
            acc = 0.0
            for i in range(d):
                acc += samples[j, i] * h[i]
            logits[j] = inv_temp * acc
        m = logits[0]
        for j in range(1, n):
            if logits[j] > m:
                m = logits[j]
        tot = 0.0
        for j in range(n):
            probs[j] = cexp(logits[j] - m)
            tot += probs[j]
        lse = m + clog(tot)
        for j in range(n):
            probs[j] /= tot
    return float(lse - logits_arr[0]), probs_arr


def infonce_backward(double g, double[:, ::1] samples, double[::1] probs,
                     double inv_temp, double[::1] dh):
    cdef Py_ssize_t n = samples.shape[0]
    cdef Py_ssize_t d = samples.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(d):
            acc = 0.0
            for j in range(n):
                acc += probs[j] * samples[j, i]
            dh[i] += g * inv_temp * (acc - samples[0, i])
