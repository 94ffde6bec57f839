# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
from libc.math cimport exp, log1p, fabs, tanh, isfinite

cdef int LOGISTIC = 0
cdef int TANH = 0


cdef inline void _pointwise(double s, double y, int loss, double *l, double *dl) nogil:
    cdef double m, e
    if loss == LOGISTIC:
        m = -y * s
        if m >= 0:
            e = exp(-m)
            l[0] = m + log1p(e)
            dl[0] = -y / (1.0 + e)
        else:
            e = exp(m)
            l[0] = log1p(e)
            dl[0] = -y * e / (1.0 + e)
    else:
        m = y - s
        l[0] = m * m
        dl[0] = -2.0 * m


def mlp_loss_grad(const double[::1] params, const long[::1] widths, int act, bint use_bias,
                  const double[:, ::1] X, const double[::1] y, const double[::1] w, int loss):
    cdef Py_ssize_t L = widths.shape[0] - 1
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t P = params.shape[0]
    cdef Py_ssize_t l, i, j, k, n_in, n_out, total = 0, maxw = 0
    for l in range(L + 1):
        total += widths[l]
        if widths[l] > maxw:
            maxw = widths[l]
    w_off_np = np.empty(L, dtype=np.int64)
    a_off_np = np.empty(L + 1, dtype=np.int64)
    cdef long[::1] w_off = w_off_np
    cdef long[::1] a_off = a_off_np
    cdef Py_ssize_t pos = 0
    for l in range(L):
        w_off[l] = pos
        pos += widths[l + 1] * (widths[l] + 1)
    cdef Py_ssize_t head = pos
    cdef Py_ssize_t D = widths[L]
    pos = 0
    for l in range(L + 1):
        a_off[l] = pos
        pos += widths[l]

    grad_np = np.zeros(P)
    buf_np = np.empty(total)
    d1_np = np.empty(maxw)
    d2_np = np.empty(maxw)
    cdef double[::1] grad = grad_np
    cdef double[::1] a = buf_np
    cdef double[::1] delta = d1_np
    cdef double[::1] nxt = d2_np
    cdef double bias = params[head + D] if use_bias else 0.0
    cdef double s, lv, dl, r, z, acc, av, total_loss = 0.0
    cdef Py_ssize_t wo, bo, ai, ao

    with nogil:
        for i in range(n):
            for k in range(widths[0]):
                a[k] = X[i, k]
            for l in range(L):
                n_in = widths[l]
                n_out = widths[l + 1]
                wo = w_off[l]
                bo = wo + n_out * n_in
                ai = a_off[l]
                ao = a_off[l + 1]
                for j in range(n_out):
                    z = params[bo + j]
                    for k in range(n_in):
                        z = z + params[wo + j * n_in + k] * a[ai + k]
                    if act == TANH:
                        a[ao + j] = tanh(z)
                    else:
                        a[ao + j] = z if z > 0 else 0.0
            ao = a_off[L]
            s = bias
            for k in range(D):
                s = s + params[head + k] * a[ao + k]
            _pointwise(s, y[i], loss, &lv, &dl)
            total_loss += w[i] * lv
            r = w[i] * dl
            for k in range(D):
                grad[head + k] += r * a[ao + k]
                av = a[ao + k]
                if act == TANH:
                    delta[k] = r * params[head + k] * (1.0 - av * av)
                else:
                    delta[k] = r * params[head + k] * (1.0 if av > 0 else 0.0)
            if use_bias:
                grad[head + D] += r
            for l in range(L - 1, -1, -1):
                n_in = widths[l]
                n_out = widths[l + 1]
                wo = w_off[l]
                bo = wo + n_out * n_in
                ai = a_off[l]
                for j in range(n_out):
                    grad[bo + j] += delta[j]
                    for k in range(n_in):
                        grad[wo + j * n_in + k] += delta[j] * a[ai + k]
                if l > 0:
                    for k in range(n_in):
                        acc = 0.0
                        for j in range(n_out):
                            acc = acc + delta[j] * params[wo + j * n_in + k]
                        av = a[ai + k]
                        if act == TANH:
                            nxt[k] = acc * (1.0 - av * av)
                        else:
                            nxt[k] = acc * (1.0 if av > 0 else 0.0)
                    for k in range(n_in):
                        delta[k] = nxt[k]
    return total_loss, grad_np


def dict_descent(const double[:, ::1] X, const double[::1] y, const double[::1] w, gates_in, gamma_in,
                 double bias, bint use_bias, long steps, double lr, double l1, double l2,
                 int loss, long log_every):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j
    gates_np = np.array(gates_in, dtype=np.float64, copy=True)
    gamma_np = np.array(gamma_in, dtype=np.float64, copy=True)
    cdef double[::1] gates = gates_np
    cdef double[::1] gamma = gamma_np
    xr_np = np.empty(d)
    eff_np = np.empty(d)
    cdef double[::1] xr = xr_np
    cdef double[::1] eff = eff_np
    cdef double thresh = lr * l1, s, lv, dl, r, rs, total, risk, gg, a
    cdef long t
    t_steps, t_loss, t_risk = [], [], []
    for t in range(steps + 1):
        total = 0.0
        risk = 0.0
        rs = 0.0
        with nogil:
            for j in range(d):
                eff[j] = gates[j] * gamma[j]
                xr[j] = 0.0
            for i in range(n):
                s = bias
                for j in range(d):
                    s = s + X[i, j] * eff[j]
                _pointwise(s, y[i], loss, &lv, &dl)
                total = total + w[i] * lv
                if (1.0 if s > 0 else -1.0) != y[i]:
                    risk = risk + w[i]
                r = w[i] * dl
                rs = rs + r
                for j in range(d):
                    xr[j] = xr[j] + X[i, j] * r
        if not isfinite(total):
            return gates_np, gamma_np, bias, t_steps, t_loss, t_risk, t
        if t == steps or t % log_every == 0:
            t_steps.append(t)
            t_loss.append(total)
            t_risk.append(risk)
        if t == steps:
            break
        with nogil:
            for j in range(d):
                gg = gamma[j] * xr[j]
                gamma[j] = gamma[j] - lr * (gates[j] * xr[j] + l2 * gamma[j])
                a = gates[j] - lr * gg
                if thresh > 0:
                    if a > thresh:
                        a = a - thresh
                    elif a < -thresh:
                        a = a + thresh
                    else:
                        a = 0.0
                gates[j] = a
            if use_bias:
                bias = bias - lr * rs
    return gates_np, gamma_np, bias, t_steps, t_loss, t_risk, -1
