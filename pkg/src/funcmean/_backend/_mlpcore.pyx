# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled training kernels.

Same contract as the NumPy fallback module: forward/backward passes for
a shifted-ReLU network with linear readout, and an in-place Adam step.
Loops keep a fixed summation order, so repeated runs are bit-identical.
"""

import numpy as np

from libc.math cimport sqrt

__all__ = ["forward", "forward_hidden", "backward", "adam_step"]


cdef _forward_impl(const double[:, ::1] x, list weights, list shifts, bint keep):
    cdef Py_ssize_t n_hidden = len(weights) - 1
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t l, b, i, j, p_in, p_out
    cdef double acc
    cdef const double[:, ::1] h = x
    cdef const double[:, ::1] w
    cdef const double[::1] v
    cdef double[:, ::1] hn
    hiddens = []
    for l in range(n_hidden):
        w = weights[l]
        v = shifts[l]
        p_out = w.shape[0]
        p_in = w.shape[1]
        hn_arr = np.empty((batch, p_out))
        hn = hn_arr
        for b in range(batch):
            for i in range(p_out):
                acc = -v[i]
                for j in range(p_in):
                    acc += w[i, j] * h[b, j]
                hn[b, i] = acc if acc > 0.0 else 0.0
        if keep:
            hiddens.append(hn_arr)
        h = hn
    w = weights[n_hidden]
    p_in = w.shape[1]
    y_arr = np.empty(batch)
    cdef double[::1] y = y_arr
    for b in range(batch):
        acc = 0.0
        for j in range(p_in):
            acc += w[0, j] * h[b, j]
        y[b] = acc
    return y_arr, hiddens


def forward(x, weights, shifts):
    """Network output for a batch, shape (B,)."""
    y, _ = _forward_impl(x, weights, shifts, False)
    return y


def forward_hidden(x, weights, shifts):
    """Batch output plus every hidden activation, for backprop."""
    return _forward_impl(x, weights, shifts, True)


def backward(const double[:, ::1] x, list weights, list shifts, list hiddens,
             const double[::1] dy):
    """Parameter gradients of sum_b dy[b] * f(x[b])."""
    cdef Py_ssize_t n_hidden = len(weights) - 1
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t l, b, i, j, p_in, p_out
    cdef double acc, dval
    d_weights = [None] * (n_hidden + 1)
    d_shifts = [None] * n_hidden

    cdef const double[:, ::1] top_in = hiddens[n_hidden - 1] if n_hidden > 0 else x
    p_in = top_in.shape[1]
    dw_top_arr = np.empty((1, p_in))
    cdef double[:, ::1] dw_top = dw_top_arr
    for j in range(p_in):
        acc = 0.0
        for b in range(batch):
            acc += dy[b] * top_in[b, j]
        dw_top[0, j] = acc
    d_weights[n_hidden] = dw_top_arr
    if n_hidden == 0:
        return d_weights, d_shifts

    cdef const double[:, ::1] w_out = weights[n_hidden]
    cdef Py_ssize_t width = w_out.shape[1]
    dh_arr = np.empty((batch, width))
    cdef double[:, ::1] dh = dh_arr
    for b in range(batch):
        for i in range(width):
            dh[b, i] = dy[b] * w_out[0, i]

    cdef const double[:, ::1] hcur, inp, w
    cdef double[:, ::1] delta, dw, dh_next
    cdef double[::1] dv
    for l in range(n_hidden, 0, -1):
        hcur = hiddens[l - 1]
        p_out = hcur.shape[1]
        delta_arr = np.empty((batch, p_out))
        delta = delta_arr
        dv_arr = np.empty(p_out)
        dv = dv_arr
        for i in range(p_out):
            acc = 0.0
            for b in range(batch):
                dval = dh[b, i] if hcur[b, i] > 0.0 else 0.0
                delta[b, i] = dval
                acc += dval
            dv[i] = -acc
        d_shifts[l - 1] = dv_arr
        inp = hiddens[l - 2] if l >= 2 else x
        p_in = inp.shape[1]
        dw_arr = np.empty((p_out, p_in))
        dw = dw_arr
        for i in range(p_out):
            for j in range(p_in):
                acc = 0.0
                for b in range(batch):
                    acc += delta[b, i] * inp[b, j]
                dw[i, j] = acc
        d_weights[l - 1] = dw_arr
        if l >= 2:
            w = weights[l - 1]
            dh_next_arr = np.empty((batch, p_in))
            dh_next = dh_next_arr
            for b in range(batch):
                for j in range(p_in):
                    acc = 0.0
                    for i in range(p_out):
                        acc += delta[b, i] * w[i, j]
                    dh_next[b, j] = acc
            dh_arr = dh_next_arr
            dh = dh_arr
    return d_weights, d_shifts


def adam_step(list params, list grads, list m_state, list v_state, long t,
              double lr, double beta1, double beta2, double eps):
    """One Adam update, in place on params and both moment lists."""
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef Py_ssize_t k, i, size
    cdef double[::1] p, m, v
    cdef const double[::1] g
    cdef double gi
    for k in range(len(params)):
        p_arr = params[k]
        p = p_arr.ravel()
        g = grads[k].ravel()
        m = m_state[k].ravel()
        v = v_state[k].ravel()
        size = p.shape[0]
        for i in range(size):
            gi = g[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            p[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)
