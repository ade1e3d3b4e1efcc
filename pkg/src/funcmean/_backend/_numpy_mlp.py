"""NumPy reference implementation of the training kernels.

Semantics shared with the compiled module: a network with hidden widths
p_1..p_L maps a batch x (B, p_0) through h_l = max(h_{l-1} W_l^T - v_l, 0)
and ends with the linear readout y = h_L W_out^T.  The ReLU subgradient
at exactly zero is taken as zero (strict > 0 mask).
"""

from __future__ import annotations

import numpy as np

__all__ = ["forward", "forward_hidden", "backward", "adam_step"]


def forward(x, weights, shifts):
    """Network output for a batch, shape (B,)."""
    h = x
    n_hidden = len(weights) - 1
    for l in range(n_hidden):
        h = np.maximum(h @ weights[l].T - shifts[l], 0.0)
    return (h @ weights[n_hidden].T).ravel()


def forward_hidden(x, weights, shifts):
    """Batch output plus every hidden activation, for backprop."""
    h = x
    hiddens = []
    n_hidden = len(weights) - 1
    for l in range(n_hidden):
        h = np.maximum(h @ weights[l].T - shifts[l], 0.0)
        hiddens.append(h)
    return (h @ weights[n_hidden].T).ravel(), hiddens


def backward(x, weights, shifts, hiddens, dy):
    """Parameter gradients of sum_b dy[b] * f(x[b]).

    Returns (weight grads, shift grads) with the same shapes as the
    parameters.  Inactive units (pre-shift activation <= 0) propagate
    nothing, matching the strict mask in the forward pass.
    """
    n_hidden = len(weights) - 1
    d_weights = [None] * (n_hidden + 1)
    d_shifts = [None] * n_hidden
    top_in = hiddens[n_hidden - 1] if n_hidden > 0 else x
    d_weights[n_hidden] = (dy @ top_in)[None, :]
    if n_hidden == 0:
        return d_weights, d_shifts
    dh = np.outer(dy, weights[n_hidden][0])
    for l in range(n_hidden, 0, -1):
        delta = np.where(hiddens[l - 1] > 0.0, dh, 0.0)
        d_shifts[l - 1] = -delta.sum(axis=0)
        inp = hiddens[l - 2] if l >= 2 else x
        d_weights[l - 1] = delta.T @ inp
        if l >= 2:
            dh = delta @ weights[l - 1]
    return d_weights, d_shifts


def adam_step(params, grads, m_state, v_state, t, lr, beta1, beta2, eps):
    """One Adam update, in place on params and both moment lists.

    ``t`` is the 1-based step count after this update.
    """
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, m_state, v_state):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
