"""Pure-numpy kernels.

Same signatures and results as the compiled ``_kernels`` module. The LSTM
kernels use gate order (input, forget, cell, output) and reset the recurrent
state to zero at every masked time step, so padded positions never leak into
real ones in either direction.
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(gx, w_h, mask, reverse):
    """Run the LSTM recurrence over precomputed input projections.

    gx: (B, T, 4H) input projections plus bias; w_h: (H, 4H);
    mask: (B, T) bool. Returns ``(out, acts, cells)``.
    """
    B, T, G = gx.shape
    H = G // 4
    out = np.zeros((B, T, H))
    acts = np.zeros((B, T, G))
    cells = np.zeros((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        live = mask[:, t][:, None]
        a = gx[:, t] + h @ w_h
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        c = np.where(live, c_new, 0.0)
        h = np.where(live, h_new, 0.0)
        acts[:, t] = np.where(live, np.concatenate([i, f, g, o], axis=1), 0.0)
        cells[:, t] = c
        out[:, t] = h
    return out, acts, cells


def lstm_backward(dout, acts, cells, out, w_h, mask, reverse):
    """Backpropagate through :func:`lstm_forward`. Returns ``(dgx, dw_h)``."""
    B, T, G = acts.shape
    H = G // 4
    dgx = np.zeros((B, T, G))
    dw_h = np.zeros((H, G))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        tp = t + 1 if reverse else t - 1
        if 0 <= tp < T:
            h_prev, c_prev = out[:, tp], cells[:, tp]
        else:
            h_prev, c_prev = zeros, zeros
        live = mask[:, t][:, None]
        i = acts[:, t, :H]
        f = acts[:, t, H:2 * H]
        g = acts[:, t, 2 * H:3 * H]
        o = acts[:, t, 3 * H:]
        tc = np.tanh(cells[:, t])
        dh = dout[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        da = np.where(live, da, 0.0)
        dgx[:, t] = da
        dw_h += h_prev.T @ da
        dh_next = da @ w_h.T
        dc_next = np.where(live, dc * f, 0.0)
    return dgx, dw_h


def adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, step, extent):
    """In-place bias-corrected AdamW step with decoupled weight decay.

    ``grad`` covers the leading ``grad.size`` flat elements; past ``extent``
    moments are zero and parameters only decay.
    """
    decay = 1.0 - lr * weight_decay
    p_all = param.reshape(-1)
    p, m, v = p_all[:extent], m.reshape(-1)[:extent], v.reshape(-1)[:extent]
    g = np.zeros(extent)
    g[: grad.size] = grad.reshape(-1)
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    # bias corrections folded into two scalars: one sqrt and one division per element
    step_size = lr / bc1
    denom = np.sqrt(v) * (1.0 / np.sqrt(bc2)) + eps
    p *= decay
    p -= (step_size * m) / denom
    p_all[extent:] *= decay
