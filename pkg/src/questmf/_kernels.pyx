# cython: language_level=3
"""Compiled kernels: LSTM recurrence (forward and backward) and fused AdamW.

Mirrors ``_fallback`` exactly in signature and semantics. The recurrent
matrix product goes through BLAS dgemm; gate nonlinearities and the optimizer
update are plain C loops.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


cdef void _rowmajor_matmul(double* a, double* w, double* c, int n, int k, int m,
                           double beta) noexcept nogil:
    # c[n, m] = a[n, k] @ w[k, m] + beta * c (row-major)
    cdef char ta = b'N'
    cdef char tb = b'N'
    cdef double alpha = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &alpha, w, &m, a, &k, &beta, c, &m)


def lstm_forward(gx, w_h, mask, bint reverse):
    gx = np.ascontiguousarray(gx, dtype=np.float64)
    w_h = np.ascontiguousarray(w_h, dtype=np.float64)
    mask_u8 = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef int B = gx.shape[0]
    cdef int T = gx.shape[1]
    cdef int G = gx.shape[2]
    cdef int H = G // 4
    out = np.zeros((B, T, H))
    acts = np.zeros((B, T, G))
    cells = np.zeros((B, T, H))
    cdef double[:, :, ::1] gxv = gx
    cdef double[:, ::1] wv = w_h
    cdef unsigned char[:, ::1] mv = mask_u8
    cdef double[:, :, ::1] ov = out
    cdef double[:, :, ::1] av = acts
    cdef double[:, :, ::1] cv = cells
    h_arr = np.zeros((B, H))
    c_arr = np.zeros((B, H))
    a_arr = np.zeros((B, G))
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] a = a_arr
    cdef int s, t, b, j
    cdef double ig, fg, gg, og, cn, hn
    with nogil:
        for s in range(T):
            t = T - 1 - s if reverse else s
            if H > 0 and B > 0:
                _rowmajor_matmul(&h[0, 0], &wv[0, 0], &a[0, 0], B, H, G, 0.0)
            for b in range(B):
                if mv[b, t]:
                    for j in range(H):
                        ig = _sigmoid(gxv[b, t, j] + a[b, j])
                        fg = _sigmoid(gxv[b, t, H + j] + a[b, H + j])
                        gg = tanh(gxv[b, t, 2 * H + j] + a[b, 2 * H + j])
                        og = _sigmoid(gxv[b, t, 3 * H + j] + a[b, 3 * H + j])
                        cn = fg * c[b, j] + ig * gg
                        hn = og * tanh(cn)
                        c[b, j] = cn
                        h[b, j] = hn
                        av[b, t, j] = ig
                        av[b, t, H + j] = fg
                        av[b, t, 2 * H + j] = gg
                        av[b, t, 3 * H + j] = og
                        cv[b, t, j] = cn
                        ov[b, t, j] = hn
                else:
                    for j in range(H):
                        c[b, j] = 0.0
                        h[b, j] = 0.0
    return out, acts, cells


def lstm_backward(dout, acts, cells, out, w_h, mask, bint reverse):
    dout = np.ascontiguousarray(dout, dtype=np.float64)
    acts = np.ascontiguousarray(acts, dtype=np.float64)
    cells = np.ascontiguousarray(cells, dtype=np.float64)
    out = np.ascontiguousarray(out, dtype=np.float64)
    w_h = np.ascontiguousarray(w_h, dtype=np.float64)
    mask_u8 = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef int B = acts.shape[0]
    cdef int T = acts.shape[1]
    cdef int G = acts.shape[2]
    cdef int H = G // 4
    dgx = np.zeros((B, T, G))
    dw_h = np.zeros((H, G))
    w_t = np.ascontiguousarray(w_h.T)
    cdef double[:, :, ::1] dov = dout
    cdef double[:, :, ::1] av = acts
    cdef double[:, :, ::1] cv = cells
    cdef double[:, :, ::1] ov = out
    cdef double[:, ::1] wtv = w_t
    cdef unsigned char[:, ::1] mv = mask_u8
    cdef double[:, :, ::1] dgv = dgx
    cdef double[:, ::1] dwv = dw_h
    dh_arr = np.zeros((B, H))
    dc_arr = np.zeros((B, H))
    da_arr = np.zeros((B, G))
    hp_arr = np.zeros((B, H))
    cdef double[:, ::1] dh_next = dh_arr
    cdef double[:, ::1] dc_next = dc_arr
    cdef double[:, ::1] da = da_arr
    cdef double[:, ::1] hp = hp_arr
    cdef int s, t, tp, b, j
    cdef bint has_prev
    cdef double ig, fg, gg, og, tc, dh, do_, dc, cp
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double one = 1.0
    with nogil:
        for s in range(T):
            t = s if reverse else T - 1 - s
            tp = t + 1 if reverse else t - 1
            has_prev = 0 <= tp < T
            for b in range(B):
                if mv[b, t]:
                    for j in range(H):
                        ig = av[b, t, j]
                        fg = av[b, t, H + j]
                        gg = av[b, t, 2 * H + j]
                        og = av[b, t, 3 * H + j]
                        cp = cv[b, tp, j] if has_prev else 0.0
                        tc = tanh(cv[b, t, j])
                        dh = dov[b, t, j] + dh_next[b, j]
                        do_ = dh * tc
                        dc = dh * og * (1.0 - tc * tc) + dc_next[b, j]
                        da[b, j] = dc * gg * ig * (1.0 - ig)
                        da[b, H + j] = dc * cp * fg * (1.0 - fg)
                        da[b, 2 * H + j] = dc * ig * (1.0 - gg * gg)
                        da[b, 3 * H + j] = do_ * og * (1.0 - og)
                        dc_next[b, j] = dc * fg
                        hp[b, j] = ov[b, tp, j] if has_prev else 0.0
                else:
                    for j in range(G):
                        da[b, j] = 0.0
                    for j in range(H):
                        dc_next[b, j] = 0.0
                        hp[b, j] = 0.0
                for j in range(G):
                    dgv[b, t, j] = da[b, j]
            if H > 0 and B > 0:
                # dw_h[H, G] += hp.T @ da ; row-major -> column-major swap
                dgemm(&tb, &ta, &G, &H, &B, &one, &da[0, 0], &G, &hp[0, 0], &H,
                      &one, &dwv[0, 0], &G)
                # dh_next[B, H] = da[B, G] @ w_h.T[G, H]
                _rowmajor_matmul(&da[0, 0], &wtv[0, 0], &dh_next[0, 0], B, G, H, 0.0)
    return dgx, dw_h


def adamw_update(param, grad, m, v, double lr, double beta1, double beta2,
                 double eps, double weight_decay, step, Py_ssize_t extent):
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    cdef double[::1] p = param.reshape(-1)
    cdef const double[::1] g = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t ng = g.shape[0]
    cdef Py_ssize_t k
    cdef double gk, mk, vk, decay = 1.0 - lr * weight_decay
    cdef double c1 = 1.0 - beta1
    cdef double c2 = 1.0 - beta2
    cdef double step_size = lr / bc1
    cdef double inv_root_bc2 = 1.0 / sqrt(bc2)
    with nogil:
        for k in range(extent):
            gk = g[k] if k < ng else 0.0
            if gk == 0.0 and mv[k] == 0.0 and vv[k] == 0.0:
                # the full update reduces exactly to the decay here
                p[k] = p[k] * decay
                continue
            mk = mv[k] * beta1 + c1 * gk
            vk = vv[k] * beta2 + c2 * (gk * gk)
            mv[k] = mk
            vv[k] = vk
            p[k] = p[k] * decay - (step_size * mk) / (sqrt(vk) * inv_root_bc2 + eps)
        for k in range(extent, n):
            p[k] = p[k] * decay
