# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: MLP forward/backward and the per-rollout GRPO loop.

Same contracts and parameter layout as ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


def mlp_forward(const double[::1] params, dims, bint relu, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_layers = len(dims) - 1
    cdef Py_ssize_t[::1] d = np.asarray(dims, dtype=np.intp)
    cdef Py_ssize_t total_hidden = 0
    cdef Py_ssize_t li, i, j, k, off, in_col, out_col, fan_in, fan_out
    for li in range(1, n_layers):
        total_hidden += d[li]
    hidden_arr = np.empty((n, total_hidden))
    logits_arr = np.empty((n, d[n_layers]))
    cdef double[:, ::1] hidden = hidden_arr
    cdef double[:, ::1] logits = logits_arr
    cdef double acc, z

    for i in range(n):
        off = 0
        in_col = -1
        out_col = 0
        for li in range(n_layers):
            fan_in = d[li]
            fan_out = d[li + 1]
            for j in range(fan_out):
                acc = params[off + fan_in * fan_out + j]
                for k in range(fan_in):
                    if in_col < 0:
                        z = X[i, k]
                    else:
                        z = hidden[i, in_col + k]
                    acc = acc + z * params[off + k * fan_out + j]
                if li == n_layers - 1:
                    logits[i, j] = acc
                elif relu:
                    hidden[i, out_col + j] = acc if acc > 0.0 else 0.0
                else:
                    hidden[i, out_col + j] = tanh(acc)
            off += fan_in * fan_out + fan_out
            if li < n_layers - 1:
                in_col = out_col
                out_col += fan_out
    return logits_arr, hidden_arr


def mlp_backward(const double[::1] params, dims, bint relu, const double[:, ::1] X,
                 const double[:, ::1] hidden, const double[:, ::1] dlogits):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_layers = len(dims) - 1
    cdef Py_ssize_t[::1] d = np.asarray(dims, dtype=np.intp)
    cdef Py_ssize_t n_params = params.shape[0]
    cdef Py_ssize_t max_width = 0
    cdef Py_ssize_t li, i, j, k, fan_in, fan_out, w_off, in_col
    for li in range(n_layers + 1):
        if d[li] > max_width:
            max_width = d[li]
    # layer offsets and hidden column offsets
    offs_arr = np.empty(n_layers, dtype=np.intp)
    cols_arr = np.empty(n_layers, dtype=np.intp)
    cdef Py_ssize_t[::1] offs = offs_arr
    cdef Py_ssize_t[::1] cols = cols_arr
    w_off = 0
    in_col = -1
    for li in range(n_layers):
        offs[li] = w_off
        cols[li] = in_col
        w_off += d[li] * d[li + 1] + d[li + 1]
        in_col = in_col + d[li] if li > 0 else 0

    grad_arr = np.zeros(n_params)
    cdef double[::1] grad = grad_arr
    delta_arr = np.empty(max_width)
    back_arr = np.empty(max_width)
    cdef double[::1] delta = delta_arr
    cdef double[::1] back = back_arr
    cdef double a, acc

    for i in range(n):
        for j in range(d[n_layers]):
            delta[j] = dlogits[i, j]
        for li in range(n_layers - 1, -1, -1):
            fan_in = d[li]
            fan_out = d[li + 1]
            w_off = offs[li]
            in_col = cols[li]
            for k in range(fan_in):
                a = X[i, k] if in_col < 0 else hidden[i, in_col + k]
                acc = 0.0
                for j in range(fan_out):
                    grad[w_off + k * fan_out + j] += a * delta[j]
                    acc = acc + delta[j] * params[w_off + k * fan_out + j]
                if li > 0:
                    if relu:
                        back[k] = acc if a > 0.0 else 0.0
                    else:
                        back[k] = acc * (1.0 - a * a)
            for j in range(fan_out):
                grad[w_off + fan_in * fan_out + j] += delta[j]
            if li > 0:
                for k in range(fan_in):
                    delta[k] = back[k]
    return grad_arr


def grpo_terms(const double[:, ::1] logp, const double[:, ::1] logp_old,
               const double[:, ::1] logp_ref, const long[:, ::1] labels,
               const double[:, ::1] adv, double eps, double beta,
               bint use_clip, bint stop_grad, int kl_mode):
    cdef Py_ssize_t n = labels.shape[0]
    cdef Py_ssize_t g = labels.shape[1]
    cdef Py_ssize_t i, j, y
    coef_arr = np.zeros((n, 2))
    cdef double[:, ::1] coef = coef_arr
    cdef double surr_sum = 0.0, kl_sum = 0.0
    cdef double lp, ratio, a, unc, clp, rc, log_r, r, p0, p1, kl_i
    cdef long n_clipped = 0

    for i in range(n):
        for j in range(g):
            y = labels[i, j]
            lp = logp[i, y]
            a = adv[i, j]
            if stop_grad:
                surr_sum += a
                coef[i, y] -= a
            else:
                ratio = exp(lp - logp_old[i, y])
                unc = ratio * a
                if use_clip:
                    rc = ratio
                    if rc < 1.0 - eps:
                        rc = 1.0 - eps
                    elif rc > 1.0 + eps:
                        rc = 1.0 + eps
                    clp = rc * a
                    if clp < unc:
                        surr_sum += clp
                        n_clipped += 1
                    else:
                        surr_sum += unc
                        coef[i, y] -= unc
                else:
                    surr_sum += unc
                    coef[i, y] -= unc
            if beta != 0.0 and kl_mode == 0:
                log_r = logp_ref[i, y] - lp
                r = exp(log_r)
                kl_sum += r - log_r - 1.0
                coef[i, y] += beta * (1.0 - r)
        if beta != 0.0 and kl_mode != 0:
            p0 = exp(logp[i, 0])
            p1 = exp(logp[i, 1])
            kl_i = p0 * (logp[i, 0] - logp_ref[i, 0]) + p1 * (logp[i, 1] - logp_ref[i, 1])
            kl_sum += g * kl_i
            coef[i, 0] += beta * g * p0 * (logp[i, 0] - logp_ref[i, 0] + 1.0)
            coef[i, 1] += beta * g * p1 * (logp[i, 1] - logp_ref[i, 1] + 1.0)
    return surr_sum, kl_sum, coef_arr, int(n_clipped)
