"""Numpy implementations of the hot kernels.

These are the fallback used when the compiled ``_ckernels`` extension is not
available, and the reference the compiled versions are tested against.

Parameter layout (shared with ``_ckernels``): for each layer, in order, the
weight matrix of shape ``(fan_in, fan_out)`` flattened row-major, followed by
the bias vector of length ``fan_out``.
"""

import numpy as np

KL_K3 = 0
KL_EXACT = 1


def _layers(params, dims):
    off = 0
    out = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = params[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off:off + fan_out]
        off += fan_out
        out.append((w, b))
    return out


def mlp_forward(params, dims, relu, X):
    """Return ``(logits, hidden)``; ``hidden`` stacks every hidden activation
    column-wise, shape ``(N, sum(dims[1:-1]))``."""
    layers = _layers(params, dims)
    h = X
    hidden = []
    for w, b in layers[:-1]:
        z = h @ w + b
        h = np.maximum(z, 0.0) if relu else np.tanh(z)
        hidden.append(h)
    w, b = layers[-1]
    logits = h @ w + b
    if hidden:
        hidden = np.concatenate(hidden, axis=1)
    else:
        hidden = np.empty((X.shape[0], 0))
    return logits, hidden


def mlp_backward(params, dims, relu, X, hidden, dlogits):
    """Accumulate ``sum_n dlogits[n] . d logits[n] / d params`` into a flat
    gradient in parameter layout."""
    layers = _layers(params, dims)
    n_layers = len(layers)
    acts = [X]
    col = 0
    for width in dims[1:-1]:
        acts.append(hidden[:, col:col + width])
        col += width
    grads = [None] * n_layers
    delta = dlogits
    for li in range(n_layers - 1, -1, -1):
        w, _ = layers[li]
        a_in = acts[li]
        grads[li] = (a_in.T @ delta, delta.sum(axis=0))
        if li > 0:
            back = delta @ w.T
            if relu:
                delta = back * (a_in > 0.0)
            else:
                delta = back * (1.0 - a_in * a_in)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def grpo_terms(logp, logp_old, logp_ref, labels, adv, eps, beta,
               use_clip, stop_grad, kl_mode):
    """Per-rollout surrogate and KL accumulation.

    Returns ``(surrogate_sum, kl_sum, coef, n_clipped)`` where ``coef[n, y]``
    is the derivative of the *summed* loss ``-sum(surrogate) + beta*sum(kl)``
    with respect to ``logp[n, y]``.
    """
    n, g = labels.shape
    rows = np.repeat(np.arange(n), g).reshape(n, g)
    lp = logp[rows, labels]
    coef = np.zeros((n, 2))
    if stop_grad:
        ratio = np.ones_like(lp)
    else:
        ratio = np.exp(lp - logp_old[rows, labels])
    unclipped = ratio * adv
    if use_clip and not stop_grad:
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
        clip_on = clipped < unclipped
        surr = np.where(clip_on, clipped, unclipped)
        dsurr = np.where(clip_on, 0.0, unclipped)
        n_clipped = int(clip_on.sum())
    else:
        surr = unclipped
        dsurr = adv if stop_grad else unclipped
        n_clipped = 0
    np.add.at(coef, (rows, labels), -dsurr)

    kl_sum = 0.0
    if beta != 0.0:
        if kl_mode == KL_K3:
            log_r = logp_ref[rows, labels] - lp
            r = np.exp(log_r)
            kl_sum = float(np.sum(r - log_r - 1.0))
            np.add.at(coef, (rows, labels), beta * (1.0 - r))
        else:
            p = np.exp(logp)
            per_input = np.sum(p * (logp - logp_ref), axis=1)
            kl_sum = float(g * per_input.sum())
            coef += beta * g * p * (logp - logp_ref + 1.0)
    return float(surr.sum()), kl_sum, coef, n_clipped
