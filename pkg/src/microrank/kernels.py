"""Hot numeric kernels: diagonal-bilinear pool scoring/gradients and Adam.

Each kernel exists twice: a vectorized pure-numpy implementation
(``*_np``) and a loop form compiled with numba's ``@njit``. The compiled
path is selected at import time when numba is importable, unless the
environment variable ``MICRORANK_DISABLE_NUMBA=1`` forces the numpy
fallback. Both variants stay importable so tests and
``benchmarks/bench_kernels.py`` can compare them directly.

All kernels take C-contiguous float64 arrays. Results of the two
backends agree to floating-point reduction-order differences (~1e-15
relative); within one backend they are bit-deterministic.
"""

import os

import numpy as np

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "adam_update",
    "adam_update_np",
    "wsim_pool_loss_grads",
    "wsim_pool_loss_grads_np",
    "wsim_scores",
    "wsim_scores_np",
]

_P_FLOOR = 1e-12  # probability clamp before log


# --------------------------------------------------------------------------
# pure-numpy implementations
# --------------------------------------------------------------------------

def _softmax1d_np(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def wsim_scores_np(bt, bv, it, iv, eng, wt, wv, alpha):
    """Scores of K candidates against one brand.

    ``bt``/``bv`` are the brand's pooled text/visual vectors, ``it``/``iv``
    the (K, d) candidate matrices, ``eng`` the candidates' engagement
    values, ``wt``/``wv`` the diagonals of the bilinear matrices and
    ``alpha`` the three mixture logits (softmaxed into convex weights).
    """
    w = _softmax1d_np(alpha)
    s_t = it @ (wt * bt)
    s_v = iv @ (wv * bv)
    return w[0] * s_t + w[1] * s_v + w[2] * eng


def wsim_pool_loss_grads_np(bt, bv, it, iv, eng, y, wt, wv, alpha):
    """Listwise cross-entropy over one pool plus analytic gradients.

    Returns ``(loss, grad_wt, grad_wv, grad_alpha)``.
    """
    w = _softmax1d_np(alpha)
    s_t = it @ (wt * bt)
    s_v = iv @ (wv * bv)
    z = w[0] * s_t + w[1] * s_v + w[2] * eng
    p = _softmax1d_np(z)
    loss = -(y * np.log(np.maximum(p, _P_FLOOR))).sum()
    dz = p - y
    gwt = w[0] * bt * (it.T @ dz)
    gwv = w[1] * bv * (iv.T @ dz)
    ds = np.array([s_t @ dz, s_v @ dz, eng @ dz])
    galpha = w * (ds - ds @ w)
    return loss, gwt, gwv, galpha


def adam_update_np(p, g, m, v, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam update.

    ``step`` is the 1-based update count including this update. Returns
    new ``(params, m, v)`` arrays; inputs are not modified.
    """
    m2 = beta1 * m + (1.0 - beta1) * g
    v2 = beta2 * v + (1.0 - beta2) * (g * g)
    mhat = m2 / (1.0 - beta1 ** step)
    vhat = v2 / (1.0 - beta2 ** step)
    p2 = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p2, m2, v2


# --------------------------------------------------------------------------
# loop forms, written to compile under @njit
# --------------------------------------------------------------------------

def _wsim_scores_loops(bt, bv, it, iv, eng, wt, wv, alpha):
    n_k = it.shape[0]
    d_t = bt.shape[0]
    d_v = bv.shape[0]
    amax = max(alpha[0], alpha[1], alpha[2])
    w0 = np.exp(alpha[0] - amax)
    w1 = np.exp(alpha[1] - amax)
    w2 = np.exp(alpha[2] - amax)
    tot = w0 + w1 + w2
    w0, w1, w2 = w0 / tot, w1 / tot, w2 / tot
    z = np.empty(n_k)
    for k in range(n_k):
        s_t = 0.0
        for j in range(d_t):
            s_t += wt[j] * bt[j] * it[k, j]
        s_v = 0.0
        for j in range(d_v):
            s_v += wv[j] * bv[j] * iv[k, j]
        z[k] = w0 * s_t + w1 * s_v + w2 * eng[k]
    return z


def _wsim_pool_loss_grads_loops(bt, bv, it, iv, eng, y, wt, wv, alpha):
    n_k = it.shape[0]
    d_t = bt.shape[0]
    d_v = bv.shape[0]

    amax = max(alpha[0], alpha[1], alpha[2])
    w0 = np.exp(alpha[0] - amax)
    w1 = np.exp(alpha[1] - amax)
    w2 = np.exp(alpha[2] - amax)
    tot = w0 + w1 + w2
    w0, w1, w2 = w0 / tot, w1 / tot, w2 / tot

    s_t = np.empty(n_k)
    s_v = np.empty(n_k)
    z = np.empty(n_k)
    for k in range(n_k):
        acc = 0.0
        for j in range(d_t):
            acc += wt[j] * bt[j] * it[k, j]
        s_t[k] = acc
        acc = 0.0
        for j in range(d_v):
            acc += wv[j] * bv[j] * iv[k, j]
        s_v[k] = acc
        z[k] = w0 * s_t[k] + w1 * s_v[k] + w2 * eng[k]

    zmax = z[0]
    for k in range(1, n_k):
        if z[k] > zmax:
            zmax = z[k]
    p = np.empty(n_k)
    psum = 0.0
    for k in range(n_k):
        p[k] = np.exp(z[k] - zmax)
        psum += p[k]
    loss = 0.0
    dz = np.empty(n_k)
    for k in range(n_k):
        p[k] /= psum
        pk = p[k] if p[k] > 1e-12 else 1e-12
        loss -= y[k] * np.log(pk)
        dz[k] = p[k] - y[k]

    gwt = np.empty(d_t)
    for j in range(d_t):
        acc = 0.0
        for k in range(n_k):
            acc += it[k, j] * dz[k]
        gwt[j] = w0 * bt[j] * acc
    gwv = np.empty(d_v)
    for j in range(d_v):
        acc = 0.0
        for k in range(n_k):
            acc += iv[k, j] * dz[k]
        gwv[j] = w1 * bv[j] * acc

    ds0 = 0.0
    ds1 = 0.0
    ds2 = 0.0
    for k in range(n_k):
        ds0 += s_t[k] * dz[k]
        ds1 += s_v[k] * dz[k]
        ds2 += eng[k] * dz[k]
    dot = ds0 * w0 + ds1 * w1 + ds2 * w2
    galpha = np.empty(3)
    galpha[0] = w0 * (ds0 - dot)
    galpha[1] = w1 * (ds1 - dot)
    galpha[2] = w2 * (ds2 - dot)
    return loss, gwt, gwv, galpha


def _adam_update_loops(p, g, m, v, step, lr, beta1, beta2, eps):
    n = p.shape[0]
    p2 = np.empty(n)
    m2 = np.empty(n)
    v2 = np.empty(n)
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for i in range(n):
        m2[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v2[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p2[i] = p[i] - lr * (m2[i] / c1) / (np.sqrt(v2[i] / c2) + eps)
    return p2, m2, v2


# --------------------------------------------------------------------------
# backend selection
# --------------------------------------------------------------------------

HAVE_NUMBA = False
if os.environ.get("MICRORANK_DISABLE_NUMBA", "0") != "1":
    try:
        import numba

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False

if HAVE_NUMBA:
    _jit = numba.njit(cache=True)
    wsim_scores_nb = _jit(_wsim_scores_loops)
    wsim_pool_loss_grads_nb = _jit(_wsim_pool_loss_grads_loops)
    adam_update_nb = _jit(_adam_update_loops)

    wsim_scores = wsim_scores_nb
    wsim_pool_loss_grads = wsim_pool_loss_grads_nb
    adam_update = adam_update_nb
    BACKEND = "numba"
else:
    wsim_scores = wsim_scores_np
    wsim_pool_loss_grads = wsim_pool_loss_grads_np
    adam_update = adam_update_np
    BACKEND = "numpy"
