"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` version (fused loops, GIL
released) and a pure-numpy version. The active backend is chosen once at
import time from the ``LEXGATE_BACKEND`` environment variable:

    LEXGATE_BACKEND=numpy   force the pure-numpy fallback
    LEXGATE_BACKEND=numba   require numba (ImportError if missing)
    unset                   numba when importable, else numpy

All kernels operate on C-contiguous float64 2-D arrays. The two backends
agree to floating-point rounding (tested); bit patterns may differ, so
determinism guarantees hold per backend. ``benchmarks/bench_kernels.py``
compares the two.
"""

import os
import warnings

import numpy as np

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


# ---------------------------------------------------------------------------
# pure-numpy backend
# ---------------------------------------------------------------------------

def _np_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_rows_bwd(y, dy):
    # dx = y * (dy - sum_j dy_j y_j), row-wise
    s = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - s)


def _np_layernorm(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gamma + beta, mu, rstd


def _np_layernorm_bwd(x, gamma, mu, rstd, dy):
    xhat = (x - mu) * rstd
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd * (dxhat - m1 - xhat * m2)
    dgamma = (dy * xhat).sum(axis=0, keepdims=True)
    dbeta = dy.sum(axis=0, keepdims=True)
    return dx, dgamma, dbeta


def _np_gelu(x):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def _np_gelu_bwd(x, dy):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _np_gate_mix(scores, gate, sim, dissim):
    # p = scores * (1 + g*sim + (1-g)*dissim), g broadcast along key axis
    return scores * (1.0 + gate * sim + (1.0 - gate) * dissim)


def _np_gate_mix_bwd(scores, gate, sim, dissim, dp):
    dscores = dp * (1.0 + gate * sim + (1.0 - gate) * dissim)
    dgate = (dp * scores * (sim - dissim)).sum(axis=1, keepdims=True)
    return dscores, dgate


def _np_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _np_adam_step(p, g, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


_NUMPY_IMPLS = {
    "softmax_rows": _np_softmax_rows,
    "softmax_rows_bwd": _np_softmax_rows_bwd,
    "layernorm": _np_layernorm,
    "layernorm_bwd": _np_layernorm_bwd,
    "gelu": _np_gelu,
    "gelu_bwd": _np_gelu_bwd,
    "gate_mix": _np_gate_mix,
    "gate_mix_bwd": _np_gate_mix_bwd,
    "sigmoid": _np_sigmoid,
    "adam_step": _np_adam_step,
}


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

def _build_numba_impls():
    from numba import njit

    opts = dict(cache=True, nogil=True)

    @njit(**opts)
    def softmax_rows(x):
        n, d = x.shape
        out = np.empty((n, d))
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(d):
                out[i, j] *= inv
        return out

    @njit(**opts)
    def softmax_rows_bwd(y, dy):
        n, d = y.shape
        dx = np.empty((n, d))
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += dy[i, j] * y[i, j]
            for j in range(d):
                dx[i, j] = y[i, j] * (dy[i, j] - s)
        return dx

    @njit(**opts)
    def layernorm(x, gamma, beta, eps):
        n, d = x.shape
        out = np.empty((n, d))
        mu = np.empty((n, 1))
        rstd = np.empty((n, 1))
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += x[i, j]
            mean = s / d
            q = 0.0
            for j in range(d):
                t = x[i, j] - mean
                q += t * t
            r = 1.0 / np.sqrt(q / d + eps)
            mu[i, 0] = mean
            rstd[i, 0] = r
            for j in range(d):
                out[i, j] = (x[i, j] - mean) * r * gamma[0, j] + beta[0, j]
        return out, mu, rstd

    @njit(**opts)
    def layernorm_bwd(x, gamma, mu, rstd, dy):
        n, d = x.shape
        dx = np.empty((n, d))
        dgamma = np.zeros((1, d))
        dbeta = np.zeros((1, d))
        for i in range(n):
            mean = mu[i, 0]
            r = rstd[i, 0]
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                xh = (x[i, j] - mean) * r
                dh = dy[i, j] * gamma[0, j]
                m1 += dh
                m2 += dh * xh
                dgamma[0, j] += dy[i, j] * xh
                dbeta[0, j] += dy[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                xh = (x[i, j] - mean) * r
                dh = dy[i, j] * gamma[0, j]
                dx[i, j] = r * (dh - m1 - xh * m2)
        return dx, dgamma, dbeta

    @njit(**opts)
    def gelu(x):
        n, d = x.shape
        out = np.empty((n, d))
        for i in range(n):
            for j in range(d):
                xx = x[i, j]
                u = _GELU_C * (xx + _GELU_A * xx * xx * xx)
                out[i, j] = 0.5 * xx * (1.0 + np.tanh(u))
        return out

    @njit(**opts)
    def gelu_bwd(x, dy):
        n, d = x.shape
        dx = np.empty((n, d))
        for i in range(n):
            for j in range(d):
                xx = x[i, j]
                u = _GELU_C * (xx + _GELU_A * xx * xx * xx)
                t = np.tanh(u)
                du = _GELU_C * (1.0 + 3.0 * _GELU_A * xx * xx)
                dx[i, j] = dy[i, j] * (0.5 * (1.0 + t) + 0.5 * xx * (1.0 - t * t) * du)
        return dx

    @njit(**opts)
    def gate_mix(scores, gate, sim, dissim):
        n, d = scores.shape
        out = np.empty((n, d))
        for i in range(n):
            gi = gate[i, 0]
            for j in range(d):
                b = 1.0 + gi * sim[i, j] + (1.0 - gi) * dissim[i, j]
                out[i, j] = scores[i, j] * b
        return out

    @njit(**opts)
    def gate_mix_bwd(scores, gate, sim, dissim, dp):
        n, d = scores.shape
        dscores = np.empty((n, d))
        dgate = np.zeros((n, 1))
        for i in range(n):
            gi = gate[i, 0]
            acc = 0.0
            for j in range(d):
                b = 1.0 + gi * sim[i, j] + (1.0 - gi) * dissim[i, j]
                dscores[i, j] = dp[i, j] * b
                acc += dp[i, j] * scores[i, j] * (sim[i, j] - dissim[i, j])
            dgate[i, 0] = acc
        return dscores, dgate

    @njit(**opts)
    def sigmoid(x):
        n, d = x.shape
        out = np.empty((n, d))
        for i in range(n):
            for j in range(d):
                xx = x[i, j]
                if xx >= 0.0:
                    out[i, j] = 1.0 / (1.0 + np.exp(-xx))
                else:
                    e = np.exp(xx)
                    out[i, j] = e / (1.0 + e)
        return out

    @njit(**opts)
    def adam_step(p, g, m, v, lr, beta1, beta2, eps, t):
        n, d = p.shape
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for i in range(n):
            for j in range(d):
                gg = g[i, j]
                m[i, j] = beta1 * m[i, j] + (1.0 - beta1) * gg
                v[i, j] = beta2 * v[i, j] + (1.0 - beta2) * gg * gg
                mhat = m[i, j] / c1
                vhat = v[i, j] / c2
                p[i, j] -= lr * mhat / (np.sqrt(vhat) + eps)

    return {
        "softmax_rows": softmax_rows,
        "softmax_rows_bwd": softmax_rows_bwd,
        "layernorm": layernorm,
        "layernorm_bwd": layernorm_bwd,
        "gelu": gelu,
        "gelu_bwd": gelu_bwd,
        "gate_mix": gate_mix,
        "gate_mix_bwd": gate_mix_bwd,
        "sigmoid": sigmoid,
        "adam_step": adam_step,
    }


def _select_backend():
    requested = os.environ.get("LEXGATE_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy", _NUMPY_IMPLS
    try:
        impls = _build_numba_impls()
        return "numba", impls
    except ImportError:
        if requested == "numba":
            raise
        warnings.warn("numba unavailable; falling back to pure-numpy kernels")
        return "numpy", _NUMPY_IMPLS


ACTIVE_BACKEND, _IMPLS = _select_backend()

softmax_rows = _IMPLS["softmax_rows"]
softmax_rows_bwd = _IMPLS["softmax_rows_bwd"]
layernorm = _IMPLS["layernorm"]
layernorm_bwd = _IMPLS["layernorm_bwd"]
gelu = _IMPLS["gelu"]
gelu_bwd = _IMPLS["gelu_bwd"]
gate_mix = _IMPLS["gate_mix"]
gate_mix_bwd = _IMPLS["gate_mix_bwd"]
sigmoid = _IMPLS["sigmoid"]
adam_step = _IMPLS["adam_step"]


def get_impls(backend):
    """Return the kernel table for an explicit backend ("numpy" or "numba")."""
    if backend == "numpy":
        return dict(_NUMPY_IMPLS)
    if backend == "numba":
        return _build_numba_impls()
    raise ValueError(f"unknown kernel backend: {backend!r}")
