"""Compiled per-row kernels for the discriminator.

Every reduction runs in a fixed sequential order inside one row (or one
item/head), so a row's result never depends on the other rows in the batch.
"""

import math

import numba
import numpy as np

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@numba.njit(cache=True, nogil=True)
def ln_fwd(x, g, b, eps):
    m, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(m)
    for i in range(m):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            xh = (x[i, j] - mu) * r
            xhat[i, j] = xh
            y[i, j] = xh * g[j] + b[j]
    return y, xhat, rstd


@numba.njit(cache=True, nogil=True)
def ln_bwd(dy, g, xhat, rstd, dg, db):
    """Returns dx; accumulates parameter gradients into ``dg`` and ``db``."""
    m, d = dy.shape
    dx = np.empty_like(dy)
    for i in range(m):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            dxh = dy[i, j] * g[j]
            s1 += dxh
            s2 += dxh * xhat[i, j]
            dg[j] += dy[i, j] * xhat[i, j]
            db[j] += dy[i, j]
        s1 /= d
        s2 /= d
        for j in range(d):
            dx[i, j] = rstd[i] * (dy[i, j] * g[j] - s1 - xhat[i, j] * s2)
    return dx


@numba.njit(cache=True, nogil=True)
def gelu_fwd(z):
    """Exact (erf) GELU; returns the activation and the normal CDF at ``z``."""
    m, f = z.shape
    out = np.empty_like(z)
    cdf = np.empty_like(z)
    for i in range(m):
        for j in range(f):
            c = 0.5 * (1.0 + math.erf(z[i, j] * _INV_SQRT2))
            cdf[i, j] = c
            out[i, j] = z[i, j] * c
    return out, cdf


@numba.njit(cache=True, nogil=True)
def gelu_bwd(dout, z, cdf):
    m, f = z.shape
    dz = np.empty_like(z)
    for i in range(m):
        for j in range(f):
            x = z[i, j]
            dz[i, j] = dout[i, j] * (cdf[i, j] + x * _INV_SQRT_2PI * math.exp(-0.5 * x * x))
    return dz


@numba.njit(cache=True, nogil=True)
def attn_fwd(q, k, v, keep, use_keep, scale):
    """Softmax attention per item and head.

    ``q, k, v`` are ``(n, L, H, dh)``; ``keep`` is ``(n, H, L, L)`` (ignored
    unless ``use_keep``). Returns context ``(n, L, H, dh)`` and the attention
    probabilities before dropout.
    """
    n, L, H, dh = q.shape
    ctx = np.zeros_like(q)
    probs = np.empty((n, H, L, L))
    row = np.empty(L)
    for a in range(n):
        for h in range(H):
            for i in range(L):
                mx = -np.inf
                for j in range(L):
                    s = 0.0
                    for c in range(dh):
                        s += q[a, i, h, c] * k[a, j, h, c]
                    s *= scale
                    row[j] = s
                    if s > mx:
                        mx = s
                tot = 0.0
                for j in range(L):
                    e = math.exp(row[j] - mx)
                    row[j] = e
                    tot += e
                for j in range(L):
                    p = row[j] / tot
                    probs[a, h, i, j] = p
                    if use_keep:
                        p *= keep[a, h, i, j]
                    for c in range(dh):
                        ctx[a, i, h, c] += p * v[a, j, h, c]
    return ctx, probs


@numba.njit(cache=True, nogil=True)
def attn_bwd(dctx, q, k, v, probs, keep, use_keep, scale):
    n, L, H, dh = q.shape
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    dp = np.empty(L)
    for a in range(n):
        for h in range(H):
            for i in range(L):
                dot = 0.0
                for j in range(L):
                    p = probs[a, h, i, j]
                    kp = keep[a, h, i, j] if use_keep else 1.0
                    g = 0.0
                    for c in range(dh):
                        g += dctx[a, i, h, c] * v[a, j, h, c]
                        dv[a, j, h, c] += p * kp * dctx[a, i, h, c]
                    g *= kp
                    dp[j] = g
                    dot += g * p
                for j in range(L):
                    ds = probs[a, h, i, j] * (dp[j] - dot) * scale
                    for c in range(dh):
                        dq[a, i, h, c] += ds * k[a, j, h, c]
                        dk[a, j, h, c] += ds * q[a, i, h, c]
    return dq, dk, dv


@numba.njit(cache=True, nogil=True)
def _splitmix(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def keep_mask(seed, step, stream_id, uids, size, p):
    """Inverted-dropout multipliers: 0 or ``1/(1-p)`` per element.

    Element ``j`` of item ``uids[i]`` hashes the counter ``(uid << 24) + j``
    under a key derived from ``(seed, step, stream_id)``.
    """
    key = _splitmix(np.uint64(seed))
    key = _splitmix(key ^ np.uint64(step))
    key = _splitmix(key ^ np.uint64(stream_id))
    out = np.empty((uids.shape[0], size))
    scale = 1.0 / (1.0 - p)
    for i in range(uids.shape[0]):
        base = np.uint64(uids[i]) << np.uint64(24)
        for j in range(size):
            bits = _splitmix(_splitmix(base + np.uint64(j)) ^ key)
            u = np.float64(bits >> np.uint64(11)) * (1.0 / 9007199254740992.0)
            out[i, j] = scale if u >= p else 0.0
    return out
