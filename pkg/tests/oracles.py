"""Brute-force reference implementations, written loop-by-loop from the
definitions and sharing no code with the package."""

import math
from fractions import Fraction

import numpy as np


def conv3d(x, w, b, stride, padding):
    n, cin, T, H, W = x.shape
    cout, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.zeros((n, cin, T + 2 * pt, H + 2 * ph, W + 2 * pw))
    xp[:, :, pt:pt + T, ph:ph + H, pw:pw + W] = x
    to = (T + 2 * pt - kt) // st + 1
    ho = (H + 2 * ph - kh) // sh + 1
    wo = (W + 2 * pw - kw) // sw + 1
    out = np.zeros((n, cout, to, ho, wo))
    for i in range(n):
        for o in range(cout):
            for t in range(to):
                for y in range(ho):
                    for z in range(wo):
                        acc = 0.0 if b is None else b[o]
                        for c in range(cin):
                            for a in range(kt):
                                for p in range(kh):
                                    for q in range(kw):
                                        acc += w[o, c, a, p, q] * xp[i, c, t * st + a, y * sh + p, z * sw + q]
                        out[i, o, t, y, z] = acc
    return out


def conv_transpose3d(x, w, b, stride, padding):
    """Scatter form: every input element stamps the kernel into the output."""
    n, cin, T, H, W = x.shape
    _, cout, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    full = np.zeros((n, cout, (T - 1) * st + kt, (H - 1) * sh + kh, (W - 1) * sw + kw))
    for i in range(n):
        for c in range(cin):
            for t in range(T):
                for y in range(H):
                    for z in range(W):
                        v = x[i, c, t, y, z]
                        for o in range(cout):
                            for a in range(kt):
                                for p in range(kh):
                                    for q in range(kw):
                                        full[i, o, t * st + a, y * sh + p, z * sw + q] += v * w[c, o, a, p, q]
    out = full[:, :, pt:full.shape[2] - pt, ph:full.shape[3] - ph, pw:full.shape[4] - pw]
    if b is not None:
        out = out + np.asarray(b).reshape(1, -1, 1, 1, 1)
    return out


def pool3d(x, kind, kernel, stride, padding):
    n, c, T, H, W = x.shape
    kt, kh, kw = kernel
    st, sh, sw = stride
    pt, ph, pw = padding
    fill = -math.inf if kind == "max" else 0.0
    xp = np.full((n, c, T + 2 * pt, H + 2 * ph, W + 2 * pw), fill)
    xp[:, :, pt:pt + T, ph:ph + H, pw:pw + W] = x
    to = (T + 2 * pt - kt) // st + 1
    ho = (H + 2 * ph - kh) // sh + 1
    wo = (W + 2 * pw - kw) // sw + 1
    out = np.zeros((n, c, to, ho, wo))
    for i in range(n):
        for ch in range(c):
            for t in range(to):
                for y in range(ho):
                    for z in range(wo):
                        vals = [xp[i, ch, t * st + a, y * sh + p, z * sw + q]
                                for a in range(kt) for p in range(kh) for q in range(kw)]
                        out[i, ch, t, y, z] = max(vals) if kind == "max" else sum(vals) / len(vals)
    return out


def matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def linear(x, w, b):
    out = np.zeros((x.shape[0], w.shape[0]))
    for i in range(x.shape[0]):
        for o in range(w.shape[0]):
            out[i, o] = b[o] + sum(x[i, j] * w[o, j] for j in range(x.shape[1]))
    return out


def auc_pairwise(scores, labels) -> Fraction:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = Fraction(0)
    for p in pos:
        for q in neg:
            if p > q:
                total += 1
            elif p == q:
                total += Fraction(1, 2)
    return total / (len(pos) * len(neg))


def pearson(x, y) -> float:
    """Covariance over product of standard deviations, two-pass."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def softmax(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def adam_first_step(p, g, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    mhat = m / (1 - b1)
    vhat = v / (1 - b2)
    return p - lr * mhat / (math.sqrt(vhat) + eps)
