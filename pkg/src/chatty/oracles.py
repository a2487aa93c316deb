"""Independent reference computations used to check the vectorized code.

Everything here is written with explicit Python loops over scalars (or, for
gradients, central finite differences) and never touches the autodiff engine.
"""

from __future__ import annotations

import math
from typing import Callable, Dict

import numpy as np


def matmul_loop(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
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


def softmax_row_loop(z, temperature=1.0):
    z = [v / temperature for v in z]
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def cross_entropy_loop(logits, labels):
    total = 0.0
    for row, y in zip(np.asarray(logits, float), labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[int(y)]
    return total / len(labels)


def adversarial_loop(disc_src, disc_tgt, clamp=1e-7):
    def c(p):
        return min(max(float(p), clamp), 1.0 - clamp)

    src = [c(p) for p in np.ravel(disc_src)]
    tgt = [c(p) for p in np.ravel(disc_tgt)]
    return -sum(math.log(p) for p in src) / len(src) - sum(math.log(1.0 - p) for p in tgt) / len(tgt)


def transport_loss_loop(t1, t2, m=None):
    """``|sum_{i != j} sum_{p,q} t1[i,p] m[p,q] t2[j,q]|`` with explicit loops."""
    t1, t2 = np.asarray(t1, float), np.asarray(t2, float)
    b, c = t1.shape
    m = np.eye(c) if m is None else np.asarray(m, float)
    off = 0.0
    for i in range(b):
        for j in range(b):
            if i == j:
                continue
            s = 0.0
            for p in range(c):
                for q in range(c):
                    s += t1[i, p] * m[p, q] * t2[j, q]
            off += s
    return abs(off)


def cosine_transport_loss_loop(t1, t2, eps=1e-8):
    t1, t2 = np.asarray(t1, float), np.asarray(t2, float)
    b = t1.shape[0]
    off = 0.0
    for i in range(b):
        ni = math.sqrt(sum(v * v for v in t1[i])) + eps
        for j in range(b):
            if i == j:
                continue
            nj = math.sqrt(sum(v * v for v in t2[j])) + eps
            off += sum(x * y for x, y in zip(t1[i], t2[j])) / (ni * nj)
    return abs(off)


def mcc_loop(logits, temperature=2.5):
    """Minimum class confusion, one scalar at a time.

    probabilities -> per-sample entropy -> weights B*softmax(-H) over samples
    -> weighted class correlation -> row normalization -> mean off-diagonal
    row mass.
    """
    z = np.asarray(logits, float)
    b, c = z.shape
    probs = [softmax_row_loop(row, temperature) for row in z]
    ent = []
    for p in probs:
        h = 0.0
        for v in p:
            if v > 0:
                h -= v * math.log(v)
        ent.append(h)
    mx = max(-h for h in ent)
    ew = [math.exp(-h - mx) for h in ent]
    sw = sum(ew)
    w = [b * v / sw for v in ew]
    conf = [[0.0] * c for _ in range(c)]
    for j in range(c):
        for k in range(c):
            s = 0.0
            for i in range(b):
                s += probs[i][j] * w[i] * probs[i][k]
            conf[j][k] = s
    loss = 0.0
    for j in range(c):
        rs = sum(conf[j])
        if rs == 0.0:
            continue
        for k in range(c):
            if k != j:
                loss += conf[j][k] / rs
    return loss / c


def accuracy_loop(pred, y):
    hits = 0
    for p, t in zip(pred, y):
        if int(p) == int(t):
            hits += 1
    return hits / len(y) if len(y) else 0.0


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Singleton clusters score 0; returns 0.0 when fewer than two clusters exist.
    """
    x = np.asarray(points, float)
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) < 2 or len(x) < 2:
        return 0.0
    d = np.sqrt(np.maximum(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1), 0.0))
    scores = np.zeros(len(x))
    for i in range(len(x)):
        own = y == y[i]
        n_own = own.sum() - 1
        if n_own == 0:
            continue
        a = d[i, own].sum() / n_own
        bmin = min(d[i, y == k].mean() for k in classes if k != y[i])
        scores[i] = (bmin - a) / max(a, bmin) if max(a, bmin) > 0 else 0.0
    return float(scores.mean())


def finite_difference(f: Callable[[], float], params: Dict[str, np.ndarray],
                      h: float = 1e-5, names=None) -> Dict[str, np.ndarray]:
    """Central differences of ``f()`` w.r.t. every entry of ``params`` (perturbed in place)."""
    out = {}
    for k in (params if names is None else names):
        p = params[k]
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out[k] = g
    return out


def rel_error(a, b, rtol=1e-4, atol=1e-7) -> float:
    """Worst entrywise ``|a-b| / max(|a|, |b|, atol/rtol)``.

    A result below ``rtol`` means every entry agrees to relative ``rtol`` or,
    for entries near zero, to absolute ``atol``.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), atol / rtol)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
