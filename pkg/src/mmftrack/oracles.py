"""Slow, independent reference implementations used by the tests and ``selftest``.

Each function recomputes a quantity by the most direct route available (loops,
sampling, brute-force enumeration) without calling the production code path.
"""

from __future__ import annotations

import math

import numpy as np


def softmax_row(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def layer_norm_row(x, gamma, beta, eps=1e-5):
    n = len(x)
    mu = sum(x) / n
    var = sum((v - mu) ** 2 for v in x) / n
    return [gamma[i] * (x[i] - mu) / math.sqrt(var + eps) + beta[i] for i in range(n)]


def _lin(x, w, b):
    return [sum(x[i] * w[i][o] for i in range(len(x))) + b[o] for o in range(len(b))]


def attention_oracle(q_feats, q_pos, kv_feats, kv_pos, weights, name):
    """Double-loop single-head attention with the residual on the projected query."""
    wa, ba = weights[f"{name}.alpha.w"].tolist(), weights[f"{name}.alpha.b"].tolist()
    wb, bb = weights[f"{name}.beta.w"].tolist(), weights[f"{name}.beta.b"].tolist()
    wg, bg = weights[f"{name}.gamma.w"].tolist(), weights[f"{name}.gamma.b"].tolist()
    gamma, beta = weights[f"{name}.ln.gamma"].tolist(), weights[f"{name}.ln.beta"].tolist()
    d = len(ba)
    qs = [[a + p for a, p in zip(_lin(f, wa, ba), pos)] for f, pos in zip(q_feats.tolist(), q_pos.tolist())]
    ks = [[a + p for a, p in zip(_lin(f, wb, bb), pos)] for f, pos in zip(kv_feats.tolist(), kv_pos.tolist())]
    vs = [_lin(f, wg, bg) for f in kv_feats.tolist()]
    out = []
    for q in qs:
        logits = [sum(q[c] * k[c] for c in range(d)) / math.sqrt(d) for k in ks]
        a = softmax_row(logits)
        agg = [sum(a[j] * vs[j][c] for j in range(len(vs))) for c in range(d)]
        out.append([x + y for x, y in zip(layer_norm_row(agg, gamma, beta), q)])
    return np.array(out)


def bilinear_oracle(fmap, r, c):
    h, w = len(fmap), len(fmap[0])
    r = min(max(r, 0.0), h - 1.0)
    c = min(max(c, 0.0), w - 1.0)
    total = None
    for rr in range(h):
        for cc in range(w):
            wt = max(0.0, 1 - abs(r - rr)) * max(0.0, 1 - abs(c - cc))
            if wt == 0:
                continue
            term = [wt * v for v in fmap[rr][cc]]
            total = term if total is None else [a + b for a, b in zip(total, term)]
    return total


def deform_attention_oracle(fmap, pos, weights, name, n_points):
    h, w, d = fmap.shape
    wa, ba = weights[f"{name}.alpha.w"].tolist(), weights[f"{name}.alpha.b"].tolist()
    wg, bg = weights[f"{name}.gamma.w"].tolist(), weights[f"{name}.gamma.b"].tolist()
    wo, bo = weights[f"{name}.offset.w"].tolist(), weights[f"{name}.offset.b"].tolist()
    wt, bt = weights[f"{name}.attn.w"].tolist(), weights[f"{name}.attn.b"].tolist()
    gamma, beta = weights[f"{name}.ln.gamma"].tolist(), weights[f"{name}.ln.beta"].tolist()
    f = fmap.tolist()
    p = pos.reshape(h, w, d).tolist()
    v = [[_lin(f[i][j], wg, bg) for j in range(w)] for i in range(h)]
    out = np.zeros((h, w, d))
    for i in range(h):
        for j in range(w):
            q = [a + b for a, b in zip(_lin(f[i][j], wa, ba), p[i][j])]
            off = _lin(q, wo, bo)
            a = softmax_row(_lin(q, wt, bt))
            agg = [0.0] * d
            for k in range(n_points):
                s = bilinear_oracle(v, i + off[2 * k], j + off[2 * k + 1])
                agg = [x + a[k] * y for x, y in zip(agg, s)]
            out[i, j] = [x + y for x, y in zip(layer_norm_row(agg, gamma, beta), q)]
    return out


def interpolate_oracle(coarse_coords, coarse_feats, fine_coords, eps=1e-8):
    out = []
    for x in fine_coords.tolist():
        d2 = [sum((a - b) ** 2 for a, b in zip(x, c)) for c in coarse_coords.tolist()]
        order = sorted(range(len(d2)), key=lambda i: (d2[i], i))[:3]
        if d2[order[0]] == 0.0:
            out.append(coarse_feats[order[0]].tolist())
            continue
        wts = [1.0 / (d2[i] + eps) for i in order]
        s = sum(wts)
        row = [0.0] * coarse_feats.shape[1]
        for wgt, i in zip(wts, order):
            row = [r + wgt / s * f for r, f in zip(row, coarse_feats[i].tolist())]
        out.append(row)
    return np.array(out)


def iou_sampling_oracle(a, b, n: int = 400) -> float:
    """3D IoU from a regular sample grid over box ``a``'s footprint."""
    u = (np.arange(n) + 0.5) / n - 0.5
    lu, wu = np.meshgrid(u * a.l, u * a.w, indexing="ij")
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    x = a.x + ca * lu - sa * wu
    y = a.y + sa * lu + ca * wu
    dx, dy = x - b.x, y - b.y
    cb, sb = math.cos(b.theta), math.sin(b.theta)
    lb = cb * dx + sb * dy
    wb = -sb * dx + cb * dy
    inside = (np.abs(lb) <= b.l / 2) & (np.abs(wb) <= b.w / 2)
    area = inside.mean() * a.l * a.w
    zo = max(0.0, min(a.z + a.h / 2, b.z + b.h / 2) - max(a.z - a.h / 2, b.z - b.h / 2))
    inter = area * zo
    union = a.l * a.w * a.h + b.l * b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def success_oracle(ious) -> float:
    hits = 0
    for k in range(101):
        t = k / 100
        hits += sum(1 for v in ious if v > t) / len(ious)
    return 100.0 * hits / 101


def precision_oracle(errors) -> float:
    hits = 0
    for k in range(101):
        d = 2.0 * k / 100
        hits += sum(1 for v in errors if v < d) / len(errors)
    return 100.0 * hits / 101


def central_difference(fn, x, step: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        hi = fn(x)
        x[idx] = old - step
        lo = fn(x)
        x[idx] = old
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def focal_oracle(logits, gt, alpha=2.0, beta=4.0) -> float:
    total, n_pos = 0.0, 0
    for x, g in zip(np.ravel(logits).tolist(), np.ravel(gt).tolist()):
        p = 1.0 / (1.0 + math.exp(-x))
        if g == 1.0:
            n_pos += 1
            total += -((1 - p) ** alpha) * math.log(p)
        else:
            total += -((1 - g) ** beta) * p**alpha * math.log(1 - p)
    return total / max(1, n_pos)
