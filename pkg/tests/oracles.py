"""Independent scalar reference implementations used as test oracles.

Everything here is written as plainly as possible (explicit loops, no shared
code with the fast paths) so it can stand as an independent check.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_reference(x, w, b=None, stride=1, padding=0):
    """Direct-loop 2D cross-correlation over (B, C, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    bsz, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((bsz, cin, h + 2 * ph, wid + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + wid] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wid + 2 * pw - kw) // sw + 1
    out = np.zeros((bsz, cout, ho, wo))
    for bi in range(bsz):
        for oc in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(cin):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[bi, ic, i * sh + di, j * sw + dj] * w[oc, ic, di, dj]
                    out[bi, oc, i, j] = acc + (b[oc] if b is not None else 0.0)
    return out


def bilinear_reference(feature_map, u, v):
    """Scalar bilinear interpolation with zero padding, (d_f, H, W) map."""
    fm = np.asarray(feature_map, dtype=np.float64)
    d_f, h, w = fm.shape
    x0 = math.floor(u)
    y0 = math.floor(v)
    fu = u - x0
    fv = v - y0
    out = np.zeros(d_f)
    for dy, dx, wt in ((0, 0, (1 - fu) * (1 - fv)), (0, 1, fu * (1 - fv)),
                       (1, 0, (1 - fu) * fv), (1, 1, fu * fv)):
        yy, xx = y0 + dy, x0 + dx
        if 0 <= xx < w and 0 <= yy < h:
            for c in range(d_f):
                out[c] += wt * fm[c, yy, xx]
    return out


def fuse_reference(feats, locations, weights, valid):
    """Triple-loop deformable aggregation.

    feats (V, M, d_f, H, W); locations (N, M, K, 2); weights (N, M, K);
    valid (N, M).  Returns (V, N, d_f).
    """
    feats = np.asarray(feats, dtype=np.float64)
    v_n, m, d_f, h, w = feats.shape
    n, _, k, _ = locations.shape
    out = np.zeros((v_n, n, d_f))
    for vol in range(v_n):
        for qi in range(n):
            for vj in range(m):
                if not valid[qi, vj]:
                    continue
                for sk in range(k):
                    u, vv = locations[qi, vj, sk]
                    sample = bilinear_reference(feats[vol, vj], u, vv)
                    out[vol, qi] += weights[qi, vj, sk] * sample
    return out


def masked_softmax_reference(logits, valid):
    """Row softmax over valid slots only; empty rows are all zero."""
    logits = np.asarray(logits, dtype=np.float64)
    out = np.zeros_like(logits)
    for i in range(logits.shape[0]):
        idx = np.where(valid[i])[0]
        if idx.size == 0:
            continue
        row = logits[i, idx]
        e = np.exp(row - row.max())
        out[i, idx] = e / e.sum()
    return out


def project_reference(k_mat, r_mat, t_vec, point):
    """r = (1/z) K [R | t] q' with explicit homogeneous algebra."""
    k_mat = np.asarray(k_mat, dtype=np.float64)
    rt = np.concatenate([np.asarray(r_mat, dtype=np.float64),
                         np.asarray(t_vec, dtype=np.float64).reshape(3, 1)], axis=1)
    q = np.append(np.asarray(point, dtype=np.float64), 1.0)
    cam = rt @ q
    z = cam[2]
    pix = (k_mat @ cam) / z
    return pix[0], pix[1], z


def finite_difference(fn, arrays, h=1e-5):
    """Central-difference gradients of scalar ``fn`` w.r.t. each array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            hi = fn()
            flat[i] = keep - h
            lo = fn()
            flat[i] = keep
            gf[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads
