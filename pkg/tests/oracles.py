"""Independent brute-force oracles: plain loops, no vectorization, no reuse
of the library's kernels. The point is a second route to the same numbers."""

import numpy as np


def conv2d_loops(x, kernel, bias, stride, padding):
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    assert ci == c
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if bias is None else float(bias[o])
                    for cc in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                yy = i * stride + u - padding
                                xx = j * stride + v - padding
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc += x[b, cc, yy, xx] * kernel[o, cc, u, v]
                    out[b, o, i, j] = acc
    return out


def maxpool2d_loops(x, k, stride):
    n, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for b in range(n):
        for cc in range(c):
            for i in range(oh):
                for j in range(ow):
                    best = -np.inf
                    for u in range(k):
                        for v in range(k):
                            val = x[b, cc, i * stride + u, j * stride + v]
                            if val > best:
                                best = val
                    out[b, cc, i, j] = best
    return out


def avgpool2d_loops(x, kh, kw):
    n, c, h, w = x.shape
    oh, ow = h // kh, w // kw
    out = np.zeros((n, c, oh, ow))
    for b in range(n):
        for cc in range(c):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for u in range(kh):
                        for v in range(kw):
                            acc += x[b, cc, i * kh + u, j * kw + v]
                    out[b, cc, i, j] = acc / (kh * kw)
    return out


def upsample_bilinear_loops(x, out_h, out_w):
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))
    for b in range(n):
        for cc in range(c):
            for i in range(out_h):
                for j in range(out_w):
                    sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
                    sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
                    y0 = int(np.floor(sy))
                    x0 = int(np.floor(sx))
                    y1 = min(y0 + 1, h - 1)
                    x1 = min(x0 + 1, w - 1)
                    wy = sy - y0
                    wx = sx - x0
                    out[b, cc, i, j] = (
                        x[b, cc, y0, x0] * (1 - wy) * (1 - wx)
                        + x[b, cc, y0, x1] * (1 - wy) * wx
                        + x[b, cc, y1, x0] * wy * (1 - wx)
                        + x[b, cc, y1, x1] * wy * wx
                    )
    return out


def global_avg_pool_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1))
    for b in range(n):
        for cc in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[b, cc, i, j]
            out[b, cc, 0, 0] = acc / (h * w)
    return out


def spatial_sum_loops(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, 1, 1))
    for b in range(n):
        for cc in range(c):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += x[b, cc, i, j]
            out[b, cc, 0, 0] = acc
    return out


def linear_loops(x, w, b):
    n, f = x.shape
    fo = w.shape[1]
    out = np.zeros((n, fo))
    for i in range(n):
        for o in range(fo):
            acc = float(b[o]) if b is not None else 0.0
            for j in range(f):
                acc += x[i, j] * w[j, o]
            out[i, o] = acc
    return out


def dice_loss_loops(probs, target, eps=1e-6):
    n, c, h, w = probs.shape
    total = 0.0
    for cc in range(c):
        inter, psum, tsum = 0.0, 0.0, 0.0
        # accumulate in a different (class-major, reversed spatial) order
        for b in reversed(range(n)):
            for i in reversed(range(h)):
                for j in reversed(range(w)):
                    inter += probs[b, cc, i, j] * target[b, cc, i, j]
                    psum += probs[b, cc, i, j]
                    tsum += target[b, cc, i, j]
        total += (2.0 * inter + eps) / (psum + tsum + eps)
    return 1.0 - total / c


def bfs_components(mask):
    """4-connectivity labeling by breadth-first search."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    nxt = 0
    for si in range(h):
        for sj in range(w):
            if not mask[si, sj] or labels[si, sj]:
                continue
            nxt += 1
            queue = [(si, sj)]
            labels[si, sj] = nxt
            while queue:
                i, j = queue.pop(0)
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not labels[ni, nj]:
                        labels[ni, nj] = nxt
                        queue.append((ni, nj))
    return labels


def partition_signature(labels):
    """Canonical form of a labeling: map each pixel to the sorted component id."""
    h, w = labels.shape
    remap = {}
    out = np.zeros_like(labels)
    for i in range(h):
        for j in range(w):
            lab = labels[i, j]
            if lab == 0:
                continue
            if lab not in remap:
                remap[lab] = len(remap) + 1
            out[i, j] = remap[lab]
    return out
