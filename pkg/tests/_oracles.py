"""Independent reference implementations used by the tests."""

import numpy as np


def numeric_grad(f, x, step=1e-3):
    """Central finite differences of scalar ``f`` at ``x`` (float64, element by element)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f(x)
        x[i] = old - step
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def conv2d_loops(x, w, b, stride=1, padding=0):
    """Direct nested-loop cross-correlation."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = b[fi]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u, j * stride + v] * w[fi, ci, u, v]
                    out[ni, fi, i, j] = acc
    return out


def edge_pixel(img, i, j):
    h, w = img.shape
    return img[min(max(i, 0), h - 1), min(max(j, 0), w - 1)]


def window(img, i, j, k):
    r = k // 2
    return np.array([[edge_pixel(img, i + u, j + v) for v in range(-r, r + 1)] for u in range(-r, r + 1)])
