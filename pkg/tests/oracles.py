"""Independent reference implementations used by the tests.

Nothing here imports from the package: these are plain loops and finite
differences to check the vectorised code against.
"""
import math

import numpy as np


def brute_made(gt, pred):
    best = math.inf
    for k in range(len(pred)):
        total = 0.0
        for t in range(len(gt)):
            dx = pred[k][t][0] - gt[t][0]
            dy = pred[k][t][1] - gt[t][1]
            total += math.sqrt(dx * dx + dy * dy)
        best = min(best, total / len(gt))
    return best


def brute_mfde(gt, pred):
    best = math.inf
    for k in range(len(pred)):
        dx = pred[k][-1][0] - gt[-1][0]
        dy = pred[k][-1][1] - gt[-1][1]
        best = min(best, math.sqrt(dx * dx + dy * dy))
    return best


def brute_cs(points, labels):
    """Counts [path, terrain, obstacle, out] by walking every point."""
    counts = [0, 0, 0, 0]
    h, w = len(labels), len(labels[0])
    for x, y in points:
        c, r = math.floor(x), math.floor(y)
        if 0 <= r < h and 0 <= c < w:
            counts[int(labels[r][c])] += 1
        else:
            counts[3] += 1
    return counts


def central_difference(f, arrays, eps=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. each float64 array, in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f()
            flat[i] = old - eps
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
