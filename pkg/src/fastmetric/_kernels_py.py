"""Pure numpy fallback for the compiled phase-1 kernels.

Same signatures and the same floating-point operation order as ``_kernels.pyx``
(per-column sequential sums, interleaved row accumulation), so the two backends
agree to rounding on identical inputs.
"""

import numpy as np

BACKEND = "numpy"


def _rowwise_sq(diff):
    s = np.zeros(diff.shape[0])
    for c in range(diff.shape[1]):
        s += diff[:, c] * diff[:, c]
    return s


def _rowwise_dot(a, b):
    s = np.zeros(a.shape[0])
    for c in range(a.shape[1]):
        s += a[:, c] * b[:, c]
    return s


def _batch_grads(targets, i, j, y, loss_code, margin, scale):
    a = targets[i]
    b = targets[j]
    if loss_code == 0:
        diff = a - b
        sq = _rowwise_sq(diff)
        dist = np.sqrt(sq)
        hinge = margin - dist
        similar = y == 1
        active = ~similar & (hinge > 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(active & (dist > 0.0), -2.0 * hinge / dist, 0.0)
        coef = np.where(similar, 2.0, coef)
        ga = (scale * coef)[:, None] * diff
        losses = np.where(similar, sq, np.where(active, hinge * hinge, 0.0))
        return losses, ga, -ga
    dots = _rowwise_dot(a, b)
    r = y - dots
    ga = -(scale * r)[:, None] * b
    gb = -(scale * r)[:, None] * a
    return 0.5 * r * r, ga, gb


def phase1_epoch(targets, m1, m2, pi, pj, py, order, batch_size, loss_code, margin,
                 lr, beta1, beta2, eps, step, threads=1):
    npairs = len(order)
    loss_sum = 0.0
    d = targets.shape[1]
    for start in range(0, npairs, batch_size):
        sel = order[start : start + batch_size]
        bl = len(sel)
        i = pi[sel]
        j = pj[sel]
        y = py[sel].astype(np.float64)
        losses, ga, gb = _batch_grads(targets, i, j, y, loss_code, margin, 1.0 / bl)
        for v in losses.tolist():
            loss_sum += v

        rows = np.stack([i, j], axis=1).reshape(-1)
        grads = np.stack([ga, gb], axis=1).reshape(-1, d)
        uniq, inv = np.unique(rows, return_inverse=True)
        gsum = np.zeros((len(uniq), d))
        np.add.at(gsum, inv, grads)

        step += 1
        bc1 = 1.0 - beta1 ** float(step)
        bc2 = 1.0 - beta2 ** float(step)
        mm = beta1 * m1[uniq] + (1.0 - beta1) * gsum
        vv = beta2 * m2[uniq] + (1.0 - beta2) * (gsum * gsum)
        m1[uniq] = mm
        m2[uniq] = vv
        # (lr / bc1) m / (sqrt(v) / sqrt(bc2) + eps), arranged as in the compiled kernel
        step_size = lr / bc1
        inv_rb = 1.0 / np.sqrt(bc2)
        targets[uniq] -= step_size * mm / (np.sqrt(vv) * inv_rb + eps)
    return step, loss_sum


def pair_objective(targets, pi, pj, py, loss_code, margin):
    if len(pi) == 0:
        return 0.0
    a = targets[pi]
    b = targets[pj]
    y = py.astype(np.float64)
    if loss_code == 0:
        sq = _rowwise_sq(a - b)
        hinge = np.maximum(0.0, margin - np.sqrt(sq))
        losses = np.where(py == 1, sq, hinge * hinge)
    else:
        r = y - _rowwise_dot(a, b)
        losses = 0.5 * r * r
    total = 0.0
    for v in losses.tolist():
        total += v
    return total / len(pi)
