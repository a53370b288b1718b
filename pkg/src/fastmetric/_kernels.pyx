# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled phase-1 kernels: minibatch pair losses with lazy row-wise Adam."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, pow

cnp.import_array()

BACKEND = "cython"


cdef extern from *:
    void __builtin_prefetch(const void* addr) nogil

# how many pairs (rows) ahead to prefetch; the table is accessed at random
cdef enum:
    AHEAD = 16


cdef inline double _pair_grad(const double* T, Py_ssize_t d, Py_ssize_t a, Py_ssize_t b,
                              double y, int loss_code, double margin,
                              double* ga, double* gb, double scale) noexcept nogil:
    cdef Py_ssize_t c
    cdef const double* ta = T + a * d
    cdef const double* tb = T + b * d
    cdef double s = 0.0, diff, dist, hinge, coef, r
    if loss_code == 0:
        for c in range(d):
            diff = ta[c] - tb[c]
            s += diff * diff
        dist = sqrt(s)
        if y > 0.5:
            for c in range(d):
                diff = ta[c] - tb[c]
                ga[c] = scale * 2.0 * diff
                gb[c] = -scale * 2.0 * diff
            return s
        hinge = margin - dist
        if hinge <= 0.0:
            for c in range(d):
                ga[c] = 0.0
                gb[c] = 0.0
            return 0.0
        if dist > 0.0:
            coef = -2.0 * hinge / dist
        else:
            coef = 0.0
        for c in range(d):
            diff = ta[c] - tb[c]
            ga[c] = scale * coef * diff
            gb[c] = -scale * coef * diff
        return hinge * hinge
    for c in range(d):
        s += ta[c] * tb[c]
    r = y - s
    for c in range(d):
        ga[c] = -scale * r * tb[c]
        gb[c] = -scale * r * ta[c]
    return 0.5 * r * r


cdef inline void _prefetch_row(const double* base, Py_ssize_t row, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t off
    for off in range(0, d, 8):  # one 64-byte line per 8 doubles
        __builtin_prefetch(base + row * d + off)


cdef inline Py_ssize_t _slot_for(cnp.int64_t row, cnp.int64_t* slot, cnp.int64_t* rows,
                                 double* gsum, Py_ssize_t* nslots, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t c, s = slot[row]
    if s < 0:
        s = nslots[0]
        slot[row] = s
        rows[s] = row
        for c in range(d):
            gsum[s * d + c] = 0.0
        nslots[0] = s + 1
    return s


def phase1_epoch(double[:, ::1] targets, double[:, ::1] m1, double[:, ::1] m2,
                 const cnp.int64_t[::1] pi, const cnp.int64_t[::1] pj,
                 const cnp.int8_t[::1] py, const cnp.int64_t[::1] order,
                 Py_ssize_t batch_size, int loss_code, double margin,
                 double lr, double beta1, double beta2, double eps,
                 long step, int threads=1):
    """One shuffled pass over the pairs, updating ``targets`` in place.

    Returns ``(step, loss_sum)`` where ``loss_sum`` adds up each pair's loss
    evaluated just before the update of its minibatch.
    """
    cdef Py_ssize_t n = targets.shape[0], d = targets.shape[1]
    cdef Py_ssize_t npairs = order.shape[0]
    cdef Py_ssize_t start, stop, bl, k, q, c, row, s, nslots
    cdef double scale, g, bc1, bc2, step_size, inv_rb, loss_sum = 0.0
    cdef double* gk
    cdef double* gs

    if n == 0 or npairs == 0:
        return step, 0.0
    slot_arr = np.full(n, -1, dtype=np.int64)
    rows_arr = np.empty(2 * batch_size, dtype=np.int64)
    gsum_arr = np.zeros((2 * batch_size, d))
    ga_arr = np.empty((batch_size, d))
    gb_arr = np.empty((batch_size, d))
    losses_arr = np.empty(batch_size)
    cdef cnp.int64_t* slot = <cnp.int64_t*> cnp.PyArray_DATA(slot_arr)
    cdef cnp.int64_t* rows = <cnp.int64_t*> cnp.PyArray_DATA(rows_arr)
    cdef double* gsum = <double*> cnp.PyArray_DATA(gsum_arr)
    cdef double* ga = <double*> cnp.PyArray_DATA(ga_arr)
    cdef double* gb = <double*> cnp.PyArray_DATA(gb_arr)
    cdef double* losses = <double*> cnp.PyArray_DATA(losses_arr)
    cdef double* T = &targets[0, 0]
    cdef double* M1 = &m1[0, 0]
    cdef double* M2 = &m2[0, 0]
    cdef const cnp.int64_t* I = &pi[0]
    cdef const cnp.int64_t* J = &pj[0]
    cdef const cnp.int8_t* Y = &py[0]
    cdef const cnp.int64_t* O = &order[0]

    start = 0
    while start < npairs:
        stop = start + batch_size
        if stop > npairs:
            stop = npairs
        bl = stop - start
        scale = 1.0 / bl

        # gradients against the pre-batch table; threads only split this loop
        if threads > 1:
            for k in prange(bl, nogil=True, num_threads=threads, schedule="static"):
                losses[k] = _pair_grad(T, d, I[O[start + k]], J[O[start + k]], Y[O[start + k]],
                                       loss_code, margin, ga + k * d, gb + k * d, scale)
        else:
            with nogil:
                for k in range(bl):
                    if k + AHEAD < bl:
                        q = O[start + k + AHEAD]
                        _prefetch_row(T, I[q], d)
                        _prefetch_row(T, J[q], d)
                    q = O[start + k]
                    losses[k] = _pair_grad(T, d, I[q], J[q], Y[q], loss_code, margin,
                                           ga + k * d, gb + k * d, scale)

        with nogil:
            # serial, order-fixed accumulation: i-row then j-row, pair by pair
            nslots = 0
            for k in range(bl):
                loss_sum += losses[k]
                q = O[start + k]
                s = _slot_for(I[q], slot, rows, gsum, &nslots, d)
                gs = gsum + s * d
                gk = ga + k * d
                for c in range(d):
                    gs[c] += gk[c]
                s = _slot_for(J[q], slot, rows, gsum, &nslots, d)
                gs = gsum + s * d
                gk = gb + k * d
                for c in range(d):
                    gs[c] += gk[c]

            # lazy Adam: only touched rows move; bias correction uses the global step
            step += 1
            bc1 = 1.0 - pow(beta1, <double>step)
            bc2 = 1.0 - pow(beta2, <double>step)
            step_size = lr / bc1
            inv_rb = 1.0 / sqrt(bc2)
            for s in range(nslots):
                if s + AHEAD < nslots:
                    row = rows[s + AHEAD]
                    _prefetch_row(M1, row, d)
                    _prefetch_row(M2, row, d)
                row = rows[s]
                slot[row] = -1
                gs = gsum + s * d
                for c in range(d):
                    g = gs[c]
                    M1[row * d + c] = beta1 * M1[row * d + c] + (1.0 - beta1) * g
                    M2[row * d + c] = beta2 * M2[row * d + c] + (1.0 - beta2) * (g * g)
                    T[row * d + c] -= step_size * M1[row * d + c] / (sqrt(M2[row * d + c]) * inv_rb + eps)
        start = stop
    return step, loss_sum


def pair_objective(const double[:, ::1] targets, const cnp.int64_t[::1] pi,
                   const cnp.int64_t[::1] pj, const cnp.int8_t[::1] py,
                   int loss_code, double margin):
    """Mean pair loss over the whole constraint set."""
    cdef Py_ssize_t k, c, npairs = pi.shape[0], d = targets.shape[1]
    cdef double total = 0.0, s, diff, dist, hinge
    cdef cnp.int64_t a, b
    if npairs == 0:
        return 0.0
    with nogil:
        for k in range(npairs):
            a = pi[k]
            b = pj[k]
            s = 0.0
            if loss_code == 0:
                for c in range(d):
                    diff = targets[a, c] - targets[b, c]
                    s += diff * diff
                if py[k] == 1:
                    total += s
                else:
                    dist = sqrt(s)
                    hinge = margin - dist
                    if hinge > 0.0:
                        total += hinge * hinge
            else:
                for c in range(d):
                    s += targets[a, c] * targets[b, c]
                total += 0.5 * (py[k] - s) * (py[k] - s)
    return total / npairs
