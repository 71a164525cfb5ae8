# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled SGD kernel.

Same contract as ``pure.sgd_train`` (see that module's docstring); the
layer sizes here are desk-scale, so the win comes from removing
per-batch Python and BLAS dispatch overhead, not from parallelism.
Floating-point summation order differs from the numpy path, so results
agree to tolerance, not bitwise.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, isfinite

cnp.import_array()


def sgd_train(double[::1] params, cnp.int64_t[::1] dims,
              double[:, ::1] x, cnp.int64_t[::1] y, cnp.int64_t[:, ::1] perms,
              Py_ssize_t batch_size, double lr, anchor_ref=None, double mu=0.0):
    cdef Py_ssize_t num_layers = dims.shape[0] - 1
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t epochs = perms.shape[0]
    cdef Py_ssize_t nparams = params.shape[0]

    # per-layer offsets into the flat parameter vector
    woff_np = np.zeros(num_layers, dtype=np.int64)
    boff_np = np.zeros(num_layers, dtype=np.int64)
    aoff_np = np.zeros(num_layers + 2, dtype=np.int64)
    cdef cnp.int64_t[::1] woff = woff_np
    cdef cnp.int64_t[::1] boff = boff_np
    cdef cnp.int64_t[::1] aoff = aoff_np

    cdef Py_ssize_t max_m = batch_size if batch_size < n else n
    cdef Py_ssize_t l, off = 0, wmax = 0
    for l in range(num_layers):
        woff[l] = off
        off += dims[l] * dims[l + 1]
        boff[l] = off
        off += dims[l + 1]
        if dims[l] * dims[l + 1] > wmax:
            wmax = dims[l] * dims[l + 1]
    if off != nparams:
        raise ValueError("parameter vector length does not match layer dims")
    for l in range(num_layers + 1):
        aoff[l + 1] = aoff[l] + max_m * dims[l]

    # activation and delta scratch share one layout: level l holds a
    # (m, dims[l]) block at aoff[l]
    abuf_np = np.zeros(aoff[num_layers + 1], dtype=np.float64)
    dbuf_np = np.zeros(aoff[num_layers + 1], dtype=np.float64)
    gw_np = np.zeros(wmax, dtype=np.float64)
    losses_np = np.full(epochs, np.nan)
    cdef double[::1] abuf = abuf_np
    cdef double[::1] dbuf = dbuf_np
    cdef double[::1] gw = gw_np
    cdef double[::1] losses = losses_np

    cdef double[::1] ref
    cdef bint prox = mu != 0.0
    if prox:
        ref = anchor_ref
        if ref.shape[0] != nparams:
            raise ValueError("anchor length does not match parameter vector")
    else:
        ref = params  # unused, keeps the memoryview initialized

    cdef Py_ssize_t e, start, i, j, k, m, r, t, din, dout, wl, bl, al, anext
    cdef Py_ssize_t kclass = dims[num_layers]
    cdef Py_ssize_t step = 0, bad_step = -1
    cdef double a, s, mx, v, g, loss, lsum, esum, bsum
    cdef Py_ssize_t nb
    cdef bint dead = False

    with nogil:
        for e in range(epochs):
            if dead:
                break
            bsum = 0.0
            nb = 0
            start = 0
            while start < n:
                m = batch_size if start + batch_size <= n else n - start
                # gather the shuffled rows into contiguous scratch
                for i in range(m):
                    r = perms[e, start + i]
                    for j in range(dims[0]):
                        abuf[i * dims[0] + j] = x[r, j]

                for l in range(num_layers):
                    din = dims[l]
                    dout = dims[l + 1]
                    wl = woff[l]
                    bl = boff[l]
                    al = aoff[l]
                    anext = aoff[l + 1]
                    for i in range(m):
                        for j in range(dout):
                            abuf[anext + i * dout + j] = params[bl + j]
                    for i in range(m):
                        for k in range(din):
                            a = abuf[al + i * din + k]
                            if a != 0.0:
                                for j in range(dout):
                                    abuf[anext + i * dout + j] += a * params[wl + k * dout + j]
                    if l < num_layers - 1:
                        for i in range(m):
                            for j in range(dout):
                                if abuf[anext + i * dout + j] < 0.0:
                                    abuf[anext + i * dout + j] = 0.0

                # loss and softmax; probabilities land in the delta buffer
                al = aoff[num_layers]
                lsum = 0.0
                for i in range(m):
                    mx = abuf[al + i * kclass]
                    for j in range(1, kclass):
                        v = abuf[al + i * kclass + j]
                        if v > mx:
                            mx = v
                    s = 0.0
                    for j in range(kclass):
                        v = exp(abuf[al + i * kclass + j] - mx)
                        dbuf[al + i * kclass + j] = v
                        s += v
                    for j in range(kclass):
                        dbuf[al + i * kclass + j] /= s
                    lsum += log(s) - (abuf[al + i * kclass + y[perms[e, start + i]]] - mx)
                loss = lsum / m
                if prox:
                    s = 0.0
                    for t in range(nparams):
                        v = params[t] - ref[t]
                        s += v * v
                    loss += 0.5 * mu * s
                if not isfinite(loss):
                    bad_step = step
                    dead = True
                    break
                bsum += loss
                nb += 1

                for i in range(m):
                    dbuf[al + i * kclass + y[perms[e, start + i]]] -= 1.0
                for i in range(m):
                    for j in range(kclass):
                        dbuf[al + i * kclass + j] /= m

                for l in range(num_layers - 1, -1, -1):
                    din = dims[l]
                    dout = dims[l + 1]
                    wl = woff[l]
                    bl = boff[l]
                    al = aoff[l]
                    anext = aoff[l + 1]
                    for t in range(din * dout):
                        gw[t] = 0.0
                    for i in range(m):
                        for k in range(din):
                            a = abuf[al + i * din + k]
                            if a != 0.0:
                                for j in range(dout):
                                    gw[k * dout + j] += a * dbuf[anext + i * dout + j]
                    if l > 0:
                        # downstream delta uses the pre-update weights
                        for i in range(m):
                            for k in range(din):
                                if abuf[al + i * din + k] > 0.0:
                                    s = 0.0
                                    for j in range(dout):
                                        s += dbuf[anext + i * dout + j] * params[wl + k * dout + j]
                                    dbuf[al + i * din + k] = s
                                else:
                                    dbuf[al + i * din + k] = 0.0
                    for k in range(din):
                        for j in range(dout):
                            g = gw[k * dout + j]
                            if prox:
                                g += mu * (params[wl + k * dout + j] - ref[wl + k * dout + j])
                            params[wl + k * dout + j] -= lr * g
                    for j in range(dout):
                        g = 0.0
                        for i in range(m):
                            g += dbuf[anext + i * dout + j]
                        if prox:
                            g += mu * (params[bl + j] - ref[bl + j])
                        params[bl + j] -= lr * g

                step += 1
                start += batch_size
            if not dead:
                losses[e] = bsum / nb

    return losses_np, bad_step
