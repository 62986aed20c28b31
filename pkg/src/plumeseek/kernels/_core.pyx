# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Mirrors ``reference.py`` expression-for-expression (same association order,
no fused multiply-adds thanks to -ffp-contract=off) so both backends return
bit-identical fields. Keep the two files in lockstep.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

BACKEND_NAME = "compiled"


def diffuse_rb(cnp.ndarray[cnp.float64_t, ndim=2] q0, double a, int iterations):
    """Red-black Gauss-Seidel solve of (1 + 4a) q - a * nbsum(q) = q0."""
    cdef Py_ssize_t h = q0.shape[0]
    cdef Py_ssize_t w = q0.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] q = q0.copy()
    if a == 0.0 or iterations == 0:
        return q
    cdef double inv = 1.0 / (1.0 + 4.0 * a)
    cdef double[:, :] qv = q
    cdef double[:, :] q0v = q0
    cdef Py_ssize_t i, j, it
    cdef int parity
    cdef double up, dn, lf, rt
    for it in range(iterations):
        for parity in range(2):
            for j in range(h):
                for i in range(w):
                    if ((i + j) & 1) != parity:
                        continue
                    up = qv[j - 1, i] if j > 0 else qv[j, i]
                    dn = qv[j + 1, i] if j < h - 1 else qv[j, i]
                    lf = qv[j, i - 1] if i > 0 else qv[j, i]
                    rt = qv[j, i + 1] if i < w - 1 else qv[j, i]
                    qv[j, i] = (q0v[j, i] + a * (((up + dn) + lf) + rt)) * inv
    return q


def advect(cnp.ndarray[cnp.float64_t, ndim=2] q,
           cnp.ndarray[cnp.float64_t, ndim=2] u,
           cnp.ndarray[cnp.float64_t, ndim=2] v,
           double s):
    """Semi-Lagrangian gather: sample q at (i - s*u, j - s*v), clamped."""
    cdef Py_ssize_t h = q.shape[0]
    cdef Py_ssize_t w = q.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((h, w), dtype=np.float64)
    cdef double[:, :] qv = q
    cdef double[:, :] uv = u
    cdef double[:, :] vv = v
    cdef double[:, :] ov = out
    cdef double wm1 = w - 1.0
    cdef double hm1 = h - 1.0
    cdef double gx, gy, fx, fy, omfx, top, bot, fi0, fj0
    cdef Py_ssize_t i, j, i0, j0
    for j in range(h):
        for i in range(w):
            gx = <double>i - s * uv[j, i]
            gy = <double>j - s * vv[j, i]
            if gx < 0.0:
                gx = 0.0
            elif gx > wm1:
                gx = wm1
            if gy < 0.0:
                gy = 0.0
            elif gy > hm1:
                gy = hm1
            fi0 = floor(gx)
            if fi0 > w - 2.0:
                fi0 = w - 2.0
            fj0 = floor(gy)
            if fj0 > h - 2.0:
                fj0 = h - 2.0
            fx = gx - fi0
            fy = gy - fj0
            i0 = <Py_ssize_t>fi0
            j0 = <Py_ssize_t>fj0
            omfx = 1.0 - fx
            top = qv[j0, i0] * omfx + qv[j0, i0 + 1] * fx
            bot = qv[j0 + 1, i0] * omfx + qv[j0 + 1, i0 + 1] * fx
            ov[j, i] = top * (1.0 - fy) + bot * fy
    return out
