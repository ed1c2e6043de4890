# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the training hot kernels.

Matrix products stay on numpy's BLAS (identical to the fallback); the wins
here are the fused single-pass elementwise kernels: bias add, rectifier
masks, bias-gradient reduction, and the Adam moment update, each of which
costs several temporaries in the numpy fallback.
"""

import numpy as np

from libc.math cimport pow, sqrt

NAME = "cython"


def affine_forward(x, w, b):
    """x: (B, in), w: (out, in), b: (out,) -> (B, out) = x @ w.T + b."""
    cdef Py_ssize_t bsz = x.shape[0]
    cdef Py_ssize_t fout = w.shape[0]
    if x.shape[1] != w.shape[1] or b.shape[0] != fout:
        raise ValueError("affine_forward: shape mismatch")
    z = np.empty((bsz, fout), dtype=np.float64)
    np.matmul(x, w.T, out=z)
    cdef double[:, ::1] zv = z
    cdef double[::1] bv = b
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(bsz):
            for j in range(fout):
                zv[i, j] += bv[j]
    return z


def relu_forward(z):
    a = np.empty_like(z)
    cdef double[::1] zv = z.reshape(-1)
    cdef double[::1] av = a.reshape(-1)
    cdef Py_ssize_t i, n = zv.shape[0]
    with nogil:
        for i in range(n):
            # propagate NaN like IEEE maximum(z, 0)
            if zv[i] > 0.0 or zv[i] != zv[i]:
                av[i] = zv[i]
            else:
                av[i] = 0.0
    return a


def relu_backward(grad_a, z):
    grad_z = np.empty_like(z)
    cdef double[::1] gav = grad_a.reshape(-1)
    cdef double[::1] zv = z.reshape(-1)
    cdef double[::1] gzv = grad_z.reshape(-1)
    cdef Py_ssize_t i, n = zv.shape[0]
    if gav.shape[0] != n:
        raise ValueError("relu_backward: shape mismatch")
    with nogil:
        for i in range(n):
            gzv[i] = gav[i] if zv[i] > 0.0 else 0.0
    return grad_z


def affine_backward(grad_z, x, w):
    """grad_z: (B, out), x: (B, in), w: (out, in) -> (grad_x, grad_w, grad_b)."""
    cdef Py_ssize_t bsz = grad_z.shape[0]
    cdef Py_ssize_t fout = grad_z.shape[1]
    cdef Py_ssize_t fin = x.shape[1]
    if x.shape[0] != bsz or w.shape[0] != fout or w.shape[1] != fin:
        raise ValueError("affine_backward: shape mismatch")
    grad_x = np.empty((bsz, fin), dtype=np.float64)
    grad_w = np.empty((fout, fin), dtype=np.float64)
    np.matmul(grad_z, w, out=grad_x)
    np.matmul(grad_z.T, x, out=grad_w)
    grad_b = np.zeros(fout, dtype=np.float64)
    cdef double[:, ::1] gzv = grad_z
    cdef double[::1] gbv = grad_b
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(bsz):
            for j in range(fout):
                gbv[j] += gzv[i, j]
    return grad_x, grad_w, grad_b


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, in place on param, m and v."""
    cdef double[::1] pv = param.reshape(-1)
    cdef double[::1] gv = grad.reshape(-1)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t i, n = pv.shape[0]
    if gv.shape[0] != n or mv.shape[0] != n or vv.shape[0] != n:
        raise ValueError("adam_update: shape mismatch")
    cdef double b1 = beta1, b2 = beta2, rate = lr, e = eps
    cdef long step = t
    cdef double c1 = 1.0 - pow(b1, step)
    cdef double c2 = 1.0 - pow(b2, step)
    cdef double mhat, vhat
    with nogil:
        for i in range(n):
            mv[i] = b1 * mv[i] + (1.0 - b1) * gv[i]
            vv[i] = b2 * vv[i] + (1.0 - b2) * gv[i] * gv[i]
            mhat = mv[i] / c1
            vhat = vv[i] / c2
            pv[i] -= rate * mhat / (sqrt(vhat) + e)
