"""Pure-numpy implementation of the training hot kernels.

Reference semantics for the compiled backend; every function here has a
signature-identical twin in ``cy_backend``.
"""
from __future__ import annotations

import numpy as np

NAME = "python"


def affine_forward(x, w, b):
    """x: (B, in), w: (out, in), b: (out,) -> (B, out) = x @ w.T + b."""
    if x.shape[1] != w.shape[1] or b.shape[0] != w.shape[0]:
        raise ValueError("affine_forward: shape mismatch")
    return x @ w.T + b


def relu_forward(z):
    return np.maximum(z, 0.0)


def relu_backward(grad_a, z):
    """Gradient mask: pass grad through exactly where the pre-activation is positive."""
    return np.where(z > 0.0, grad_a, 0.0)


def affine_backward(grad_z, x, w):
    """grad_z: (B, out), x: (B, in), w: (out, in) -> (grad_x, grad_w, grad_b).

    grad_w and grad_b are summed over the batch axis.
    """
    if grad_z.shape[0] != x.shape[0] or grad_z.shape[1] != w.shape[0] or x.shape[1] != w.shape[1]:
        raise ValueError("affine_backward: shape mismatch")
    grad_x = grad_z @ w
    grad_w = grad_z.T @ x
    grad_b = grad_z.sum(axis=0)
    return grad_x, grad_w, grad_b


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, in place on param, m and v.

    t is the 1-based step count after the increment.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
