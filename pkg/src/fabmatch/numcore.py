"""Differentiable numeric core: feed-forward encoders with exact backprop,
the Adam optimizer, and a finite-difference gradient oracle.

Encoders are plain stacks of affine layers with a rectifier on every hidden
layer and an identity output layer. All arithmetic is float64; the only
nonlinearity is the rectifier, so gradients are exact wherever the
pre-activations are nonzero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class EncoderSpec:
    """Layer widths [input_dim, hidden..., embedding_dim]."""

    layer_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValueError(f"encoder spec needs at least [in, out], got {dims}")
        if any(d < 1 for d in dims):
            raise ValueError(f"encoder spec dims must all be >= 1, got {dims}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


class Encoder:
    """Weights and biases for one branch network.

    weights[i] has shape (out_i, in_i); biases[i] has shape (out_i,).
    """

    def __init__(self, spec: EncoderSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != spec.n_layers or len(biases) != spec.n_layers:
            raise ValueError("layer count does not match spec")
        for i, (w, b) in enumerate(zip(weights, biases)):
            expect = (spec.layer_dims[i + 1], spec.layer_dims[i])
            if w.shape != expect:
                raise ValueError(f"layer {i}: weight shape {w.shape} != {expect}")
            if b.shape != (expect[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} != ({expect[0]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameter")
        self.spec = spec
        self.weights = weights
        self.biases = biases

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    @property
    def output_dim(self) -> int:
        return self.spec.output_dim

    def parameter_arrays(self) -> list[np.ndarray]:
        """Weights then biases, layer by layer; the canonical flattening order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_parameter_arrays(self, arrays: list[np.ndarray]) -> None:
        """Inverse of parameter_arrays; arrays must alternate weight, bias."""
        if len(arrays) != 2 * self.spec.n_layers:
            raise ValueError("wrong parameter array count")
        for i in range(self.spec.n_layers):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError(f"layer {i}: parameter shape mismatch")
            self.weights[i] = w
            self.biases[i] = b

    def copy(self) -> "Encoder":
        return Encoder(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class ActivationCache:
    """Per-layer inputs and pre-activations saved by a forward pass."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    spec: EncoderSpec


@dataclass
class EncoderGrads:
    """Loss gradients for one encoder, plus the gradient at its input."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_input: np.ndarray | None = None

    def scale(self, factor: float) -> "EncoderGrads":
        return EncoderGrads(
            [g * factor for g in self.d_weights],
            [g * factor for g in self.d_biases],
            None if self.d_input is None else self.d_input * factor,
        )

    def add_(self, other: "EncoderGrads") -> None:
        for a, b in zip(self.d_weights, other.d_weights):
            a += b
        for a, b in zip(self.d_biases, other.d_biases):
            a += b

    def parameter_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.d_weights, self.d_biases):
            out.append(w)
            out.append(b)
        return out


def encoder_init(spec: EncoderSpec, seed: int) -> Encoder:
    """Gaussian weights with std sqrt(2/fan_in) per layer, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(spec.n_layers):
        fan_in = spec.layer_dims[i]
        fan_out = spec.layer_dims[i + 1]
        std = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Encoder(spec, weights, biases)


def encoder_forward_batch(enc: Encoder, x: np.ndarray) -> tuple[np.ndarray, ActivationCache]:
    """Forward a (B, input_dim) batch; returns (B, output_dim) embeddings."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != enc.input_dim:
        raise ValueError(f"input shape {x.shape} incompatible with input_dim {enc.input_dim}")
    inputs, preacts = [], []
    a = x
    last = enc.spec.n_layers - 1
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        inputs.append(a)
        z = kernels.affine_forward(a, w, b)
        preacts.append(z)
        a = z if i == last else kernels.relu_forward(z)
    return a, ActivationCache(inputs, preacts, enc.spec)


def encoder_forward(enc: Encoder, x: np.ndarray) -> tuple[np.ndarray, ActivationCache]:
    """Forward a single input vector; returns the embedding vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a vector, got shape {x.shape}")
    emb, cache = encoder_forward_batch(enc, x[None, :])
    return emb[0], cache


def encoder_backward_batch(enc: Encoder, cache: ActivationCache, grad_out: np.ndarray) -> EncoderGrads:
    """Backprop a (B, output_dim) gradient; parameter grads are summed over the batch."""
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    if cache.spec is not enc.spec and cache.spec != enc.spec:
        raise ValueError("activation cache does not belong to this encoder")
    if grad_out.shape != cache.preacts[-1].shape:
        raise ValueError(
            f"grad shape {grad_out.shape} != forward output shape {cache.preacts[-1].shape}"
        )
    d_weights: list[np.ndarray | None] = [None] * enc.spec.n_layers
    d_biases: list[np.ndarray | None] = [None] * enc.spec.n_layers
    grad = grad_out
    for i in range(enc.spec.n_layers - 1, -1, -1):
        if i != enc.spec.n_layers - 1:
            grad = kernels.relu_backward(grad, cache.preacts[i])
        grad, d_weights[i], d_biases[i] = kernels.affine_backward(grad, cache.inputs[i], enc.weights[i])
    return EncoderGrads(d_weights, d_biases, grad)  # type: ignore[arg-type]


def encoder_backward(enc: Encoder, cache: ActivationCache, grad_out: np.ndarray) -> EncoderGrads:
    """Backprop for a single-vector forward pass."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.ndim != 1:
        raise ValueError(f"expected a gradient vector, got shape {grad_out.shape}")
    grads = encoder_backward_batch(enc, cache, grad_out[None, :])
    grads.d_input = grads.d_input[0]
    return grads


def finite_diff_arrays(loss_fn, arrays: list[np.ndarray], eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of a scalar function over a list of parameter arrays.

    loss_fn is called with no arguments and must read the (temporarily
    perturbed) arrays in place. This is the test oracle: it never touches the
    analytic backward path.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = [np.zeros_like(a) for a in arrays]
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = float(loss_fn())
            flat[j] = orig - eps
            down = float(loss_fn())
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError(f"non-finite loss near parameter index {j}")
            gflat[j] = (up - down) / (2.0 * eps)
    return grads


def finite_diff_grad(loss_fn, enc: Encoder, eps: float = 1e-5) -> EncoderGrads:
    """Central-difference gradients of loss_fn(encoder) w.r.t. every parameter."""
    arrays = enc.parameter_arrays()
    flat = finite_diff_arrays(lambda: loss_fn(enc), arrays, eps)
    d_weights = flat[0::2]
    d_biases = flat[1::2]
    return EncoderGrads(d_weights, d_biases, None)


@dataclass
class AdamState:
    """Moment accumulators for one parameter list."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: list[np.ndarray], learning_rate: float = 0.001) -> AdamState:
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    return AdamState(
        [np.zeros_like(p) for p in params],
        [np.zeros_like(p) for p in params],
        learning_rate=learning_rate,
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam update. Returns fresh parameter arrays; the state's
    moments are updated in place and its step count advances by one."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params/grads/state length mismatch")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step_count += 1
    new_params = []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        p = p.copy()
        kernels.adam_update(
            p, np.ascontiguousarray(g, dtype=np.float64), m, v,
            state.step_count, state.learning_rate, state.beta1, state.beta2, state.epsilon,
        )
        new_params.append(p)
    return new_params, state
