"""Dense-network numerics: exact reverse-mode gradients and Adam.

Everything runs in float64. The network shape is fixed (a stack of dense
layers with rectifier activations and one coordinate re-injection point),
so backpropagation is written out explicitly instead of pulling in a
general autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volume import StructuralError


class NumericsError(RuntimeError):
    """Non-finite values or diverging optimization."""


class UsageError(RuntimeError):
    """API misuse, e.g. backward without a matching forward record."""


@dataclass
class DenseLayer:
    """One affine layer: weights (out, in) and biases (out,)."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise StructuralError("weights must be 2-D and biases 1-D")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise StructuralError(
                f"bias length {self.biases.shape[0]} != out-dim {self.weights.shape[0]}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise StructuralError("non-finite layer parameters")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def init_dense_layer(out_dim: int, in_dim: int, rng: np.random.Generator) -> DenseLayer:
    # uniform +-sqrt(6/(fan_in+fan_out)), zero biases
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return DenseLayer(weights, np.zeros(out_dim))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def dense_forward(layer: DenseLayer, x: np.ndarray, activation: str = "relu") -> np.ndarray:
    """Affine transform plus activation; accepts a vector or a (batch, in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise StructuralError(f"input length {x.shape[-1]} != layer in-dim {layer.in_dim}")
    pre = x @ layer.weights.T + layer.biases
    if activation == "relu":
        return relu(pre)
    if activation == "identity":
        return pre
    raise ValueError(f"unknown activation {activation!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax over the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class ForwardRecord:
    """Activation cache produced by forward(); consumed once by backward()."""

    layers: list
    skip_after: int
    coords: np.ndarray
    latent: np.ndarray
    inputs: list  # input actually fed to each layer
    logits: np.ndarray


@dataclass
class Gradients:
    """Gradients of a scalar loss w.r.t. every parameter, the latent and the coords."""

    layers: list  # [(dW, db), ...] matching the network's layers
    latent: np.ndarray
    coords: np.ndarray


def forward(layers: list, skip_after: int, coords: np.ndarray, latent: np.ndarray) -> ForwardRecord:
    """Run the conditioned MLP on a batch of coordinates.

    coords: (M, 3); latent: (d,) shared across the batch. Layer 1 consumes
    concat(coords, latent); the layer after ``skip_after`` consumes
    concat(hidden, coords). Hidden layers use the rectifier, the final
    layer is linear (logits).
    """
    coords = np.asarray(coords, dtype=np.float64)
    latent = np.asarray(latent, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise StructuralError(f"coords must be (M, 3), got {coords.shape}")
    m = coords.shape[0]
    x = np.concatenate([coords, np.broadcast_to(latent, (m, latent.shape[0]))], axis=1)
    inputs = []
    n_layers = len(layers)
    for li, layer in enumerate(layers):
        inputs.append(x)
        last = li == n_layers - 1
        x = dense_forward(layer, x, "identity" if last else "relu")
        if li + 1 == skip_after and not last:
            x = np.concatenate([x, coords], axis=1)
    return ForwardRecord(layers, skip_after, coords, latent, inputs, x)


def backward(layers: list, record: ForwardRecord, dlogits: np.ndarray,
             need_layer_grads: bool = True) -> Gradients:
    """Exact reverse-mode gradients for a forward() record.

    ``dlogits`` is the upstream gradient of the scalar loss w.r.t. the
    logits, shape (M, n_out). Returns gradients for every weight, bias,
    the latent vector and the input coordinates (layer-1 path plus the
    skip path). ``need_layer_grads=False`` skips the weight/bias gradient
    accumulation (latent-only optimization) and leaves those entries None.
    """
    if record.layers is not layers:
        raise UsageError("forward record does not match this network")
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != record.logits.shape:
        raise StructuralError(
            f"upstream gradient shape {dlogits.shape} != logits shape {record.logits.shape}"
        )
    n_layers = len(layers)
    layer_grads: list = [None] * n_layers
    dcoords = np.zeros_like(record.coords)
    grad = dlogits
    for li in range(n_layers - 1, -1, -1):
        layer = layers[li]
        x_in = record.inputs[li]
        if li < n_layers - 1:
            # undo the skip concatenation on the downstream layer's input
            nxt = record.inputs[li + 1]
            if li + 1 == record.skip_after:
                dcoords += grad[:, layer.out_dim:]
                grad = grad[:, : layer.out_dim]
                nxt = nxt[:, : layer.out_dim]
            # relu(pre) > 0 exactly where pre > 0, so the stored downstream
            # input doubles as the activation mask (no recomputation)
            grad = grad * (nxt > 0.0)
        if need_layer_grads:
            layer_grads[li] = (grad.T @ x_in, grad.sum(axis=0))
        grad = grad @ layer.weights
    dcoords += grad[:, :3]
    dlatent = grad[:, 3:].sum(axis=0)
    return Gradients(layer_grads, dlatent, dcoords)


@dataclass
class AdamState:
    """Adam moments for one parameter block."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    label: str = ""

    @classmethod
    def for_params(cls, params: np.ndarray, label: str = "", **kwargs) -> "AdamState":
        return cls(np.zeros_like(params, dtype=np.float64),
                   np.zeros_like(params, dtype=np.float64), label=label, **kwargs)


def adam_step(params: np.ndarray, state: AdamState, gradients: np.ndarray,
              learning_rate: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Pure: returns fresh params and state."""
    params = np.asarray(params, dtype=np.float64)
    gradients = np.asarray(gradients, dtype=np.float64)
    if params.shape != gradients.shape or params.shape != state.first_moment.shape:
        raise StructuralError(
            f"shape mismatch: params {params.shape}, grads {gradients.shape}, "
            f"moments {state.first_moment.shape}"
        )
    if not np.isfinite(gradients).all():
        raise NumericsError(f"non-finite gradient in parameter block '{state.label}'")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradients
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradients * gradients
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    updated = params - learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon, state.label)
    return updated, new_state


def finite_diff_check(func, point: np.ndarray, step: float = 1e-6) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    ``func(x)`` must return ``(value, gradient)`` and be deterministic at the
    probed point. Every coordinate of ``point`` is perturbed.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    point = np.asarray(point, dtype=np.float64)
    _, analytic = func(point)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != point.shape:
        raise StructuralError("gradient shape does not match point shape")
    worst = 0.0
    flat = point.ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = func(xp.reshape(point.shape))[0]
        fm = func(xm.reshape(point.shape))[0]
        central = (fp - fm) / (2.0 * step)
        a = analytic.ravel()[i]
        err = abs(a - central) / max(abs(a), abs(central), 1e-12)
        worst = max(worst, err)
    return worst
