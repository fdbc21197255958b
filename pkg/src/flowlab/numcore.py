"""Float64 numerical substrate: batched 2-D tensors, a small feed-forward
velocity model with hand-rolled reverse-mode gradients, Adam, and bit-exact
checkpoints.

Everything here is deterministic: identical inputs (and seeds) produce
bitwise-identical outputs, which is what makes gradient checks and
reproducibility contracts tight.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "as_tensor2",
    "as_vector",
    "check_finite",
    "sinusoidal_time_features",
    "VelocityModel",
    "forward",
    "forward_cached",
    "backward_params",
    "loss_gradients",
    "OptimizerState",
    "init_optimizer",
    "optimizer_step",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT_VERSION = 1


class ShapeError(ValueError):
    """An operand's shape violates the documented contract."""


class NonFiniteError(ArithmeticError):
    """NaN/Inf appeared where the finiteness contract forbids it."""


def as_tensor2(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a float64 matrix (batch x dim); reject other ranks."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (batch x dim), got shape {arr.shape}")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.count_nonzero(~np.isfinite(np.asarray(arr))))
        raise NonFiniteError(
            f"{context}: {bad} non-finite entries in array of shape {np.shape(arr)}"
        )


def sinusoidal_time_features(t: np.ndarray, n_features: int) -> np.ndarray:
    """(sin, cos) pairs of t at geometric frequencies pi * 2^j, j = 0..n/2-1."""
    t = as_vector(t, "t")
    n_pairs = n_features // 2
    freqs = np.pi * np.exp2(np.arange(n_pairs, dtype=np.float64))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


def _silu_grad(x: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass
class VelocityModel:
    """Feed-forward approximator of a time-conditioned velocity field.

    The input is the data vector concatenated with sinusoidal time features;
    hidden layers use SiLU, the output layer is affine and maps back to the
    data dimension.
    """

    data_dim: int
    hidden_dims: tuple[int, ...]
    n_time_features: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        self.validate()

    @property
    def input_dim(self) -> int:
        return self.data_dim + self.n_time_features

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.data_dim)

    def validate(self) -> None:
        if self.data_dim < 1:
            raise ShapeError(f"data_dim must be >= 1, got {self.data_dim}")
        if self.n_time_features < 2 or self.n_time_features % 2 != 0:
            raise ShapeError(
                f"n_time_features must be a positive even count, got {self.n_time_features}"
            )
        dims = self.layer_dims
        n_layers = len(dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError(
                f"expected {n_layers} weight/bias pairs, got "
                f"{len(self.weights)}/{len(self.biases)}"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (dims[i], dims[i + 1])
            if w.shape != want:
                raise ShapeError(f"layer {i} weight shape {w.shape} != {want}")
            if b.shape != (dims[i + 1],):
                raise ShapeError(f"layer {i} bias shape {b.shape} != ({dims[i + 1]},)")
            check_finite(w, f"layer {i} weights")
            check_finite(b, f"layer {i} biases")

    @classmethod
    def create(
        cls,
        data_dim: int,
        hidden_dims: tuple[int, ...] = (64, 64, 64),
        n_time_features: int = 8,
        rng: np.random.Generator | int = 0,
    ) -> "VelocityModel":
        """Seeded initialization: W ~ N(0, 1/fan_in), zero biases."""
        rng = np.random.default_rng(rng)
        dims = (data_dim + n_time_features, *hidden_dims, data_dim)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
            biases.append(np.zeros(fan_out))
        return cls(data_dim, tuple(hidden_dims), n_time_features, weights, biases)

    @classmethod
    def zeros(
        cls,
        data_dim: int,
        hidden_dims: tuple[int, ...] = (64, 64, 64),
        n_time_features: int = 8,
    ) -> "VelocityModel":
        dims = (data_dim + n_time_features, *hidden_dims, data_dim)
        weights = [np.zeros((i, o)) for i, o in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(o) for o in dims[1:]]
        return cls(data_dim, tuple(hidden_dims), n_time_features, weights, biases)

    def copy(self) -> "VelocityModel":
        return VelocityModel(
            self.data_dim,
            self.hidden_dims,
            self.n_time_features,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def parameters(self) -> list[np.ndarray]:
        """Live parameter arrays in a fixed order: [W0, b0, W1, b1, ...]."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def _check_forward_args(model: VelocityModel, z, t) -> tuple[np.ndarray, np.ndarray]:
    z = as_tensor2(z, "z")
    t = as_vector(t, "t")
    if z.shape[1] != model.data_dim:
        raise ShapeError(
            f"z has {z.shape[1]} columns but the model expects data_dim={model.data_dim}"
        )
    if t.shape[0] != z.shape[0]:
        raise ShapeError(f"t has length {t.shape[0]} but z has {z.shape[0]} rows")
    check_finite(z, "forward input z")
    check_finite(t, "forward input t")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValueError(f"t entries must lie in [0, 1], got range [{t.min()}, {t.max()}]")
    return z, t


def forward_cached(
    model: VelocityModel, z, t
) -> tuple[np.ndarray, tuple[list[np.ndarray], list[np.ndarray]]]:
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    z, t = _check_forward_args(model, z, t)
    h = np.concatenate([z, sinusoidal_time_features(t, model.n_time_features)], axis=1)
    last = len(model.weights) - 1
    inputs: list[np.ndarray] = []
    preacts: list[np.ndarray] = []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        a = h @ w + b
        if i < last:
            preacts.append(a)
            h = _silu(a)
        else:
            h = a
    check_finite(h, "forward output")
    return h, (inputs, preacts)


def forward(model: VelocityModel, z, t) -> np.ndarray:
    """Predicted velocity per sample for states z at times t in [0, 1]."""
    return forward_cached(model, z, t)[0]


def backward_params(
    model: VelocityModel,
    cache: tuple[list[np.ndarray], list[np.ndarray]],
    dout: np.ndarray,
) -> list[np.ndarray]:
    """Backprop dloss/doutput through the cached forward pass.

    Returns gradients in the same order as ``model.parameters()``.
    """
    inputs, preacts = cache
    n_layers = len(model.weights)
    grads: list[np.ndarray | None] = [None] * (2 * n_layers)
    da = as_tensor2(dout, "dout")
    for i in reversed(range(n_layers)):
        grads[2 * i] = inputs[i].T @ da
        grads[2 * i + 1] = da.sum(axis=0)
        if i > 0:
            dh = da @ model.weights[i].T
            da = dh * _silu_grad(preacts[i - 1])
    return grads  # type: ignore[return-value]


def loss_gradients(
    model: VelocityModel,
    z,
    t,
    loss_evaluator: Callable[[np.ndarray], tuple],
) -> tuple[float, list[np.ndarray]]:
    """Scalar loss and parameter-shaped gradients for a batch.

    ``loss_evaluator`` maps the model prediction to at least
    ``(loss, dloss_dpred)``; extra trailing values are ignored so loss
    term breakdowns can share the evaluator.
    """
    pred, cache = forward_cached(model, z, t)
    out = loss_evaluator(pred)
    loss, dpred = float(out[0]), out[1]
    if not np.isfinite(loss):
        raise NonFiniteError(
            f"loss is non-finite ({loss}) on batch of shape {pred.shape}"
        )
    check_finite(dpred, "loss gradient w.r.t. prediction")
    return loss, backward_params(model, cache, dpred)


@dataclass
class OptimizerState:
    """Adam accumulators; shapes mirror ``model.parameters()``."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]


def init_optimizer(
    model: VelocityModel,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    params = model.parameters()
    return OptimizerState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def optimizer_step(
    state: OptimizerState, model: VelocityModel, grads: list[np.ndarray]
) -> tuple[VelocityModel, OptimizerState]:
    """One bias-corrected Adam update, in place on model and state."""
    params = model.parameters()
    if len(grads) != len(params):
        raise ShapeError(f"got {len(grads)} gradients for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient {i} shape {g.shape} != parameter shape {p.shape}")
        check_finite(g, f"gradient {i}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        check_finite(p, "parameters after optimizer step")
    return model, state


def save_checkpoint(model: VelocityModel, path) -> None:
    """Write a versioned, bit-exact container (npz under the hood)."""
    arrays = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION, dtype=np.int64),
        "data_dim": np.array(model.data_dim, dtype=np.int64),
        "n_time_features": np.array(model.n_time_features, dtype=np.int64),
        "hidden_dims": np.array(model.hidden_dims, dtype=np.int64),
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> VelocityModel:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"checkpoint format version {version} not supported "
                f"(expected {CHECKPOINT_FORMAT_VERSION})"
            )
        hidden_dims = tuple(int(h) for h in data["hidden_dims"])
        n_layers = len(hidden_dims) + 1
        weights = [data[f"w{i}"].astype(np.float64, copy=True) for i in range(n_layers)]
        biases = [data[f"b{i}"].astype(np.float64, copy=True) for i in range(n_layers)]
        return VelocityModel(
            int(data["data_dim"]),
            hidden_dims,
            int(data["n_time_features"]),
            weights,
            biases,
        )
