"""Scalar-output feed-forward networks with optional skip connections.

Hidden layers are numbered 1..H; the scalar output layer is layer 0 by
convention (its weight row maps the last hidden layer to the output).  A skip
(s, t) adds the post-activation output of hidden layer s to the
post-activation output of hidden layer t, so both layers must share a width.

All math is plain float64 numpy.  Gradients are exact (reverse accumulation),
not approximated, and are checked against central finite differences in the
test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .errors import ConfigurationError

RELU = "relu"
ELU = "elu"
IDENTITY = "identity"
_KINDS = (RELU, ELU, IDENTITY)


@dataclass(frozen=True)
class Activation:
    """Elementwise nonlinearity; ``alpha`` only matters for ELU."""

    kind: str
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown activation kind {self.kind!r}")
        if self.kind == ELU and not self.alpha > 0:
            raise ConfigurationError("ELU requires alpha > 0")


def activation_eval(act: Activation, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if act.kind == RELU:
        return np.maximum(z, 0.0)
    if act.kind == ELU:
        return np.where(z > 0, z, act.alpha * np.expm1(np.minimum(z, 0.0)))
    return z


def activation_grad(act: Activation, z: np.ndarray) -> np.ndarray:
    """Derivative w.r.t. the pre-activation; the ReLU kink at 0 maps to 0."""
    z = np.asarray(z, dtype=np.float64)
    if act.kind == RELU:
        return np.where(z > 0, 1.0, 0.0)
    if act.kind == ELU:
        return np.where(z > 0, 1.0, act.alpha * np.exp(np.minimum(z, 0.0)))
    return np.ones_like(z)


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; immutable and hashable by content."""

    input_dim: int
    hidden_widths: tuple[int, ...]
    hidden_activations: tuple[Activation, ...]
    skips: tuple[tuple[int, int], ...] = ()
    max_width: int = 50

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        object.__setattr__(self, "hidden_activations", tuple(self.hidden_activations))
        object.__setattr__(self, "skips", tuple((int(s), int(t)) for s, t in self.skips))
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if len(self.hidden_widths) < 1:
            raise ConfigurationError("at least one hidden layer is required")
        for w in self.hidden_widths:
            if not 1 <= w <= self.max_width:
                raise ConfigurationError(
                    f"hidden width {w} outside [1, {self.max_width}]"
                )
        if len(self.hidden_activations) != len(self.hidden_widths):
            raise ConfigurationError(
                "hidden_activations must have one entry per hidden layer"
            )
        seen = set()
        for s, t in self.skips:
            if not (1 <= s < t <= self.n_hidden):
                raise ConfigurationError(
                    f"skip ({s}, {t}) must satisfy 1 <= source < target <= {self.n_hidden}"
                )
            if self.hidden_widths[s - 1] != self.hidden_widths[t - 1]:
                raise ConfigurationError(
                    f"skip ({s}, {t}) joins layers of unequal width"
                )
            if (s, t) in seen:
                raise ConfigurationError(f"duplicate skip ({s}, {t})")
            seen.add((s, t))

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_widths)

    def layer_dims(self) -> list[tuple[int, int]]:
        """(rows, cols) of W_1..W_H followed by the output row W_0."""
        widths = (self.input_dim,) + self.hidden_widths
        dims = [(widths[i + 1], widths[i]) for i in range(self.n_hidden)]
        dims.append((1, self.hidden_widths[-1]))
        return dims

    def param_entries(self) -> list[tuple[str, tuple[int, ...]]]:
        """Flat layout: W_1..W_H, W_0, then b_1..b_H, b_0."""
        dims = self.layer_dims()
        entries: list[tuple[str, tuple[int, ...]]] = []
        for i, shape in enumerate(dims):
            name = f"W{i + 1}" if i < self.n_hidden else "W0"
            entries.append((name, shape))
        for i, shape in enumerate(dims):
            name = f"b{i + 1}" if i < self.n_hidden else "b0"
            entries.append((name, (shape[0],)))
        return entries

    def param_slices(self) -> dict[str, slice]:
        slices: dict[str, slice] = {}
        offset = 0
        for name, shape in self.param_entries():
            size = int(np.prod(shape))
            slices[name] = slice(offset, offset + size)
            offset += size
        return slices

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.param_entries())


@dataclass
class NetworkParams:
    """Weights W_1..W_H plus output row W_0; biases likewise, b_0 length 1."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def to_flat(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, spec: NetworkSpec, flat: np.ndarray, copy: bool = True) -> "NetworkParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ConfigurationError(
                f"flat vector has {flat.shape} entries, spec needs ({spec.n_params},)"
            )
        if copy:
            flat = flat.copy()
        weights: list[np.ndarray] = []
        biases: list[np.ndarray] = []
        slices = spec.param_slices()
        for name, shape in spec.param_entries():
            view = flat[slices[name]].reshape(shape)
            (weights if name.startswith("W") else biases).append(view)
        return cls(weights=weights, biases=biases)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def validate_params(spec: NetworkSpec, params: NetworkParams) -> None:
    dims = spec.layer_dims()
    if len(params.weights) != len(dims) or len(params.biases) != len(dims):
        raise ConfigurationError("params layer count does not match spec")
    for i, shape in enumerate(dims):
        if params.weights[i].shape != shape:
            raise ConfigurationError(
                f"weight {i} has shape {params.weights[i].shape}, expected {shape}"
            )
        if params.biases[i].shape != (shape[0],):
            raise ConfigurationError(
                f"bias {i} has shape {params.biases[i].shape}, expected ({shape[0]},)"
            )


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> NetworkParams:
    """Uniform(-sqrt(6/(fan_in+fan_out)), +...) weights, zero biases."""
    weights = []
    biases = []
    for rows, cols in spec.layer_dims():
        bound = np.sqrt(6.0 / (rows + cols))
        weights.append(rng.uniform(-bound, bound, size=(rows, cols)))
        biases.append(np.zeros(rows))
    return NetworkParams(weights=weights, biases=biases)


@dataclass
class ForwardTrace:
    """Per-layer intermediates needed for reverse accumulation."""

    x: np.ndarray
    pre_activations: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


def _skip_sources(spec: NetworkSpec, target: int) -> list[int]:
    return [s for s, t in spec.skips if t == target]


def forward(spec: NetworkSpec, params: NetworkParams, x: np.ndarray) -> tuple[float, ForwardTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.input_dim,):
        raise ConfigurationError(f"input has shape {x.shape}, expected ({spec.input_dim},)")
    trace = ForwardTrace(x=x)
    y = x
    try:
        for i in range(1, spec.n_hidden + 1):
            z = params.weights[i - 1] @ y + params.biases[i - 1]
            y = activation_eval(spec.hidden_activations[i - 1], z)
            for s in _skip_sources(spec, i):
                y = y + trace.outputs[s - 1]
            trace.pre_activations.append(z)
            trace.outputs.append(y)
        out = params.weights[-1] @ y + params.biases[-1]
    except ValueError as exc:
        raise ConfigurationError(f"parameter/spec shape mismatch: {exc}") from exc
    return float(out[0]), trace


def predict_batch(spec: NetworkSpec, params: NetworkParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ConfigurationError(f"batch has shape {X.shape}, expected (N, {spec.input_dim})")
    outputs: list[np.ndarray] = []
    Y = X
    try:
        for i in range(1, spec.n_hidden + 1):
            Z = Y @ params.weights[i - 1].T + params.biases[i - 1]
            Y = activation_eval(spec.hidden_activations[i - 1], Z)
            for s in _skip_sources(spec, i):
                Y = Y + outputs[s - 1]
            outputs.append(Y)
        out = Y @ params.weights[-1][0] + params.biases[-1][0]
    except ValueError as exc:
        raise ConfigurationError(f"parameter/spec shape mismatch: {exc}") from exc
    return out


def loss_mse(spec: NetworkSpec, params: NetworkParams, data: Dataset) -> float:
    pred = predict_batch(spec, params, data.inputs)
    diff = pred - data.outputs
    return float(np.mean(diff * diff))


def grad_sample(
    spec: NetworkSpec, params: NetworkParams, x: np.ndarray, y_true: float
) -> NetworkParams:
    """Exact gradient of the single-sample squared error (y_hat - y_true)^2."""
    return NetworkParams.from_flat(spec, grad_sample_flat(spec, params, x, y_true), copy=False)


def grad_sample_flat(
    spec: NetworkSpec, params: NetworkParams, x: np.ndarray, y_true: float
) -> np.ndarray:
    y_hat, trace = forward(spec, params, x)
    H = spec.n_hidden
    flat = np.zeros(spec.n_params)
    grads = NetworkParams.from_flat(spec, flat, copy=False)

    d_out = 2.0 * (y_hat - float(y_true))
    y_last = trace.outputs[H - 1]
    grads.weights[-1][0, :] = d_out * y_last
    grads.biases[-1][0] = d_out

    # acc[i] accumulates dJ/dy_i; targets are visited before their sources,
    # so skip contributions are complete by the time a layer is processed.
    acc = [np.zeros(w) for w in spec.hidden_widths]
    acc[H - 1] = d_out * params.weights[-1][0]
    for i in range(H, 0, -1):
        dz = acc[i - 1] * activation_grad(spec.hidden_activations[i - 1], trace.pre_activations[i - 1])
        y_prev = trace.x if i == 1 else trace.outputs[i - 2]
        grads.weights[i - 1][:, :] = np.outer(dz, y_prev)
        grads.biases[i - 1][:] = dz
        if i > 1:
            acc[i - 2] = acc[i - 2] + params.weights[i - 1].T @ dz
        for s in _skip_sources(spec, i):
            acc[s - 1] = acc[s - 1] + acc[i - 1]
    return flat


_FORMAT = "bifid-params-v1"


def params_to_bytes(spec: NetworkSpec, params: NetworkParams) -> bytes:
    """JSON shape header, newline, then little-endian float64 payload."""
    validate_params(spec, params)
    entries = [{"name": n, "shape": list(s)} for n, s in spec.param_entries()]
    header = {
        "format": _FORMAT,
        "input_dim": spec.input_dim,
        "hidden_widths": list(spec.hidden_widths),
        "entries": entries,
        "dtype": "<f8",
    }
    payload = np.ascontiguousarray(params.to_flat(), dtype="<f8").tobytes()
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + payload


def params_from_bytes(spec: NetworkSpec, blob: bytes) -> NetworkParams:
    newline = blob.index(b"\n")
    header = json.loads(blob[:newline].decode("utf-8"))
    if header.get("format") != _FORMAT:
        raise ConfigurationError(f"unknown params format {header.get('format')!r}")
    expected = [{"name": n, "shape": list(s)} for n, s in spec.param_entries()]
    if header.get("entries") != expected or header.get("input_dim") != spec.input_dim:
        raise ConfigurationError("serialized shapes do not match the network spec")
    flat = np.frombuffer(blob[newline + 1 :], dtype="<f8").astype(np.float64)
    return NetworkParams.from_flat(spec, flat)
