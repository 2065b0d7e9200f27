"""Dense feed-forward networks with hand-written reverse-mode gradients.

Everything is float64 and deliberately small: batched matrices are plain
2-D numpy arrays, a network is a list of (weight, bias, activation)
layers, and the backward pass replays the forward trace. Analytic
gradients are cheap to verify against central finite differences via
:func:`gradient_check`, which the test suite does for every loss in the
repo.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingError

Array = np.ndarray

CHECKPOINT_MAGIC = b"SDRM"
CHECKPOINT_VERSION = 1


def _tanh(z: Array) -> Array:
    return np.tanh(z)


def _tanh_deriv(z: Array) -> Array:
    t = np.tanh(z)
    return 1.0 - t * t


def _identity(z: Array) -> Array:
    return z


def _identity_deriv(z: Array) -> Array:
    return np.ones_like(z)


def _softplus(z: Array) -> Array:
    # log(1 + e^z) computed stably for large |z|
    return np.logaddexp(0.0, z)


def _softplus_deriv(z: Array) -> Array:
    return 1.0 / (1.0 + np.exp(-z))


ACTIVATIONS = {
    "tanh": (_tanh, _tanh_deriv),
    "identity": (_identity, _identity_deriv),
    "softplus": (_softplus, _softplus_deriv),
}


@dataclass
class Layer:
    """One affine layer followed by an elementwise activation."""

    w: Array  # (fan_in, fan_out)
    b: Array  # (fan_out,)
    activation: str = "identity"

    def __post_init__(self) -> None:
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2:
            raise ConfigurationError(f"layer weight must be 2-D, got shape {self.w.shape}")
        if self.b.shape != (self.w.shape[1],):
            raise ConfigurationError(
                f"bias shape {self.b.shape} does not match fan-out {self.w.shape[1]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        return self.w.shape[0]

    @property
    def fan_out(self) -> int:
        return self.w.shape[1]


@dataclass
class MlpNet:
    """A chain of :class:`Layer` objects with matching inner dimensions."""

    layers: list[Layer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ConfigurationError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ConfigurationError(
                    f"layer dimensions do not chain: {prev.fan_out} -> {nxt.fan_in}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].fan_out

    def parameters(self) -> list[Array]:
        """Flat parameter list [w0, b0, w1, b1, ...]; arrays are shared, not copied."""
        out: list[Array] = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out

    def set_parameters(self, params: list[Array]) -> None:
        if len(params) != 2 * len(self.layers):
            raise ConfigurationError("parameter count mismatch")
        for i, layer in enumerate(self.layers):
            layer.w = np.asarray(params[2 * i], dtype=np.float64)
            layer.b = np.asarray(params[2 * i + 1], dtype=np.float64)

    def copy(self) -> "MlpNet":
        return MlpNet(
            [Layer(layer.w.copy(), layer.b.copy(), layer.activation) for layer in self.layers]
        )

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def glorot_uniform_init(sizes: list[int], activations: list[str], rng: np.random.Generator) -> MlpNet:
    """Build an MlpNet with weights uniform in [-a, a], a = sqrt(6/(fan_in+fan_out)).

    ``sizes`` lists the layer widths including input and output, so
    ``len(activations) == len(sizes) - 1``.
    """
    if len(activations) != len(sizes) - 1:
        raise ConfigurationError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpNet(layers)


@dataclass
class ForwardTrace:
    """Per-layer inputs and pre-activations retained for the backward pass."""

    inputs: list[Array] = field(default_factory=list)
    pre: list[Array] = field(default_factory=list)
    output: Array = field(default_factory=lambda: np.zeros((0, 0)))


def mlp_forward(net: MlpNet, x: Array) -> ForwardTrace:
    """Run the network on a batch (rows = samples) and keep the trace.

    Raises ConfigurationError on a width mismatch and TrainingError if the
    output stops being finite.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigurationError(f"input must be 2-D, got shape {x.shape}")
    if x.shape[1] != net.in_dim:
        raise ConfigurationError(
            f"input width {x.shape[1]} does not match first-layer fan-in {net.in_dim}"
        )
    trace = ForwardTrace()
    a = x
    for layer in net.layers:
        z = a @ layer.w + layer.b
        trace.inputs.append(a)
        trace.pre.append(z)
        a = ACTIVATIONS[layer.activation][0](z)
    if not np.all(np.isfinite(a)):
        raise TrainingError("forward pass produced non-finite activations")
    trace.output = a
    return trace


def mlp_backward(net: MlpNet, trace: ForwardTrace, output_grad: Array) -> tuple[list[Array], Array]:
    """Backpropagate ``output_grad`` (dLoss/dOutput) through the trace.

    Returns (parameter gradients aligned with ``net.parameters()``,
    gradient with respect to the network input).
    """
    if trace is None or not trace.inputs:
        raise ValueError("mlp_backward requires the trace from mlp_forward")
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != trace.output.shape:
        raise ConfigurationError(
            f"output_grad shape {output_grad.shape} does not match output {trace.output.shape}"
        )
    grads: list[Array] = [np.empty(0)] * (2 * len(net.layers))
    da = output_grad
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        dz = da * ACTIVATIONS[layer.activation][1](trace.pre[i])
        grads[2 * i] = trace.inputs[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        da = dz @ layer.w.T
    return grads, da


@dataclass
class AdamState:
    """First/second moment accumulators mirroring a flat parameter list."""

    m: list[Array]
    v: list[Array]
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: list[Array], lr: float, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: list[Array], grads: list[Array], state: AdamState) -> None:
    """One in-place Adam update with bias-corrected moments."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params/grads/state lengths do not match")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ConfigurationError(f"gradient {i} shape {g.shape} != param {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {i}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def gradient_check(loss_fn, params: list[Array], epsilon: float = 1e-5,
                   max_coords: int | None = None, rng: np.random.Generator | None = None,
                   floor: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic (freeze any
    noise draws before calling). Coordinates are perturbed in place and
    restored; when ``max_coords`` is given, a random subset per parameter
    is checked instead of every coordinate.
    """
    _, grads = loss_fn(params)
    worst = 0.0
    for p, g in zip(params, grads):
        n = p.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        for idx in coords:
            orig = p.flat[idx]
            p.flat[idx] = orig + epsilon
            lo_plus, _ = loss_fn(params)
            p.flat[idx] = orig - epsilon
            lo_minus, _ = loss_fn(params)
            p.flat[idx] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * epsilon)
            analytic = g.flat[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def save_checkpoint(path, arrays: list[Array], header: dict | None = None) -> None:
    """Write arrays to the binary container.

    Layout: magic "SDRM", version u32, header length u32 + UTF-8 JSON
    header, array count u32, then per array rows u32, cols u32 and the
    row-major little-endian f64 payload. 1-D arrays are stored as a
    single row.
    """
    head = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            a2 = np.atleast_2d(np.asarray(arr, dtype=np.float64))
            fh.write(struct.pack("<II", a2.shape[0], a2.shape[1]))
            fh.write(a2.astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path) -> tuple[list[Array], dict]:
    """Read back (arrays, header) written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigurationError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8")) if hlen else {}
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = []
        for _ in range(count):
            rows, cols = struct.unpack("<II", fh.read(8))
            payload = fh.read(rows * cols * 8)
            arrays.append(np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy())
    return arrays, header


def net_to_arrays(net: MlpNet) -> list[Array]:
    return [np.atleast_2d(p) for p in net.parameters()]


def net_from_arrays(arrays: list[Array], activations: list[str]) -> MlpNet:
    if len(arrays) != 2 * len(activations):
        raise ConfigurationError("array count does not match activation list")
    layers = []
    for i, act in enumerate(activations):
        w = arrays[2 * i]
        b = arrays[2 * i + 1].ravel()
        layers.append(Layer(w, b, act))
    return MlpNet(layers)
