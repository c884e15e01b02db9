"""Dense autoencoder substrate: layers, forward/backward passes, Adam, gradient oracle.

Tensors are plain 2-D ``float64`` numpy arrays (rows = examples).  Weights
are stored ``(out, in)`` and biases ``(out,)``; a layer computes
``act(X @ W.T + b)``.

The training objective handled by :func:`backward` is the weighted sum of
squared residuals ``sum_r w_r * ||t_r - xhat_r||^2``; per-row targets and
weights are how the AE-SAD, standard and negative objectives are expressed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from aesad.rng import SplitMix64

RELU = "relu"
SIGMOID = "sigmoid"
IDENTITY = "identity"
ACTIVATIONS = (RELU, SIGMOID, IDENTITY)

# inference runs on fixed-shape blocks so that a row's output does not
# depend on which other rows share its batch (BLAS picks different kernels
# for different shapes)
INFERENCE_BLOCK = 64
_SIGMOID_LO = np.finfo(np.float64).tiny
_SIGMOID_HI = np.nextafter(1.0, 0.0)

MODEL_MAGIC = b"AESAD-MODEL"
MODEL_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    layers: list[DenseLayer]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ValueError(f"layer width mismatch: {prev.n_out} -> {nxt.n_in}")
        if self.layers[0].n_in != self.layers[-1].n_out:
            raise ValueError("autoencoder input and output widths differ")

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def latent_dim(self) -> int:
        return min(self.widths)

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise ValueError("parameter count mismatch")
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ValueError(f"parameter shape mismatch in layer {i}")
            layer.weights = w
            layer.bias = b

    def copy(self) -> "Network":
        layers = [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        return Network(layers, seed=self.seed, meta=dict(self.meta))


def default_widths(d: int) -> list[int]:
    """Two encoder layers and a mirrored decoder.

    Hidden width is ``max(64, ceil(d/2))``; the latent has 32 units, or
    ``max(2, ceil(d/2))`` when ``d < 32`` so that it still compresses.
    """
    if d < 1:
        raise ValueError(f"input dimension must be positive, got {d}")
    half = (d + 1) // 2
    hidden = max(64, half)
    latent = 32 if d >= 32 else max(2, half)
    return [d, hidden, latent, hidden, d]


def _check_widths(widths: Sequence[int]) -> None:
    if len(widths) < 3:
        raise ValueError("an autoencoder needs at least input, latent and output widths")
    if any(int(w) < 1 for w in widths):
        raise ValueError(f"zero-width layer in {list(widths)}")
    if list(widths) != list(widths)[::-1]:
        raise ValueError(f"decoder widths do not mirror the encoder: {list(widths)}")


def init_network(
    widths: Sequence[int],
    seed: int,
    activations: Sequence[str] | None = None,
) -> Network:
    """Glorot-uniform weights from a SplitMix64 stream, zero biases.

    Layer ``k`` draws ``out*in`` uniforms (row-major) from the stream
    ``SplitMix64(seed, "init", k)`` and maps ``u -> (2u - 1) * sqrt(6 / (in + out))``.
    Hidden layers default to ReLU; the output layer is always sigmoid.
    """
    _check_widths(widths)
    n_layers = len(widths) - 1
    if activations is None:
        activations = [RELU] * (n_layers - 1) + [SIGMOID]
    activations = list(activations)
    if len(activations) != n_layers:
        raise ValueError(f"need {n_layers} activations, got {len(activations)}")
    if activations[-1] != SIGMOID:
        raise ValueError("output activation must be sigmoid so reconstructions lie in [0,1]")
    layers = []
    for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        u = SplitMix64(seed, "init", k).uniform(n_out * n_in)
        w = ((2.0 * u - 1.0) * limit).reshape(n_out, n_in)
        layers.append(DenseLayer(w, np.zeros(n_out), activations[k]))
    return Network(layers, seed=int(seed))


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # beyond |z| ~ 37 the exact value rounds to 1.0 (or underflows); keep it strictly inside (0,1)
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI, out=out)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return np.maximum(z, 0.0)
    if kind == SIGMOID:
        return sigmoid(z)
    return z


def _as_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"batch shape {x.shape} does not match input dim {net.input_dim}")
    return x


def _forward_trace(net: Network, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Activations ``a_0 = x, ..., a_L`` and pre-activations ``z_1..z_L``."""
    acts = [x]
    pre = []
    for layer in net.layers:
        z = acts[-1] @ layer.weights.T + layer.bias
        pre.append(z)
        acts.append(_activate(z, layer.activation))
    return acts, pre


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Reconstruction of every row; output shape equals input shape."""
    x = _as_batch(net, batch)
    n = x.shape[0]
    out = np.empty_like(x)
    block = np.zeros((INFERENCE_BLOCK, x.shape[1]))
    for start in range(0, n, INFERENCE_BLOCK):
        stop = min(start + INFERENCE_BLOCK, n)
        block[: stop - start] = x[start:stop]
        block[stop - start :] = 0.0
        acts, _ = _forward_trace(net, block)
        out[start:stop] = acts[-1][: stop - start]
    return out


def weighted_loss(
    net: Network, batch: np.ndarray, targets: np.ndarray, row_weights: np.ndarray
) -> float:
    """``sum_r w_r * ||t_r - forward(x_r)||^2`` on the training code path."""
    x = _as_batch(net, batch)
    acts, _ = _forward_trace(net, x)
    resid = acts[-1] - targets
    return float(np.dot(row_weights, np.einsum("ij,ij->i", resid, resid)))


def value_and_grad(
    net: Network, batch: np.ndarray, targets: np.ndarray, row_weights: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Weighted squared-error loss and its gradient for every parameter.

    Gradients come back in :meth:`Network.parameters` order.
    """
    x = _as_batch(net, batch)
    targets = np.asarray(targets, dtype=np.float64)
    row_weights = np.asarray(row_weights, dtype=np.float64)
    if targets.shape != x.shape:
        raise ValueError(f"targets shape {targets.shape} != batch shape {x.shape}")
    if row_weights.shape != (x.shape[0],):
        raise ValueError(f"need {x.shape[0]} row weights, got shape {row_weights.shape}")

    acts, pre = _forward_trace(net, x)
    resid = acts[-1] - targets
    row_err = np.einsum("ij,ij->i", resid, resid)
    loss = float(np.dot(row_weights, row_err))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss in backward pass")

    grads: list[np.ndarray] = [None] * (2 * len(net.layers))  # type: ignore[list-item]
    delta = 2.0 * row_weights[:, None] * resid  # dL/da_L
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == SIGMOID:
            a = acts[k + 1]
            delta = delta * a * (1.0 - a)
        elif layer.activation == RELU:
            delta = delta * (pre[k] > 0.0)
        grads[2 * k] = delta.T @ acts[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ layer.weights
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    return loss, grads


def backward(
    net: Network, batch: np.ndarray, targets: np.ndarray, per_row_weights: np.ndarray
) -> list[np.ndarray]:
    return value_and_grad(net, batch, targets, per_row_weights)[1]


def numeric_gradient(
    net: Network,
    batch: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    h: float = 1e-5,
) -> list[np.ndarray]:
    """Central finite differences of :func:`weighted_loss`, one scalar at a time."""
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    probe = net.copy()
    grads = []
    for param in probe.parameters():
        g = np.zeros_like(param)
        flat = param.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = weighted_loss(probe, batch, targets, weights)
            flat[i] = orig - h
            down = weighted_loss(probe, batch, targets, weights)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Inputs are left untouched."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and moments must have equal length")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return new_params, new_state


def adam_update_(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """In-place twin of :func:`adam_step` (same arithmetic order, bit-identical results)."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and moments must have equal length")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        tmp = g * g
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        num = m / c1
        num *= state.lr
        num /= tmp
        p -= num


# -- serialization ---------------------------------------------------------
#
# Layout: MODEL_MAGIC, u32 version, u32 header length, UTF-8 JSON header,
# then every array in header order as little-endian float64, row-major.


def save_model(net: Network, path: str | Path, extra: dict[str, np.ndarray] | None = None) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    for k, layer in enumerate(net.layers):
        arrays.append((f"W{k}", layer.weights))
        arrays.append((f"b{k}", layer.bias))
    for name, arr in sorted((extra or {}).items()):
        arrays.append((f"extra:{name}", np.asarray(arr, dtype=np.float64)))
    header = {
        "version": MODEL_VERSION,
        "widths": net.widths,
        "activations": net.activations,
        "seed": net.seed,
        "meta": net.meta,
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str | Path) -> tuple[Network, dict[str, np.ndarray]]:
    """Inverse of :func:`save_model`; returns the network and any extra arrays."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: not a model file")
    off = len(MODEL_MAGIC)
    version, hlen = struct.unpack_from("<II", raw, off)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    off += 8
    header = json.loads(raw[off : off + hlen])
    off += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(raw):
            raise ValueError(f"{path}: truncated model file")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += nbytes
    n_layers = len(header["widths"]) - 1
    layers = [
        DenseLayer(arrays[f"W{k}"], arrays[f"b{k}"], header["activations"][k]) for k in range(n_layers)
    ]
    net = Network(layers, seed=header["seed"], meta=header.get("meta", {}))
    extra = {name.split(":", 1)[1]: arr for name, arr in arrays.items() if name.startswith("extra:")}
    return net, extra
