"""Small MLPs with hand-written reverse-mode gradients and an Adam optimizer.

Parameters of one network live in a single flat float64 vector; per-layer
weights and biases are views into it. That keeps the optimizer update a
handful of vector ops and makes checkpoints a straight dump of the buffer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("linear", "tanh", "relu")
CHECKPOINT_MAGIC = b"SPLCKPT\x00"
CHECKPOINT_VERSION = 1


class NetError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class MlpParams:
    """Weights ``W_i`` (fan_in x fan_out) and biases of a fully connected net."""

    def __init__(self, sizes: Sequence[int], activations: Sequence[str], flat=None):
        sizes = [int(s) for s in sizes]
        activations = list(activations)
        if len(sizes) < 2:
            raise NetError("need at least an input and an output size")
        if any(s <= 0 for s in sizes):
            raise NetError(f"zero-width layer in {sizes}")
        if len(activations) != len(sizes) - 1:
            raise NetError("one activation per layer required")
        for act in activations:
            if act not in ACTIVATIONS:
                raise NetError(f"unknown activation {act!r}")
        self.sizes = tuple(sizes)
        self.activations = tuple(activations)
        count = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        if flat is None:
            flat = np.zeros(count)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (count,):
            raise NetError(f"expected {count} parameters, got {flat.shape}")
        self.flat = flat
        self.weights, self.biases = self._views(flat)
        self._grad_views = None

    def _views(self, flat):
        weights, biases = [], []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            weights.append(flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            biases.append(flat[offset : offset + fan_out])
            offset += fan_out
        return weights, biases

    def unflatten(self, flat):
        """Per-layer (weight, bias) views of a gradient vector shaped like ``flat``."""
        cached = self._grad_views
        if cached is not None and cached[0] is flat:
            return cached[1]
        views = self._views(flat)
        self._grad_views = (flat, views)
        return views

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, self.activations, self.flat.copy())

    def __repr__(self):
        return f"MlpParams(sizes={self.sizes}, activations={self.activations})"


def init_params(sizes, activations, seed: int, scale: float = 1.0) -> MlpParams:
    """Uniform fan-in initialization in ``[-b, b]``, ``b = scale * sqrt(6 / fan_in)``."""
    params = MlpParams(sizes, activations)
    rng = np.random.default_rng(seed)
    for w in params.weights:
        bound = scale * np.sqrt(6.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


def _check_input(params: MlpParams, x) -> np.ndarray:
    if not (isinstance(x, np.ndarray) and x.dtype == np.float64):
        x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise NetError(f"expected input of width {params.input_dim}, got shape {x.shape}")
    return x


def forward(params: MlpParams, x, keep_cache: bool = True):
    """Run the net on a batch; returns ``(output, cache)``."""
    h = _check_input(params, x)
    cache = ForwardCache() if keep_cache else None
    for w, b, act in zip(params.weights, params.biases, params.activations):
        if cache is not None:
            cache.inputs.append(h)
        h = h @ w
        h += b
        if act == "tanh":
            np.tanh(h, out=h)
        elif act == "relu":
            np.maximum(h, 0.0, out=h)
        if cache is not None:
            cache.outputs.append(h)
    return h, cache


def forward_encoder(params: MlpParams, states, keep_cache: bool = True):
    return forward(params, states, keep_cache)


def forward_predictor(params: MlpParams, z, actions, keep_cache: bool = True):
    """Predict the next latent from ``z`` concatenated with one-hot ``actions``."""
    z = np.asarray(z, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if z.ndim != 2 or actions.ndim != 2 or z.shape[0] != actions.shape[0]:
        raise NetError(f"latent {z.shape} and action {actions.shape} batches disagree")
    if params.output_dim != z.shape[1]:
        raise NetError(f"predictor emits {params.output_dim} dims for latent width {z.shape[1]}")
    return forward(params, np.hstack([z, actions]), keep_cache)


def backward(params: MlpParams, cache: ForwardCache | None, upstream, out=None):
    """Gradients of ``sum(upstream * output)``.

    Returns ``(flat_gradient, input_gradient)``; ``flat_gradient`` is laid out
    like ``params.flat`` and is written into ``out`` when one is supplied.
    """
    if cache is None or not cache.inputs:
        raise StateError("backward needs the cache of a forward pass")
    grad = np.asarray(upstream, dtype=np.float64)
    if out is None:
        out = np.empty_like(params.flat)
    gw, gb = params.unflatten(out)
    for i in range(len(params.weights) - 1, -1, -1):
        act = params.activations[i]
        if act == "tanh":
            y = cache.outputs[i]
            grad = grad * (1.0 - y * y)
        elif act == "relu":
            grad = grad * (cache.outputs[i] > 0)
        np.matmul(cache.inputs[i].T, grad, out=gw[i])
        np.sum(grad, axis=0, out=gb[i])
        grad = grad @ params.weights[i].T
    return out, grad


@dataclass
class AdamState:
    """Moments plus a linear learning-rate decay from ``lr_init`` to ``lr_end``."""

    size: int
    lr_init: float = 3e-4
    lr_end: float = 5e-5
    horizon: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def learning_rate(self) -> float:
        frac = min(self.step / max(self.horizon, 1), 1.0)
        return self.lr_init + (self.lr_end - self.lr_init) * frac


def optimizer_step(state: AdamState, params: MlpParams, grads, lr: float | None = None) -> MlpParams:
    """One bias-corrected Adam update, applied to ``params.flat`` in place."""
    if lr is None:
        lr = state.learning_rate()
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise NetError("gradient, moment and parameter shapes must match")
    adam_update(state, params.flat, grads, lr)
    return params


def adam_update(state: AdamState, flat: np.ndarray, grads: np.ndarray, lr: float) -> None:
    """In-place bias-corrected Adam step on a flat parameter vector."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * (grads * grads)
    c2 = np.sqrt(1.0 - b2 ** state.step)
    denom = np.sqrt(state.v)
    denom += state.eps * c2
    flat -= (lr * c2 / (1.0 - b1 ** state.step)) * (state.m / denom)


def normalize_rows(h, upstream=None):
    """Unit-norm projection of latent rows; with ``upstream`` returns its VJP."""
    norm = np.linalg.norm(h, axis=1, keepdims=True)
    norm = np.maximum(norm, 1e-12)
    z = h / norm
    if upstream is None:
        return z
    return (upstream - z * np.sum(z * upstream, axis=1, keepdims=True)) / norm


_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def save_checkpoint(path, nets: dict[str, MlpParams]) -> None:
    """Header (magic, version, layer specs) followed by little-endian float64 data."""
    header = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(nets))]
    for name, p in nets.items():
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack("<I", len(p.activations)))
        header.append(struct.pack(f"<{len(p.sizes)}I", *p.sizes))
        header.append(bytes(_ACT_CODES[a] for a in p.activations))
    body = [p.flat.astype("<f8").tobytes() for p in nets.values()]
    Path(path).write_bytes(b"".join(header + body))


def load_checkpoint(path) -> dict[str, MlpParams]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise NetError(f"{path}: not a parameter checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    version, count = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise NetError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    specs = []
    for _ in range(count):
        (length,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + length].decode("utf-8")
        pos += length
        (layers,) = struct.unpack_from("<I", data, pos)
        pos += 4
        sizes = struct.unpack_from(f"<{layers + 1}I", data, pos)
        pos += 4 * (layers + 1)
        acts = [ACTIVATIONS[c] for c in data[pos : pos + layers]]
        pos += layers
        specs.append((name, sizes, acts))
    nets = {}
    for name, sizes, acts in specs:
        shell = MlpParams(sizes, acts)
        n = shell.flat.size
        flat = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        nets[name] = MlpParams(sizes, acts, flat)
    if pos != len(data):
        raise NetError(f"{path}: {len(data) - pos} trailing bytes")
    return nets
