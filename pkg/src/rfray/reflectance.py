"""Learned reflection coefficients: an MLP from (angle, surface) to (amplitude, phase).

Eight hidden layers of width 256 with ReLU, plus a skip connection that
concatenates the raw input onto the fifth hidden activation. The two
output heads are squashed so the amplitude lies in [0, 1] (passive
surfaces cannot amplify) and the phase in [-pi, pi]. Forward and
backward passes are analytic numpy; there is no autograd anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

HIDDEN_WIDTH = 256
HIDDEN_DEPTH = 8
SKIP_AT = 5  # input re-enters before this hidden layer (0-based)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Coefficient:
    """Complex reflection coefficient amplitude * exp(j * phase)."""

    amplitude: float
    phase: float

    @property
    def delta(self) -> complex:
        return self.amplitude * complex(np.cos(self.phase), np.sin(self.phase))


class ReflectanceNet:
    """Parameter container; all math lives in the module functions.

    weights[i] has shape (fan_in, fan_out); the last entry is the
    two-unit output head. Mutated in place by the optimizer.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], surface_count: int,
                 seed: int, iteration: int = 0):
        self.weights = weights
        self.biases = biases
        self.surface_count = surface_count
        self.seed = seed
        self.iteration = iteration

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    @property
    def input_dim(self) -> int:
        return 1 + self.surface_count

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "ReflectanceNet":
        return ReflectanceNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.surface_count,
            self.seed,
            self.iteration,
        )

    def astype(self, dtype) -> "ReflectanceNet":
        return ReflectanceNet(
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.surface_count,
            self.seed,
            self.iteration,
        )


def _layer_dims(surface_count: int, width: int = HIDDEN_WIDTH) -> list[tuple[int, int]]:
    d = 1 + surface_count
    dims = [(d, width)]
    for i in range(1, HIDDEN_DEPTH):
        fan_in = width + d if i == SKIP_AT else width
        dims.append((fan_in, width))
    dims.append((width, 2))
    return dims


def net_init(surface_count: int, seed: int, dtype=np.float64) -> ReflectanceNet:
    """Fan-in-scaled uniform weights, zero biases; bit-reproducible per seed."""
    if surface_count < 1:
        raise ValueError("surface_count must be >= 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in _layer_dims(surface_count):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return ReflectanceNet(weights, biases, surface_count, seed)


def features(net: ReflectanceNet, angles: np.ndarray, surface_ids: np.ndarray) -> np.ndarray:
    """Network input rows: normalized angle followed by the surface one-hot."""
    angles = np.asarray(angles, dtype=net.dtype)
    surface_ids = np.asarray(surface_ids)
    if angles.ndim != 1 or angles.shape != surface_ids.shape:
        raise ValueError("angles and surface_ids must be equal-length 1-D arrays")
    if np.any((angles < 0.0) | (angles > np.pi / 2 + 1e-12)):
        raise ValueError("incident angles must lie in [0, pi/2]")
    if np.any((surface_ids < 0) | (surface_ids >= net.surface_count)):
        raise ValueError("surface id out of range")
    x = np.zeros((len(angles), net.input_dim), dtype=net.dtype)
    x[:, 0] = angles / (np.pi / 2)
    x[np.arange(len(angles)), 1 + surface_ids] = 1.0
    return x


class ForwardCache:
    __slots__ = ("x", "inputs", "masks", "amp", "tanh_phase", "n")

    def __init__(self, x, inputs, masks, amp, tanh_phase):
        self.x = x
        self.inputs = inputs
        self.masks = masks
        self.amp = amp
        self.tanh_phase = tanh_phase
        self.n = len(x)


def forward_batch(
    net: ReflectanceNet,
    angles: np.ndarray,
    surface_ids: np.ndarray,
    want_cache: bool = False,
):
    """Evaluate the net on a batch; returns (amp, phase[, cache])."""
    x = features(net, angles, surface_ids)
    a = x
    inputs: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    for i in range(HIDDEN_DEPTH):
        if i == SKIP_AT:
            a = np.concatenate([a, x], axis=1)
        z = a @ net.weights[i] + net.biases[i]
        mask = z > 0.0
        if want_cache:
            inputs.append(a)
            masks.append(mask)
        a = np.where(mask, z, 0.0)
    if want_cache:
        inputs.append(a)
    zo = a @ net.weights[-1] + net.biases[-1]
    amp = 1.0 / (1.0 + np.exp(-zo[:, 0]))
    t = np.tanh(zo[:, 1])
    phase = np.pi * t
    if want_cache:
        return amp, phase, ForwardCache(x, inputs, masks, amp, t)
    return amp, phase


def net_forward(net: ReflectanceNet, angle_rad: float, surface_id: int) -> Coefficient:
    """Single-input convenience wrapper around forward_batch."""
    amp, phase = forward_batch(net, np.array([angle_rad]), np.array([surface_id]))
    return Coefficient(amplitude=float(amp[0]), phase=float(phase[0]))


def net_backward(
    net: ReflectanceNet,
    cache: ForwardCache,
    d_amp: np.ndarray,
    d_phase: np.ndarray,
) -> list[np.ndarray]:
    """Parameter gradients, batch-accumulated, ordered like net.params()."""
    d_amp = np.asarray(d_amp, dtype=net.dtype)
    d_phase = np.asarray(d_phase, dtype=net.dtype)
    if d_amp.shape != (cache.n,) or d_phase.shape != (cache.n,):
        raise ValueError(
            f"upstream gradient shapes {d_amp.shape}/{d_phase.shape} do not match batch ({cache.n},)"
        )
    dzo = np.empty((cache.n, 2), dtype=net.dtype)
    dzo[:, 0] = d_amp * cache.amp * (1.0 - cache.amp)
    dzo[:, 1] = d_phase * np.pi * (1.0 - cache.tanh_phase**2)

    grads_w: list[np.ndarray] = [None] * (HIDDEN_DEPTH + 1)
    grads_b: list[np.ndarray] = [None] * (HIDDEN_DEPTH + 1)

    a_last = cache.inputs[HIDDEN_DEPTH]
    grads_w[-1] = a_last.T @ dzo
    grads_b[-1] = dzo.sum(axis=0)
    da = dzo @ net.weights[-1].T

    for i in range(HIDDEN_DEPTH - 1, -1, -1):
        dz = da * cache.masks[i]
        grads_w[i] = cache.inputs[i].T @ dz
        grads_b[i] = dz.sum(axis=0)
        da = dz @ net.weights[i].T
        if i == SKIP_AT:
            da = da[:, : da.shape[1] - net.input_dim]

    out = []
    for gw, gb in zip(grads_w, grads_b):
        out.append(gw)
        out.append(gb)
    return out


def zero_grads(net: ReflectanceNet) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in net.params()]


def flatten_params(params: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([p.ravel() for p in params])


def set_flat_params(net: ReflectanceNet, flat: np.ndarray) -> None:
    i = 0
    for p in net.params():
        p[...] = flat[i : i + p.size].reshape(p.shape)
        i += p.size


def save_checkpoint(net: ReflectanceNet, path) -> None:
    arrays = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    meta = {
        "version": CHECKPOINT_VERSION,
        "surface_count": net.surface_count,
        "seed": net.seed,
        "iteration": net.iteration,
        "dtype": net.dtype.name,
        "n_layers": len(net.weights),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, surface_count: Optional[int] = None) -> ReflectanceNet:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta['version']}")
        if surface_count is not None and meta["surface_count"] != surface_count:
            raise ValueError(
                f"{path}: checkpoint is for {meta['surface_count']} surfaces, scene has {surface_count}"
            )
        weights = [data[f"w{i}"] for i in range(meta["n_layers"])]
        biases = [data[f"b{i}"] for i in range(meta["n_layers"])]
    net = ReflectanceNet(weights, biases, meta["surface_count"], meta["seed"], meta["iteration"])
    expected = _layer_dims(meta["surface_count"])
    got = [w.shape for w in weights]
    if got != [tuple(d) for d in expected]:
        raise ValueError(f"{path}: layer shape table {got} does not match expected {expected}")
    return net
