"""Dense network substrate: forward/backward, Adam, Polyak updates, checkpoints.

Everything here operates on plain float64 numpy arrays and returns new
objects; nothing mutates its inputs. Gradients are exact reverse-mode and
are checked against finite differences in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")

MAGIC = b"DRLR1"


@dataclass
class MlpParams:
    """Fully-connected network parameters. Hidden layers share one activation,
    the output layer is linear."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[k]: (layer_sizes[k+1], layer_sizes[k])
    biases: list[np.ndarray]
    activation: str = "relu"

    def validate(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        n = len(self.layer_sizes) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise ValueError("weights/biases count does not match layer_sizes")
        for k in range(n):
            out_d, in_d = self.layer_sizes[k + 1], self.layer_sizes[k]
            if self.weights[k].shape != (out_d, in_d):
                raise ValueError(f"layer {k}: weight shape {self.weights[k].shape}, "
                                 f"expected {(out_d, in_d)}")
            if self.biases[k].shape != (out_d,):
                raise ValueError(f"layer {k}: bias shape {self.biases[k].shape}")
            if not (np.all(np.isfinite(self.weights[k])) and np.all(np.isfinite(self.biases[k]))):
                raise ValueError(f"layer {k}: non-finite parameters")

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class Grad:
    """Per-parameter gradients, shape-congruent with an MlpParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def scaled(self, c: float) -> "Grad":
        return Grad([c * w for w in self.weights], [c * b for b in self.biases])

    def add(self, other: "Grad") -> "Grad":
        return Grad([a + b for a, b in zip(self.weights, other.weights)],
                    [a + b for a, b in zip(self.biases, other.biases)])


def zero_grad(params: MlpParams) -> Grad:
    return Grad([np.zeros_like(w) for w in params.weights],
                [np.zeros_like(b) for b in params.biases])


@dataclass
class AdamState:
    step_count: int
    first_moment: Grad
    second_moment: Grad
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(params: MlpParams, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    return AdamState(0, zero_grad(params), zero_grad(params), beta1, beta2, epsilon)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def forward(params: MlpParams, x: np.ndarray):
    """Evaluate the network. `x` may be a single vector (d,) or a batch (n, d).

    Returns (output, cache); the cache holds per-layer inputs and hidden
    pre-activations and is consumed by `backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.layer_sizes[0]:
        raise ValueError(f"input dim {h.shape[1]}, expected {params.layer_sizes[0]}")
    inputs = [h]
    pre_acts = []
    n_layers = len(params.weights)
    for k in range(n_layers):
        z = h @ params.weights[k].T + params.biases[k]
        if k < n_layers - 1:
            pre_acts.append(z)
            h = _act(z, params.activation)
            inputs.append(h)
        else:
            h = z
    out = h[0] if single else h
    return out, (inputs, pre_acts, single)


def backward(params: MlpParams, cache, output_grad: np.ndarray):
    """Reverse-mode gradient of sum(output * output_grad).

    Returns (Grad, input_grad) where input_grad matches the forward input's
    shape. Batched output_grads are accumulated (summed) into the Grad.
    """
    inputs, pre_acts, single = cache
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape[1] != params.layer_sizes[-1]:
        raise ValueError(f"output_grad dim {g.shape[1]}, expected {params.layer_sizes[-1]}")
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        gw[k] = g.T @ inputs[k]
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k]
        if k > 0:
            g = g * _act_grad(pre_acts[k - 1], params.activation)
    gin = g[0] if single else g
    return Grad(gw, gb), gin


def adam_step(params: MlpParams, grad: Grad, state: AdamState, lr: float = 3e-4):
    """One Adam update with bias correction. Returns (new params, new state)."""
    for k, (gw, gb) in enumerate(zip(grad.weights, grad.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise ValueError(f"non-finite gradient in layer {k}")
    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    new_w, new_b = [], []
    m_w, m_b, v_w, v_b = [], [], [], []
    for k in range(len(params.weights)):
        for p, g, m, v, out_p, out_m, out_v in (
            (params.weights[k], grad.weights[k], state.first_moment.weights[k],
             state.second_moment.weights[k], new_w, m_w, v_w),
            (params.biases[k], grad.biases[k], state.first_moment.biases[k],
             state.second_moment.biases[k], new_b, m_b, v_b),
        ):
            m2 = b1 * m + (1 - b1) * g
            v2 = b2 * v + (1 - b2) * g * g
            m_hat = m2 / (1 - b1 ** t)
            v_hat = v2 / (1 - b2 ** t)
            out_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
            out_m.append(m2)
            out_v.append(v2)
    new_params = MlpParams(params.layer_sizes, new_w, new_b, params.activation)
    new_state = AdamState(t, Grad(m_w, m_b), Grad(v_w, v_b), b1, b2, eps)
    return new_params, new_state


def polyak_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Soft target update: p' <- tau * p + (1 - tau) * p'."""
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    return MlpParams(
        target.layer_sizes,
        [tau * wo + (1 - tau) * wt for wo, wt in zip(online.weights, target.weights)],
        [tau * bo + (1 - tau) * bt for bo, bt in zip(online.biases, target.biases)],
        target.activation,
    )


def init_params(layer_sizes, activation: str = "relu", rng=None) -> MlpParams:
    """Fan-in scaled uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases."""
    if len(layer_sizes) < 2:
        raise ValueError("need at least 2 layer sizes")
    if isinstance(rng, (int, np.integer)) or rng is None:
        rng = np.random.default_rng(rng)
    weights, biases = [], []
    for k in range(len(layer_sizes) - 1):
        fan_in = layer_sizes[k]
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(layer_sizes[k + 1], fan_in)))
        biases.append(np.zeros(layer_sizes[k + 1]))
    p = MlpParams(tuple(int(s) for s in layer_sizes), weights, biases, activation)
    p.validate()
    return p


def save_params(params: MlpParams, path):
    """Binary checkpoint: magic "DRLR1", activation code, layer sizes, then
    row-major weights and biases per layer, float64 little-endian."""
    params.validate()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", ACTIVATIONS.index(params.activation)))
        f.write(struct.pack("<I", len(params.layer_sizes)))
        f.write(struct.pack(f"<{len(params.layer_sizes)}q", *params.layer_sizes))
        for w, b in zip(params.weights, params.biases):
            f.write(w.astype("<f8").tobytes())
            f.write(b.astype("<f8").tobytes())


def load_params(path) -> MlpParams:
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a parameter checkpoint")
    act = ACTIVATIONS[data[5]]
    (n_sizes,) = struct.unpack_from("<I", data, 6)
    sizes = struct.unpack_from(f"<{n_sizes}q", data, 10)
    off = 10 + 8 * n_sizes
    weights, biases = [], []
    for k in range(n_sizes - 1):
        out_d, in_d = sizes[k + 1], sizes[k]
        w = np.frombuffer(data, "<f8", out_d * in_d, off).reshape(out_d, in_d).copy()
        off += 8 * out_d * in_d
        b = np.frombuffer(data, "<f8", out_d, off).copy()
        off += 8 * out_d
        weights.append(w)
        biases.append(b)
    p = MlpParams(tuple(sizes), weights, biases, act)
    p.validate()
    return p


def flatten_params(params: MlpParams) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in zip(params.weights, params.biases) for a in pair])


def set_flat_params(params: MlpParams, flat: np.ndarray) -> MlpParams:
    """Rebuild params from a flat vector (same ordering as flatten_params)."""
    out_w, out_b = [], []
    off = 0
    for w, b in zip(params.weights, params.biases):
        out_w.append(flat[off:off + w.size].reshape(w.shape).copy())
        off += w.size
        out_b.append(flat[off:off + b.size].copy())
        off += b.size
    return MlpParams(params.layer_sizes, out_w, out_b, params.activation)


def flatten_grad(grad: Grad) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in zip(grad.weights, grad.biases) for a in pair])
