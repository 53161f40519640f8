"""Dense tanh networks with hand-written reverse-mode gradients and Adam.

Everything is float64. Networks are plain containers of weight/bias arrays;
gradients are returned as flat vectors laid out exactly like ``get_flat``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ArchitectureError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass
class DenseNet:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "DenseNet":
        return DenseNet(list(self.layer_dims),
                        [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])


def _check_dims(layer_dims) -> list[int]:
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ArchitectureError(f"invalid layer dims {layer_dims!r}")
    return dims


def _orthogonal(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    # QR of a gaussian matrix, sign-corrected so the result is Haar distributed
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


def init_orthogonal(layer_dims, gains, seed) -> DenseNet:
    """Orthogonally initialised net with zero biases.

    ``gains`` is either one float for all layers or one per layer.
    ``seed`` may be an int, a SeedSequence or a Generator.
    """
    dims = _check_dims(layer_dims)
    n = len(dims) - 1
    if np.isscalar(gains):
        gains = [float(gains)] * n
    if len(gains) != n:
        raise ArchitectureError(f"expected {n} gains, got {len(gains)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights = [_orthogonal(dims[l + 1], dims[l], gains[l], rng) for l in range(n)]
    biases = [np.zeros(dims[l + 1]) for l in range(n)]
    return DenseNet(dims, weights, biases)


def forward(net: DenseNet, x, return_cache: bool = False):
    """Evaluate the net on a single input (1-D) or a batch (2-D, rows are samples).

    Hidden layers use tanh, the output layer is affine.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.layer_dims[0]:
        raise ValueError(f"input has {x.shape[-1]} features, net expects {net.layer_dims[0]}")
    acts = [x]
    h = x
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if l < last:
            h = np.tanh(h)
        acts.append(h)
    if return_cache:
        return h, acts
    return h


def backward(net: DenseNet, x, output_gradient, cache=None) -> np.ndarray:
    """Flat gradient of ``sum(output * output_gradient)`` w.r.t. all parameters.

    For batched input the contributions of all rows are summed.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(output_gradient, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(g))):
        raise NumericError("non-finite input to backward")
    if cache is None:
        _, cache = forward(net, x, return_cache=True)
    acts = cache
    if g.shape != acts[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} != output shape {acts[-1].shape}")
    batched = x.ndim == 2
    grads_w: list[np.ndarray] = [None] * net.n_layers
    grads_b: list[np.ndarray] = [None] * net.n_layers
    delta = g
    for l in range(net.n_layers - 1, -1, -1):
        a_in = acts[l]
        if batched:
            grads_w[l] = delta.T @ a_in
            grads_b[l] = delta.sum(axis=0)
        else:
            grads_w[l] = np.outer(delta, a_in)
            grads_b[l] = delta.copy()
        if l > 0:
            delta = (delta @ net.weights[l]) * (1.0 - acts[l] ** 2)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)])


def get_flat(net: DenseNet) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(net.weights, net.biases)])


def set_flat(net: DenseNet, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (net.param_count,):
        raise ValueError(f"expected {net.param_count} values, got {values.shape}")
    i = 0
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        net.weights[l] = values[i:i + w.size].reshape(w.shape).copy()
        i += w.size
        net.biases[l] = values[i:i + b.size].copy()
        i += b.size


@dataclass
class AdamState:
    size: int
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray = field(default=None)
    second_moment: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.size)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.size)

    def reset(self) -> None:
        self.step_count = 0
        self.first_moment = np.zeros(self.size)
        self.second_moment = np.zeros(self.size)


def adam_step(state: AdamState, params, gradient) -> np.ndarray:
    """One bias-corrected Adam step (descent). Mutates ``state``, returns new params."""
    params = np.asarray(params, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if params.shape != gradient.shape or params.shape != (state.size,):
        raise ValueError("params, gradient and optimizer state sizes differ")
    if not np.all(np.isfinite(gradient)):
        raise NumericError("non-finite gradient; Adam update refused")
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * gradient
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * gradient ** 2
    m_hat = state.first_moment / (1 - state.beta1 ** t)
    v_hat = state.second_moment / (1 - state.beta2 ** t)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


# -- checkpoint fragments: JSON header line, then little-endian f64 payload --

def write_fragment(fh, header: dict, arrays) -> None:
    payload = np.concatenate([np.asarray(a, dtype="<f8").ravel() for a in arrays]) if arrays else np.zeros(0, "<f8")
    fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    fh.write(payload.astype("<f8").tobytes())


def read_fragment(fh) -> tuple[dict, np.ndarray]:
    header = json.loads(fh.readline().decode())
    data = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    return header, data


def save_net(net: DenseNet, path) -> None:
    with open(path, "wb") as fh:
        write_fragment(fh, {"layer_dims": net.layer_dims, "param_count": net.param_count}, [get_flat(net)])


def load_net(path) -> DenseNet:
    with open(path, "rb") as fh:
        header, data = read_fragment(fh)
    if data.size != header["param_count"]:
        raise ValueError("fragment payload length does not match header")
    net = init_orthogonal(header["layer_dims"], 1.0, 0)
    set_flat(net, data)
    return net
