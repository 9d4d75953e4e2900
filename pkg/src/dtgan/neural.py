"""Dense feed-forward networks with per-sample and input gradients.

Parameters live in one flat vector laid out layer by layer as
``W_1 (in x out, row-major), b_1, W_2, b_2, ...``. A forward pass returns a
trace (pre-activations ``z`` and activations ``h``, with ``h[0]`` the input)
that the backward helpers consume.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

LEAK = 0.2


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAK * z)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1 + np.tanh(0.5 * z))
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _dact(name, z, h):
    """First derivative, given pre-activation z and activation h."""
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "leaky_relu":
        return np.where(z > 0, 1, LEAK).astype(z.dtype)
    if name == "tanh":
        return 1 - h * h
    if name == "sigmoid":
        return h * (1 - h)
    return np.ones_like(z)


def _ddact(name, z, h):
    """Second derivative; zero almost everywhere for piecewise-linear units."""
    if name == "tanh":
        return -2 * h * (1 - h * h)
    if name == "sigmoid":
        return h * (1 - h) * (1 - 2 * h)
    return None


ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "identity")


@dataclass
class DenseNet:
    dims: tuple[int, ...]
    activations: tuple[str, ...]
    params: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.activations = tuple(self.activations)
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError("need at least an input and an output width")
        if len(self.activations) != len(self.dims) - 1:
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.dims, self.dims[1:]))

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def dtype(self):
        return self.params.dtype

    def offsets(self):
        """(w_start, b_start, b_end) per layer."""
        out, pos = [], 0
        for i, o in zip(self.dims, self.dims[1:]):
            out.append((pos, pos + i * o, pos + i * o + o))
            pos += i * o + o
        return out

    def layers(self):
        """Weight/bias views into ``params``."""
        return [(self.params[w:b].reshape(i, o), self.params[b:e])
                for (w, b, e), i, o in zip(self.offsets(), self.dims, self.dims[1:])]

    def copy(self) -> "DenseNet":
        return DenseNet(self.dims, self.activations, self.params.copy())


def init(dims, activations, seed=0, dtype=np.float32) -> DenseNet:
    """Glorot-uniform weights, zero biases."""
    dims = tuple(dims)
    if len(dims) < 2:
        raise ValueError("need at least an input and an output width")
    rng = np.random.default_rng(seed)
    chunks = []
    for i, o in zip(dims, dims[1:]):
        bound = np.sqrt(6.0 / (i + o))
        chunks.append(rng.uniform(-bound, bound, i * o))
        chunks.append(np.zeros(o))
    return DenseNet(dims, tuple(activations), np.concatenate(chunks).astype(dtype))


@dataclass
class ForwardTrace:
    z: list  # pre-activations, one per layer
    h: list  # h[0] is the input, h[l] the output of layer l

    @property
    def output(self):
        return self.h[-1]

    @property
    def features(self):
        """Activations feeding the last layer (penultimate features)."""
        return self.h[-2]


def forward(net: DenseNet, x):
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim != 2 or x.shape[1] != net.dims[0]:
        raise ValueError(f"batch must have shape (n, {net.dims[0]}), got {x.shape}")
    zs, hs = [], [x]
    h = x
    for (w, b), act in zip(net.layers(), net.activations):
        z = h @ w + b
        h = _act(act, z)
        zs.append(z)
        hs.append(h)
    return h, ForwardTrace(zs, hs)


def backward(net: DenseNet, trace: ForwardTrace, out_grad=None, hidden_grads=None,
             per_sample=False):
    """Reverse pass.

    ``out_grad`` is dloss_i/doutput_i per sample; ``hidden_grads`` maps a
    layer index ``l`` to extra gradient arriving at ``h[l]``. Returns the
    parameter gradient (summed over the batch, or one row per sample when
    ``per_sample``) and the gradient with respect to the input.
    """
    n = trace.h[0].shape[0]
    hidden_grads = hidden_grads or {}
    dtype = net.dtype
    hbar = np.zeros_like(trace.h[-1]) if out_grad is None else np.asarray(out_grad, dtype=dtype)
    if hbar.shape != trace.h[-1].shape:
        raise ValueError(f"output gradient shape {hbar.shape} != {trace.h[-1].shape}")
    grad = np.zeros((n, net.n_params) if per_sample else net.n_params, dtype=dtype)
    layers = net.layers()
    offsets = net.offsets()
    for l in range(net.n_layers, 0, -1):
        if l in hidden_grads:
            hbar = hbar + hidden_grads[l]
        w, _ = layers[l - 1]
        zbar = hbar * _dact(net.activations[l - 1], trace.z[l - 1], trace.h[l])
        hin = trace.h[l - 1]
        ws, bs, be = offsets[l - 1]
        if per_sample:
            grad[:, ws:bs] = np.einsum("ni,no->nio", hin, zbar).reshape(n, -1)
            grad[:, bs:be] = zbar
        else:
            grad[ws:bs] = (hin.T @ zbar).reshape(-1)
            grad[bs:be] = zbar.sum(axis=0)
        hbar = zbar @ w.T
    if 0 in hidden_grads:
        hbar = hbar + hidden_grads[0]
    return grad, hbar


def per_sample_grads(net: DenseNet, trace: ForwardTrace, output_grads):
    """Row i is the parameter gradient of sample i's loss contribution."""
    return backward(net, trace, output_grads, per_sample=True)[0]


def input_grads(net: DenseNet, x):
    """Gradient of a scalar-output network with respect to each input row."""
    if net.dims[-1] != 1:
        raise ValueError("input_grads needs a scalar-output network")
    out, trace = forward(net, x)
    return backward(net, trace, np.ones_like(out))[1]


def grad_norm_penalty(net: DenseNet, x, weight):
    """weight * mean_i (||d net(x_i)/d x_i|| - 1)^2 and its parameter gradient.

    Differentiates through the input-gradient computation (double backprop).
    Returns (penalty, gradient norms per row, parameter gradient).
    """
    if net.dims[-1] != 1:
        raise ValueError("gradient penalty needs a scalar-output network")
    _, trace = forward(net, x)
    n = trace.h[0].shape[0]
    L = net.n_layers
    layers = net.layers()
    acts = net.activations
    # input-gradient pass: u[l] = d out / d z_l, v[l] = d out / d h_l
    d = [_dact(acts[l - 1], trace.z[l - 1], trace.h[l]) for l in range(1, L + 1)]
    u = [None] * (L + 1)
    v = [None] * (L + 1)
    u[L] = d[L - 1]
    for l in range(L, 0, -1):
        v[l - 1] = u[l] @ layers[l - 1][0].T
        if l - 1 >= 1:
            u[l - 1] = v[l - 1] * d[l - 2]
    g = v[0]
    norms = np.sqrt((g * g).sum(axis=1))
    penalty = weight * float(np.mean((norms - 1) ** 2))

    grad = np.zeros(net.n_params, dtype=net.dtype)
    offsets = net.offsets()
    safe = np.where(norms > 0, norms, 1)
    vbar = (weight * 2 / n) * ((norms - 1) / safe)[:, None] * g
    vbar = np.where(norms[:, None] > 0, vbar, 0).astype(net.dtype)
    zbar_inj = [None] * (L + 1)
    for l in range(1, L + 1):
        w = layers[l - 1][0]
        ws, bs, _ = offsets[l - 1]
        grad[ws:bs] += (vbar.T @ u[l]).reshape(-1)
        ubar = vbar @ w
        dd = _ddact(acts[l - 1], trace.z[l - 1], trace.h[l])
        if dd is not None:
            vl = v[l] if l < L else 1.0
            zbar_inj[l] = ubar * vl * dd
        if l < L:
            vbar = ubar * d[l - 1]
    if any(z is not None for z in zbar_inj):
        hbar = np.zeros_like(trace.h[-1])
        for l in range(L, 0, -1):
            zbar = hbar * d[l - 1]
            if zbar_inj[l] is not None:
                zbar = zbar + zbar_inj[l]
            ws, bs, be = offsets[l - 1]
            grad[ws:bs] += (trace.h[l - 1].T @ zbar).reshape(-1)
            grad[bs:be] += zbar.sum(axis=0)
            hbar = zbar @ layers[l - 1][0].T
    return penalty, norms, grad


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(state: AdamState, net: DenseNet, gradient) -> DenseNet:
    """Return the updated network; ``state`` advances in place."""
    gradient = np.asarray(gradient, dtype=net.dtype)
    if gradient.shape != net.params.shape:
        raise ValueError("gradient length does not match the parameter vector")
    if state.m is None:
        state.m = np.zeros_like(net.params)
        state.v = np.zeros_like(net.params)
    if state.m.shape != net.params.shape:
        raise ValueError("optimizer state does not match the network")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * gradient
    state.v = state.beta2 * state.v + (1 - state.beta2) * gradient * gradient
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    params = net.params - (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(net.dtype)
    return DenseNet(net.dims, net.activations, params)


# -- serialization -------------------------------------------------------

MAGIC = b"DNET"
FORMAT_VERSION = 1


def dumps(net: DenseNet) -> bytes:
    """Versioned container: magic, version, header length, JSON header,
    then the parameters as little-endian float32 in layout order."""
    header = json.dumps({"dims": list(net.dims), "activations": list(net.activations),
                         "dtype": "<f4", "n_params": net.n_params},
                        sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(header)))
    buf.write(header)
    buf.write(net.params.astype("<f4").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> DenseNet:
    if data[:4] != MAGIC:
        raise ValueError("not a network container")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {version}")
    header = json.loads(data[12:12 + hlen])
    start = 12 + hlen
    params = np.frombuffer(data, dtype="<f4", count=header["n_params"], offset=start)
    return DenseNet(tuple(header["dims"]), tuple(header["activations"]),
                    params.astype(np.float32))


def container_size(data: bytes, offset: int = 0) -> int:
    hlen = struct.unpack("<I", data[offset + 8:offset + 12])[0]
    header = json.loads(data[offset + 12:offset + 12 + hlen])
    return 12 + hlen + 4 * header["n_params"]
