"""Minimal sequential neural-network engine on numpy.

Float32 parameters in one flat vector (:class:`ParamSet`) with a per-layer
offset table, so whole models can be averaged, checkpointed and diffed as
plain arrays.  Supported layers: Conv2D (NHWC, im2col), Dense, ReLU,
Sigmoid, 2x nearest-neighbour upsampling and Flatten.  Plain SGD only.

Weight initialisation is uniform in +-sqrt(6 / (fan_in + fan_out)) drawn
from a PCG32 stream (see :mod:`fednoniid.rng`), biases zero; the same seed
always reproduces the same parameter bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import PCG32


class Layer:
    """Base class; layers are stateless descriptors, parameters live outside."""

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def param_count(self) -> int:
        return 0

    def init_params(self, rng: PCG32) -> np.ndarray | None:
        return None

    def forward(self, x, params):
        y, _ = self.forward_cached(x, params)
        return y

    def forward_cached(self, x, params):
        raise NotImplementedError

    def backward(self, dy, cache, params):
        raise NotImplementedError


def _glorot(rng: PCG32, n: int, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * rng.uniforms(n) - 1.0) * limit


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("dense dimensions must be >= 1")
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __repr__(self):
        return f"Dense({self.in_dim}->{self.out_dim})"

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ValueError(f"Dense expects input shape ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def param_count(self):
        return self.in_dim * self.out_dim + self.out_dim

    def init_params(self, rng):
        w = _glorot(rng, self.in_dim * self.out_dim, self.in_dim, self.out_dim)
        return np.concatenate([w, np.zeros(self.out_dim)])

    def _views(self, params):
        w = params[: self.in_dim * self.out_dim].reshape(self.in_dim, self.out_dim)
        b = params[self.in_dim * self.out_dim :]
        return w, b

    def forward_cached(self, x, params):
        w, b = self._views(params)
        return x @ w + b, x

    def backward(self, dy, cache, params):
        x = cache
        w, _b = self._views(params)
        grads = np.empty(self.param_count(), dtype=dy.dtype)
        gw, gb = self._views(grads)
        np.matmul(x.T, dy, out=gw)
        gb[...] = dy.sum(axis=0)
        return dy @ w.T, grads


class Conv2D(Layer):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int = 0):
        if kernel < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        if in_ch < 1 or out_ch < 1:
            raise ValueError("channel counts must be >= 1")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def __repr__(self):
        return (f"Conv2D({self.in_ch}->{self.out_ch}, k{self.kernel}, "
                f"s{self.stride}, p{self.padding})")

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[2] != self.in_ch:
            raise ValueError(f"Conv2D expects (H, W, {self.in_ch}), got {in_shape}")
        h, w, _ = in_shape
        k, s, p = self.kernel, self.stride, self.padding
        if h + 2 * p < k or w + 2 * p < k:
            raise ValueError("kernel larger than padded input")
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1, self.out_ch)

    def param_count(self):
        return self.kernel * self.kernel * self.in_ch * self.out_ch + self.out_ch

    def init_params(self, rng):
        k2c = self.kernel * self.kernel * self.in_ch
        fan_out = self.kernel * self.kernel * self.out_ch
        w = _glorot(rng, k2c * self.out_ch, k2c, fan_out)
        return np.concatenate([w, np.zeros(self.out_ch)])

    def _views(self, params):
        k2c = self.kernel * self.kernel * self.in_ch
        w = params[: k2c * self.out_ch].reshape(k2c, self.out_ch)
        b = params[k2c * self.out_ch :]
        return w, b

    def _patches(self, xp, oh, ow):
        n, _, _, c = xp.shape
        k, s = self.kernel, self.stride
        out = np.empty((n, oh, ow, k, k, c), dtype=xp.dtype)
        for ki in range(k):
            for kj in range(k):
                out[:, :, :, ki, kj, :] = xp[:, ki : ki + s * oh : s, kj : kj + s * ow : s, :]
        return out

    def forward_cached(self, x, params):
        w, b = self._views(params)
        p = self.padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        oh, ow, _ = self.out_shape(x.shape[1:])
        patches = self._patches(xp, oh, ow)
        n = x.shape[0]
        y = patches.reshape(n * oh * ow, -1) @ w + b
        return y.reshape(n, oh, ow, self.out_ch), (xp.shape, patches)

    def backward(self, dy, cache, params):
        xp_shape, patches = cache
        w, _ = self._views(params)
        n, oh, ow, _ = dy.shape
        k, s, p = self.kernel, self.stride, self.padding
        patches = patches.reshape(n * oh * ow, -1)
        dym = dy.reshape(n * oh * ow, self.out_ch)
        grads = np.empty(self.param_count(), dtype=dy.dtype)
        gw, gb = self._views(grads)
        np.matmul(patches.T, dym, out=gw)
        gb[...] = dym.sum(axis=0)
        dpat = (dym @ w.T).reshape(n, oh, ow, k, k, self.in_ch)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dxp[:, ki : ki + s * oh : s, kj : kj + s * ow : s, :] += dpat[:, :, :, ki, kj, :]
        if p:
            h, w_ = xp_shape[1] - 2 * p, xp_shape[2] - 2 * p
            return dxp[:, p : p + h, p : p + w_, :], grads
        return dxp, grads


class ReLU(Layer):
    def __repr__(self):
        return "ReLU"

    def forward_cached(self, x, params):
        y = np.maximum(x, 0)
        return y, x

    def backward(self, dy, cache, params):
        return dy * (cache > 0), None


class Sigmoid(Layer):
    def __repr__(self):
        return "Sigmoid"

    def forward_cached(self, x, params):
        with np.errstate(over="ignore"):
            y = 1.0 / (1.0 + np.exp(-x))
        y = y.astype(x.dtype, copy=False)
        return y, y

    def backward(self, dy, cache, params):
        return dy * cache * (1.0 - cache), None


class Upsample2x(Layer):
    """Nearest-neighbour 2x upsampling."""

    def __repr__(self):
        return "Upsample2x"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValueError("Upsample2x expects (H, W, C) input")
        return (2 * in_shape[0], 2 * in_shape[1], in_shape[2])

    def forward_cached(self, x, params):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), x.shape

    def backward(self, dy, cache, params):
        n, h2, w2, c = dy.shape
        return dy.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4)), None


class Flatten(Layer):
    def __repr__(self):
        return "Flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward_cached(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, params):
        return dy.reshape(cache), None


@dataclass
class ParamSet:
    """Flat parameter vector plus per-layer boundary offsets."""

    data: np.ndarray
    bounds: tuple[int, ...]

    @property
    def total(self) -> int:
        return self.data.size

    def layer_view(self, i: int) -> np.ndarray:
        return self.data[self.bounds[i] : self.bounds[i + 1]]

    def copy(self) -> "ParamSet":
        return ParamSet(self.data.copy(), self.bounds)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.data.astype("<f4").tobytes()).hexdigest()


def _check_layout(a: ParamSet, b: ParamSet) -> None:
    if a.bounds != b.bounds or a.data.size != b.data.size:
        raise ValueError("parameter layouts do not match")


class Network:
    """Ordered layers with a shared flat parameter vector.

    Immutable during forward/backward; parameters change only through
    explicit assignment or :func:`sgd_step`.
    """

    def __init__(self, input_shape: tuple[int, ...], layers: list[Layer],
                 seed: int | None = None, params: np.ndarray | None = None,
                 dtype=np.float32):
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(layer.out_shape(self.shapes[-1]))
        counts = [layer.param_count() for layer in self.layers]
        bounds = tuple(np.concatenate([[0], np.cumsum(counts)]).astype(int).tolist())
        if params is not None:
            data = np.asarray(params, dtype=self.dtype)
            if data.size != bounds[-1]:
                raise ValueError(
                    f"params has {data.size} entries, network needs {bounds[-1]}"
                )
            data = data.copy()
        else:
            rng = PCG32(0 if seed is None else seed)
            data = np.zeros(bounds[-1], dtype=self.dtype)
            for i, layer in enumerate(self.layers):
                init = layer.init_params(rng)
                if init is not None:
                    data[bounds[i] : bounds[i + 1]] = init.astype(self.dtype)
        self.params = ParamSet(data, bounds)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    def param_count(self) -> int:
        return self.params.total

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(
                f"batch shape {x.shape[1:]} does not match input shape {self.input_shape}"
            )
        return x

    def forward(self, batch: np.ndarray) -> np.ndarray:
        x = self._check_batch(batch)
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, self.params.layer_view(i))
        return x

    def loss_and_grad(self, batch, targets, loss: str) -> tuple[float, ParamSet]:
        x = self._check_batch(batch)
        caches = []
        for i, layer in enumerate(self.layers):
            x, cache = layer.forward_cached(x, self.params.layer_view(i))
            caches.append(cache)
        loss_fn = LOSSES[loss]
        loss_value, dy = loss_fn(x, targets)
        gdata = np.zeros(self.params.total, dtype=self.dtype)
        grads = ParamSet(gdata, self.params.bounds)
        for i in range(len(self.layers) - 1, -1, -1):
            dy, gl = self.layers[i].backward(dy, caches[i], self.params.layer_view(i))
            if gl is not None:
                grads.layer_view(i)[...] = gl
        return float(loss_value), grads

    def set_params(self, data: np.ndarray) -> None:
        if data.size != self.params.total:
            raise ValueError("parameter size mismatch")
        self.params.data[...] = data

    def clone(self, dtype=None) -> "Network":
        return Network(
            self.input_shape,
            self.layers,
            params=self.params.data,
            dtype=dtype or self.dtype,
        )


def _mse(y, targets):
    diff = y - np.asarray(targets, dtype=y.dtype)
    loss = np.mean(diff.astype(np.float64) ** 2)
    return loss, (2.0 / diff.size) * diff


def _softmax_ce(logits, labels):
    labels = np.asarray(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    n = logits.shape[0]
    loss = -np.mean(log_probs[np.arange(n), labels].astype(np.float64))
    dy = exp / total
    dy[np.arange(n), labels] -= 1.0
    return loss, dy.astype(logits.dtype) / n


LOSSES = {"mse": _mse, "softmax_ce": _softmax_ce}


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def backward(net: Network, batch, targets, loss: str) -> tuple[float, ParamSet]:
    return net.loss_and_grad(batch, targets, loss)


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> None:
    """In-place p <- p - lr * g."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    _check_layout(params, grads)
    params.data -= params.data.dtype.type(lr) * grads.data


def param_count(net: Network) -> int:
    return net.param_count()


def gradient_check(net: Network, batch, targets, loss: str,
                   epsilon: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on a float64 clone of the network; float32 arithmetic is too coarse
    for central differences at this epsilon.
    """
    net64 = net.clone(dtype=np.float64)
    x = np.asarray(batch, dtype=np.float64)
    _, grads = net64.loss_and_grad(x, targets, loss)
    numeric = np.zeros_like(net64.params.data)
    for i in range(net64.params.total):
        orig = net64.params.data[i]
        net64.params.data[i] = orig + epsilon
        up, _ = net64.loss_and_grad(x, targets, loss)
        net64.params.data[i] = orig - epsilon
        down, _ = net64.loss_and_grad(x, targets, loss)
        net64.params.data[i] = orig
        numeric[i] = (up - down) / (2 * epsilon)
    denom = np.maximum(np.abs(grads.data) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(grads.data - numeric) / denom))


def export_params(net: Network, bin_path, json_path=None) -> None:
    """Checkpoint: raw little-endian float32 stream plus a JSON layout file."""
    bin_path = Path(bin_path)
    json_path = Path(json_path) if json_path else bin_path.with_suffix(".json")
    bin_path.write_bytes(net.params.data.astype("<f4").tobytes())
    doc = {
        "dtype": "<f4",
        "total": net.params.total,
        "bounds": list(net.params.bounds),
        "layers": [repr(layer) for layer in net.layers],
        "input_shape": list(net.input_shape),
    }
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def import_params(net: Network, bin_path, json_path=None) -> None:
    bin_path = Path(bin_path)
    json_path = Path(json_path) if json_path else bin_path.with_suffix(".json")
    doc = json.loads(json_path.read_text())
    if doc["total"] != net.params.total or tuple(doc["bounds"]) != net.params.bounds:
        raise ValueError("checkpoint layout does not match network")
    data = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
    if data.size != net.params.total:
        raise ValueError("checkpoint size does not match layout descriptor")
    net.set_params(data.astype(net.dtype))
