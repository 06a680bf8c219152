"""Minimal float64 neural-network core with exact backpropagation.

Layers operate on batched channel-last arrays (n, h, w, c) or (n, features)
and cache whatever the backward pass needs. Gradients are accumulated in a
fixed order so a seeded run is bit-reproducible. Checkpoints round-trip
through a documented binary format (magic b"CSINET1\\0").

Set CHECK_FINITE = True to assert every layer output is finite (debug aid).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

CHECK_FINITE = False

CHECKPOINT_MAGIC = b"CSINET1\x00"

TASK_REGRESSION = "regression"
TASK_CLASSIFICATION = "classification"

__all__ = [
    "ShapeError",
    "conv_output_size",
    "Conv2d",
    "Dense",
    "LeakyRelu",
    "Softmax",
    "Dropout",
    "Flatten",
    "Network",
    "softmax",
    "mse_loss_2d",
    "cross_entropy_loss",
    "Adam",
    "loss_forward",
    "loss_backward",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "he_uniform",
    "TASK_REGRESSION",
    "TASK_CLASSIFICATION",
]


class ShapeError(ValueError):
    """Array shapes cannot chain through the requested operation."""


def conv_output_size(i: int, f: int, s: int, axis: str = "axis") -> int:
    """Valid-convolution output extent o = (i - f) / s + 1."""
    if not (i >= f >= 1):
        raise ShapeError(f"{axis}: need input {i} >= filter {f} >= 1")
    if s < 1:
        raise ShapeError(f"{axis}: stride must be >= 1, got {s}")
    if (i - f) % s != 0:
        raise ShapeError(
            f"{axis}: (input {i} - filter {f}) not divisible by stride {s}")
    return (i - f) // s + 1


def he_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    x = np.asarray(x, dtype=float)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Conv2d:
    """Strided valid cross-correlation (no kernel flip, no padding).

    Weights have shape (filter_h, filter_w, in_channels, filters); inputs are
    (n, h, w, c) channel-last.
    """

    def __init__(self, in_channels, filters, filter_h, filter_w, stride=(1, 1),
                 rng=None, weights=None, bias=None):
        self.in_channels = in_channels
        self.filters = filters
        self.filter_h = filter_h
        self.filter_w = filter_w
        self.stride = tuple(stride)
        shape = (filter_h, filter_w, in_channels, filters)
        if weights is not None:
            self.weights = np.asarray(weights, dtype=float).reshape(shape)
        else:
            if rng is None:
                raise ValueError("Conv2d needs an rng when weights are not given")
            self.weights = he_uniform(shape, filter_h * filter_w * in_channels, rng)
        self.bias = (np.zeros(filters) if bias is None
                     else np.asarray(bias, dtype=float).reshape(filters))
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def infer_shape(self, shape):
        if not (isinstance(shape, tuple) and len(shape) == 3):
            raise ShapeError(f"conv input must be 3-d (h, w, c), got {shape}")
        h, w, c = shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got {c}")
        oh = conv_output_size(h, self.filter_h, self.stride[0], "height")
        ow = conv_output_size(w, self.filter_w, self.stride[1], "width")
        return (oh, ow, self.filters)

    def _windows(self, x):
        win = np.lib.stride_tricks.sliding_window_view(
            x, (self.filter_h, self.filter_w), axis=(1, 2))
        return win[:, ::self.stride[0], ::self.stride[1]]  # (n, oh, ow, c, fh, fw)

    def forward(self, x, train=False, rng=None):
        self._x = x
        win = self._windows(x)
        out = np.tensordot(win, self.weights, axes=([4, 5, 3], [0, 1, 2]))
        return out + self.bias

    def backward(self, dout):
        x = self._x
        win = self._windows(x)
        grad_w = np.tensordot(win, dout, axes=([0, 1, 2], [0, 1, 2]))  # (c, fh, fw, f)
        self.grad_weights = np.transpose(grad_w, (1, 2, 0, 3))
        self.grad_bias = dout.sum(axis=(0, 1, 2))

        dwin = np.tensordot(dout, self.weights, axes=([3], [3]))  # (n, oh, ow, fh, fw, c)
        dx = np.zeros_like(x)
        sh, sw = self.stride
        oh, ow = dout.shape[1], dout.shape[2]
        for p in range(self.filter_h):
            for q in range(self.filter_w):
                dx[:, p:p + sh * (oh - 1) + 1:sh,
                   q:q + sw * (ow - 1) + 1:sw, :] += dwin[:, :, :, p, q, :]
        return dx

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.grad_weights, self.grad_bias]


class Dense:
    """Fully connected layer y = W x + b with W of shape (out, in)."""

    def __init__(self, in_features, out_features, rng=None, weights=None, bias=None):
        self.in_features = in_features
        self.out_features = out_features
        if weights is not None:
            self.weights = np.asarray(weights, dtype=float).reshape(out_features, in_features)
        else:
            if rng is None:
                raise ValueError("Dense needs an rng when weights are not given")
            self.weights = he_uniform((out_features, in_features), in_features, rng)
        self.bias = (np.zeros(out_features) if bias is None
                     else np.asarray(bias, dtype=float).reshape(out_features))
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def infer_shape(self, shape):
        if not isinstance(shape, int):
            raise ShapeError(f"dense layer needs a flat input, got {shape}; add Flatten")
        if shape != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} features, got {shape}")
        return self.out_features

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.weights.T + self.bias

    def backward(self, dout):
        self.grad_weights = dout.T @ self._x
        self.grad_bias = dout.sum(axis=0)
        return dout @ self.weights

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.grad_weights, self.grad_bias]


class LeakyRelu:
    """x for x >= 0 else gamma * x; subgradient at 0 is 1."""

    def __init__(self, gamma=0.01):
        if gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {gamma}")
        self.gamma = gamma
        self._keep = None

    def infer_shape(self, shape):
        return shape

    def forward(self, x, train=False, rng=None):
        self._keep = x >= 0
        return np.where(self._keep, x, self.gamma * x)

    def backward(self, dout):
        return np.where(self._keep, dout, self.gamma * dout)

    def params(self):
        return []

    def grads(self):
        return []


class Softmax:
    """Terminal probability head over the last axis."""

    def __init__(self):
        self._y = None

    def infer_shape(self, shape):
        if not isinstance(shape, int):
            raise ShapeError(f"softmax needs a flat input, got {shape}")
        return shape

    def forward(self, x, train=False, rng=None):
        self._y = softmax(x)
        return self._y

    def backward(self, dout):
        y = self._y
        return y * (dout - (dout * y).sum(axis=-1, keepdims=True))

    def params(self):
        return []

    def grads(self):
        return []


class Dropout:
    """Inverted dropout: zero with probability p in train mode, scale
    survivors by 1/(1-p); identity in eval mode."""

    def __init__(self, p=0.4):
        if not (0.0 <= p < 1.0):
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._mask = None

    def infer_shape(self, shape):
        return shape

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        self._mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask

    def params(self):
        return []

    def grads(self):
        return []


class Flatten:
    def __init__(self):
        self._shape = None

    def infer_shape(self, shape):
        if not (isinstance(shape, tuple) and len(shape) == 3):
            raise ShapeError(f"flatten expects a 3-d shape, got {shape}")
        return int(np.prod(shape))

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def params(self):
        return []

    def grads(self):
        return []


class Network:
    """Ordered layer stack for one task, shape-validated at construction."""

    def __init__(self, layers, task, input_shape=(9, 56, 1)):
        if task not in (TASK_REGRESSION, TASK_CLASSIFICATION):
            raise ValueError(f"unknown task {task!r}")
        self.layers = list(layers)
        self.task = task
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        self.layer_shapes = []
        for layer in self.layers:
            shape = layer.infer_shape(shape)
            self.layer_shapes.append(shape)
        self.output_shape = shape
        if task == TASK_CLASSIFICATION and not isinstance(self.layers[-1], Softmax):
            raise ShapeError("classification network must end in Softmax")
        if task == TASK_REGRESSION and isinstance(self.layers[-1], Softmax):
            raise ShapeError("regression network must not end in Softmax")

    @property
    def has_terminal_softmax(self) -> bool:
        return bool(self.layers) and isinstance(self.layers[-1], Softmax)

    def forward(self, x, train=False, rng=None):
        for index, layer in enumerate(self.layers):
            x = layer.forward(x, train=train, rng=rng)
            if CHECK_FINITE and not np.all(np.isfinite(x)):
                raise FloatingPointError(
                    f"non-finite output from layer {index} ({type(layer).__name__})")
        return x

    def forward_logits(self, x, train=False, rng=None):
        """Forward through every layer except a terminal Softmax."""
        body = self.layers[:-1] if self.has_terminal_softmax else self.layers
        for index, layer in enumerate(body):
            x = layer.forward(x, train=train, rng=rng)
            if CHECK_FINITE and not np.all(np.isfinite(x)):
                raise FloatingPointError(
                    f"non-finite output from layer {index} ({type(layer).__name__})")
        return x

    def backward(self, dout, from_logits=False):
        body = self.layers[:-1] if (from_logits and self.has_terminal_softmax) else self.layers
        for layer in reversed(body):
            dout = layer.backward(dout)
        return dout

    def parameters(self):
        return [p for layer in self.layers for p in layer.params()]

    def gradients(self):
        return [g for layer in self.layers for g in layer.grads()]

    def param_layers(self):
        return [layer for layer in self.layers if layer.params()]


def mse_loss_2d(pred: np.ndarray, truth: np.ndarray):
    """Mean over samples of the two squared coordinate errors summed.

    Returns (loss, gradient w.r.t. pred).
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ShapeError(f"need matching (n, 2) arrays, got {pred.shape} and {truth.shape}")
    n = pred.shape[0]
    diff = pred - truth
    loss = float((diff * diff).sum() / n)
    return loss, 2.0 * diff / n


def cross_entropy_loss(pred_prob: np.ndarray, truth_onehot: np.ndarray):
    """Mean negative log-probability of the true class, probabilities
    clamped below at 1e-12.

    The returned gradient is the fused softmax + cross-entropy form
    (pred - truth) / n, i.e. the gradient with respect to the logits that
    produced pred_prob.
    """
    p = np.asarray(pred_prob, dtype=float)
    t = np.asarray(truth_onehot, dtype=float)
    if p.shape != t.shape or p.ndim != 2:
        raise ShapeError(f"need matching (n, classes) arrays, got {p.shape} and {t.shape}")
    n = p.shape[0]
    true_p = np.clip((p * t).sum(axis=1), 1e-12, None)
    loss = float(-np.log(true_p).mean())
    return loss, (p - t) / n


class Adam:
    """Adaptive-moment optimizer, per-parameter m and v state.

    Follows the update m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
    theta <- theta - eta * m / (sqrt(v) + eps), with NO bias correction by
    default; pass bias_correction=True for the standard corrected variant.
    """

    def __init__(self, params, eta=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 bias_correction=False):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("beta1 and beta2 must be in [0, 1)")
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.bias_correction = bias_correction
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """One in-place update of every parameter from its gradient."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ShapeError(
                f"optimizer tracks {len(self.m)} tensors, got {len(params)} params"
                f" and {len(grads)} grads")
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.bias_correction:
                m_hat = m / (1.0 - self.beta1 ** self.t)
                v_hat = v / (1.0 - self.beta2 ** self.t)
                p -= self.eta * m_hat / (np.sqrt(v_hat) + self.epsilon)
            else:
                p -= self.eta * m / (np.sqrt(v) + self.epsilon)


def _targets_ok(net: Network, target: np.ndarray) -> None:
    width = 2 if net.task == TASK_REGRESSION else net.output_shape
    if target.ndim != 2 or target.shape[1] != width:
        raise ShapeError(f"{net.task} targets must be (n, {width}), got {target.shape}")


def loss_forward(net: Network, x, target, train=False, rng=None):
    """Task loss of the network on a batch; returns (loss, output)."""
    target = np.asarray(target, dtype=float)
    _targets_ok(net, target)
    if net.task == TASK_CLASSIFICATION:
        logits = net.forward_logits(x, train=train, rng=rng)
        probs = softmax(logits)
        loss, _ = cross_entropy_loss(probs, target)
        return loss, probs
    pred = net.forward(x, train=train, rng=rng)
    loss, _ = mse_loss_2d(pred, target)
    return loss, pred


def loss_backward(net: Network, x, target, train=True, rng=None):
    """Forward + backward pass; leaves gradients in the layers.

    Classification uses the fused softmax + cross-entropy gradient, started
    below the terminal Softmax. Returns (loss, output).
    """
    target = np.asarray(target, dtype=float)
    _targets_ok(net, target)
    if net.task == TASK_CLASSIFICATION:
        logits = net.forward_logits(x, train=train, rng=rng)
        probs = softmax(logits)
        loss, dlogits = cross_entropy_loss(probs, target)
        net.backward(dlogits, from_logits=True)
        return loss, probs
    pred = net.forward(x, train=train, rng=rng)
    loss, dpred = mse_loss_2d(pred, target)
    net.backward(dpred)
    return loss, pred


def grad_check(net: Network, x, target, eps=1e-5, probes_per_layer=None,
               rng=None, mode="eval"):
    """Max relative discrepancy between backprop and central finite differences.

    Probes every learnable parameter, or probes_per_layer randomly chosen
    ones per parameter-owning layer. Must run in eval mode: train-mode
    dropout makes the loss non-deterministic, so the check refuses to run.
    """
    if mode != "eval":
        raise ValueError("grad_check requires eval mode; disable dropout first")
    x = np.asarray(x, dtype=float)
    loss_backward(net, x, target, train=False)
    analytic = [g.copy() for g in net.gradients()]
    if probes_per_layer is not None and rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    tensor_index = 0
    for layer in net.param_layers():
        sizes = [p.size for p in layer.params()]
        total = sum(sizes)
        if probes_per_layer is None or probes_per_layer >= total:
            probe = np.arange(total)
        else:
            probe = rng.choice(total, size=probes_per_layer, replace=False)
        for flat in probe:
            which, offset = 0, int(flat)
            while offset >= sizes[which]:
                offset -= sizes[which]
                which += 1
            param = layer.params()[which]
            view = param.reshape(-1)
            saved = view[offset]
            view[offset] = saved + eps
            up, _ = loss_forward(net, x, target, train=False)
            view[offset] = saved - eps
            down, _ = loss_forward(net, x, target, train=False)
            view[offset] = saved
            numeric = (up - down) / (2.0 * eps)
            a = analytic[tensor_index + which].reshape(-1)[offset]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            worst = max(worst, rel)
        tensor_index += len(sizes)
    return worst


_LAYER_TAGS = {Conv2d: 1, Dense: 2, LeakyRelu: 3, Softmax: 4, Dropout: 5, Flatten: 6}
_TASK_CODES = {TASK_REGRESSION: 0, TASK_CLASSIFICATION: 1}


def save_checkpoint(net: Network, path) -> None:
    """Write the architecture and float64 parameters; round-trip exact."""
    chunks = [CHECKPOINT_MAGIC,
              struct.pack("<BHHHI", _TASK_CODES[net.task], *net.input_shape,
                          len(net.layers))]
    for layer in net.layers:
        tag = _LAYER_TAGS[type(layer)]
        if isinstance(layer, Conv2d):
            chunks.append(struct.pack("<BHHHHHH", tag, layer.filter_h, layer.filter_w,
                                      layer.in_channels, layer.filters,
                                      layer.stride[0], layer.stride[1]))
            chunks.append(layer.weights.astype("<f8").tobytes())
            chunks.append(layer.bias.astype("<f8").tobytes())
        elif isinstance(layer, Dense):
            chunks.append(struct.pack("<BII", tag, layer.in_features, layer.out_features))
            chunks.append(layer.weights.astype("<f8").tobytes())
            chunks.append(layer.bias.astype("<f8").tobytes())
        elif isinstance(layer, LeakyRelu):
            chunks.append(struct.pack("<Bd", tag, layer.gamma))
        elif isinstance(layer, Dropout):
            chunks.append(struct.pack("<Bd", tag, layer.p))
        else:
            chunks.append(struct.pack("<B", tag))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def _read(fmt, data, offset):
    s = struct.Struct(fmt)
    if len(data) - offset < s.size:
        raise ShapeError("checkpoint truncated")
    return s.unpack_from(data, offset), offset + s.size


def _read_array(data, offset, count):
    need = count * 8
    if len(data) - offset < need:
        raise ShapeError("checkpoint truncated")
    return np.frombuffer(data, dtype="<f8", count=count, offset=offset).copy(), offset + need


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ShapeError(f"bad checkpoint magic {data[:8]!r}")
    (task_code, in_h, in_w, in_c, n_layers), offset = _read("<BHHHI", data, 8)
    task = {v: k for k, v in _TASK_CODES.items()}.get(task_code)
    if task is None:
        raise ShapeError(f"unknown task code {task_code}")
    layers = []
    for _ in range(n_layers):
        (tag,), offset = _read("<B", data, offset)
        if tag == 1:
            (fh_, fw, in_ch, filters, sh, sw), offset = _read("<HHHHHH", data, offset)
            w, offset = _read_array(data, offset, fh_ * fw * in_ch * filters)
            b, offset = _read_array(data, offset, filters)
            layers.append(Conv2d(in_ch, filters, fh_, fw, (sh, sw),
                                 weights=w.reshape(fh_, fw, in_ch, filters), bias=b))
        elif tag == 2:
            (n_in, n_out), offset = _read("<II", data, offset)
            w, offset = _read_array(data, offset, n_in * n_out)
            b, offset = _read_array(data, offset, n_out)
            layers.append(Dense(n_in, n_out, weights=w.reshape(n_out, n_in), bias=b))
        elif tag == 3:
            (gamma,), offset = _read("<d", data, offset)
            layers.append(LeakyRelu(gamma))
        elif tag == 4:
            layers.append(Softmax())
        elif tag == 5:
            (p,), offset = _read("<d", data, offset)
            layers.append(Dropout(p))
        elif tag == 6:
            layers.append(Flatten())
        else:
            raise ShapeError(f"unknown layer tag {tag}")
    return Network(layers, task, input_shape=(in_h, in_w, in_c))
