"""Convolutional regression network built from scratch on the conv kernels.

The stack is input -> [conv -> normalization -> ReLU] x n_conv ->
adaptive average pool -> fully connected -> dropout -> linear output.
Normalization uses running statistics in both modes (they are treated as
constants in backprop and updated explicitly between rounds), so forward
and backward are pure per-sample functions; mini-batch gradients are the
exact mean of per-sample gradients up to float summation order.

Parameters live in one flat vector with a contiguous layout index.
Dropout masks zero whole fully-connected weight columns (input-feature
masking) with inverted scaling at train time, so masked coordinates get
exactly zero gradient.
"""

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .exceptions import FormatError, InvalidInputError, ShapeError
from .spim import rng_stream

_NORM_EPS = 1e-5

# substream namespaces under the training seed
_NS_INIT = 201
_NS_MASK = 202

MODEL_MAGIC = b"SPIMNN01"
_MODEL_HEADER = struct.Struct("<11If")


@dataclass(frozen=True)
class NetworkArch:
    """Shape of the regression network.

    ``dropout`` is the drop probability; the pool target equals the
    kernel size so the fully connected input width is
    filters * kernel_h * kernel_w.
    """

    in_rows: int
    in_cols: int
    in_planes: int
    out_dim: int
    n_conv: int = 3
    filters: int = 128
    kernel: tuple = (3, 3)
    fc_units: int = 1024
    dropout: float = 0.5
    pool_target: tuple = (3, 3)

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "pool_target", tuple(self.pool_target))
        if min(self.in_rows, self.in_cols, self.in_planes) < 1:
            raise InvalidInputError("input dims must be >= 1")
        if self.out_dim < 1 or self.n_conv < 1 or self.filters < 1 \
                or self.fc_units < 1:
            raise InvalidInputError("layer sizes must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError("dropout must lie in [0, 1)")
        kh, kw = self.kernel
        if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise InvalidInputError("kernel dims must be odd and >= 1")
        ph, pw = self.pool_target
        if not (1 <= ph <= self.in_rows and 1 <= pw <= self.in_cols):
            raise InvalidInputError("pool target exceeds spatial dims")

    @property
    def fc_in(self) -> int:
        return self.filters * self.pool_target[0] * self.pool_target[1]


@lru_cache(maxsize=None)
def layout(arch: NetworkArch):
    """Flat-vector layout: name -> (offset, shape), contiguous and exact."""
    entries = {}
    offset = 0
    in_ch = arch.in_planes
    kh, kw = arch.kernel
    for l in range(arch.n_conv):
        for name, shape in ((f"conv{l}_w", (arch.filters, in_ch, kh, kw)),
                            (f"conv{l}_b", (arch.filters,)),
                            (f"norm{l}_gamma", (arch.filters,)),
                            (f"norm{l}_beta", (arch.filters,))):
            entries[name] = (offset, shape)
            offset += int(np.prod(shape))
        in_ch = arch.filters
    for name, shape in (("fc_w", (arch.fc_units, arch.fc_in)),
                        ("fc_b", (arch.fc_units,)),
                        ("out_w", (arch.out_dim, arch.fc_units)),
                        ("out_b", (arch.out_dim,))):
        entries[name] = (offset, shape)
        offset += int(np.prod(shape))
    return entries, offset


def theta_size(arch: NetworkArch) -> int:
    return layout(arch)[1]


@dataclass
class ModelParams:
    """Flat learnable vector plus the normalization running statistics.

    The running mean/var buffers are not learnable and are excluded from
    theta; they are updated explicitly via update_buffers.
    """

    arch: NetworkArch
    theta: np.ndarray
    running_mean: np.ndarray    # (n_conv, filters)
    running_var: np.ndarray

    def get(self, name: str) -> np.ndarray:
        offset, shape = layout(self.arch)[0][name]
        return self.theta[offset:offset + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.theta.copy(),
                           self.running_mean.copy(), self.running_var.copy())


def slice_of(arch: NetworkArch, vec: np.ndarray, name: str) -> np.ndarray:
    """View of one layout entry inside any theta-shaped flat vector."""
    offset, shape = layout(arch)[0][name]
    return vec[offset:offset + int(np.prod(shape))].reshape(shape)


def init_params(arch: NetworkArch, seed: int,
                dtype=np.float32) -> ModelParams:
    """Seeded init: He for conv weights, Xavier for the linear layers."""
    rng = rng_stream(seed, _NS_INIT)
    theta = np.zeros(theta_size(arch), dtype=dtype)
    params = ModelParams(arch, theta,
                         np.zeros((arch.n_conv, arch.filters), dtype=dtype),
                         np.ones((arch.n_conv, arch.filters), dtype=dtype))
    for l in range(arch.n_conv):
        w = params.get(f"conv{l}_w")
        fan_in = int(np.prod(w.shape[1:]))
        w[...] = rng.standard_normal(w.shape) * math.sqrt(2.0 / fan_in)
        params.get(f"norm{l}_gamma")[...] = 1.0
    for name in ("fc_w", "out_w"):
        w = params.get(name)
        w[...] = rng.standard_normal(w.shape) * math.sqrt(1.0 / w.shape[1])
    return params


@dataclass(frozen=True)
class TrainConfig:
    """SGD-with-momentum settings; the loss is always mean squared error."""

    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 128
    buffer_momentum: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not 0.0 < self.buffer_momentum <= 1.0:
            raise InvalidInputError("buffer_momentum must lie in (0, 1]")


def draw_mask(seed: int, round_index: int, n: int, kappa: float) -> np.ndarray:
    """Exact-count dropout mask for one round, reproducible from (seed, t).

    Zeros exactly round(kappa * n) positions, so the active parameter
    count per round is deterministic (the overhead ledger relies on it).
    """
    if not 0.0 <= kappa < 1.0:
        raise InvalidInputError("kappa must lie in [0, 1)")
    n_zero = int(round(kappa * n))
    mask = np.ones(n, dtype=np.uint8)
    if n_zero:
        rng = rng_stream(seed, _NS_MASK, round_index)
        mask[rng.permutation(n)[:n_zero]] = 0
    return mask


def _pool_windows(n_in: int, n_out: int):
    return [(math.floor(i * n_in / n_out), math.ceil((i + 1) * n_in / n_out))
            for i in range(n_out)]


def _check_input(arch: NetworkArch, X: np.ndarray, batched: bool):
    want = (arch.in_rows, arch.in_cols, arch.in_planes)
    got = X.shape[1:] if batched else X.shape
    if got != want:
        raise ShapeError(f"input shape {got} does not match {want}",
                         layer="input")


def _forward_cache(params: ModelParams, Xb: np.ndarray,
                   mask: np.ndarray | None, mode: str):
    """Batched forward pass keeping every intermediate for backprop.

    Xb is (B, rows, cols, planes); returns (y, cache) with y (B, out_dim).
    """
    arch = params.arch
    if mode not in ("train", "infer"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    dtype = params.theta.dtype
    kh, kw = arch.kernel
    ph, pw = (kh - 1) // 2, (kw - 1) // 2

    x = np.ascontiguousarray(Xb.transpose(0, 3, 1, 2), dtype=dtype)
    conv_in, preact, postnorm = [], [], []
    for l in range(arch.n_conv):
        conv_in.append(x)
        z = _kernels.conv2d_forward(x, params.get(f"conv{l}_w"),
                                    params.get(f"conv{l}_b"), ph, pw)
        preact.append(z)
        mu = params.running_mean[l][None, :, None, None]
        sd = np.sqrt(params.running_var[l] + _NORM_EPS)[None, :, None, None]
        z_hat = (z - mu) / sd
        a = params.get(f"norm{l}_gamma")[None, :, None, None] * z_hat \
            + params.get(f"norm{l}_beta")[None, :, None, None]
        postnorm.append(a)
        x = np.maximum(a, 0)

    rows = _pool_windows(x.shape[2], arch.pool_target[0])
    cols = _pool_windows(x.shape[3], arch.pool_target[1])
    pooled = np.empty(x.shape[:2] + arch.pool_target, dtype=dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            pooled[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    flat = pooled.reshape(pooled.shape[0], -1)

    if mode == "train" and mask is not None:
        if mask.shape != (arch.fc_in,):
            raise ShapeError(
                f"mask length {mask.shape} does not match ({arch.fc_in},)",
                layer="dropout")
        keep = 1.0 - arch.dropout
        mvec = (mask / keep).astype(dtype)
    else:
        mvec = None
    flat_d = flat * mvec[None, :] if mvec is not None else flat

    h = flat_d @ params.get("fc_w").T + params.get("fc_b")
    y = h @ params.get("out_w").T + params.get("out_b")
    cache = dict(conv_in=conv_in, preact=preact, postnorm=postnorm,
                 relu_out=x, pooled_shape=pooled.shape, rows=rows, cols=cols,
                 flat_d=flat_d, mvec=mvec, h=h, pad=(ph, pw))
    return y, cache


def forward(params: ModelParams, X: np.ndarray,
            mask: np.ndarray | None = None, mode: str = "infer") -> np.ndarray:
    """Predict one label vector from one input tensor."""
    X = np.asarray(X)
    _check_input(params.arch, X, batched=False)
    y, _ = _forward_cache(params, X[None], mask, mode)
    return y[0]


def forward_batch(params: ModelParams, Xb: np.ndarray,
                  mask: np.ndarray | None = None,
                  mode: str = "infer") -> np.ndarray:
    Xb = np.asarray(Xb)
    _check_input(params.arch, Xb, batched=True)
    y, _ = _forward_cache(params, Xb, mask, mode)
    return y


def loss_mse(pred: np.ndarray, label: np.ndarray) -> float:
    pred = np.asarray(pred)
    label = np.asarray(label)
    if pred.shape != label.shape:
        raise InvalidInputError(
            f"prediction shape {pred.shape} != label shape {label.shape}")
    diff = pred - label
    return float(np.mean(diff * diff))


def _backward_from_cache(params: ModelParams, cache: dict,
                         dy: np.ndarray) -> np.ndarray:
    """Exact reverse-mode pass; dy is the gradient at the output (B, out)."""
    arch = params.arch
    dtype = params.theta.dtype
    grad = np.zeros_like(params.theta)

    h, flat_d = cache["h"], cache["flat_d"]
    slice_of(arch, grad, "out_w")[...] = dy.T @ h
    slice_of(arch, grad, "out_b")[...] = dy.sum(axis=0)
    dh = dy @ params.get("out_w")
    slice_of(arch, grad, "fc_w")[...] = dh.T @ flat_d
    slice_of(arch, grad, "fc_b")[...] = dh.sum(axis=0)
    dflat_d = dh @ params.get("fc_w")
    dflat = dflat_d * cache["mvec"][None, :] if cache["mvec"] is not None \
        else dflat_d

    dpool = dflat.reshape(cache["pooled_shape"])
    x = cache["relu_out"]
    dx = np.zeros_like(x)
    for i, (r0, r1) in enumerate(cache["rows"]):
        for j, (c0, c1) in enumerate(cache["cols"]):
            area = float((r1 - r0) * (c1 - c0))
            dx[:, :, r0:r1, c0:c1] += (dpool[:, :, i, j] / area)[:, :, None,
                                                                 None]

    ph, pw = cache["pad"]
    for l in reversed(range(arch.n_conv)):
        a = cache["postnorm"][l]
        da = dx * (a > 0)
        mu = params.running_mean[l][None, :, None, None]
        sd = np.sqrt(params.running_var[l] + _NORM_EPS)[None, :, None, None]
        z_hat = (cache["preact"][l] - mu) / sd
        slice_of(arch, grad, f"norm{l}_gamma")[...] = \
            (da * z_hat).sum(axis=(0, 2, 3))
        slice_of(arch, grad, f"norm{l}_beta")[...] = da.sum(axis=(0, 2, 3))
        dz = da * params.get(f"norm{l}_gamma")[None, :, None, None] / sd
        dx, gw, gb = _kernels.conv2d_backward(
            cache["conv_in"][l], params.get(f"conv{l}_w"), dz, ph, pw)
        slice_of(arch, grad, f"conv{l}_w")[...] = gw
        slice_of(arch, grad, f"conv{l}_b")[...] = gb
    return grad


def backward(params: ModelParams, X: np.ndarray, label: np.ndarray,
             mask: np.ndarray | None = None) -> np.ndarray:
    """Gradient of loss_mse(forward(params, X, mask, 'train'), label)."""
    X = np.asarray(X)
    _check_input(params.arch, X, batched=False)
    label = np.asarray(label, dtype=params.theta.dtype)
    if label.shape != (params.arch.out_dim,):
        raise ShapeError(
            f"label shape {label.shape} does not match "
            f"({params.arch.out_dim},)", layer="output")
    y, cache = _forward_cache(params, X[None], mask, "train")
    dy = 2.0 * (y - label[None, :]) / params.arch.out_dim
    return _backward_from_cache(params, cache, dy.astype(params.theta.dtype))


def gradient_batch(params: ModelParams, Xb: np.ndarray, labels: np.ndarray,
                   mask: np.ndarray | None = None):
    """Mean-loss gradient over a batch plus normalization moments.

    Returns (grad, loss, moments); moments is a list per conv layer of
    (count, sum, sum_of_squares) over batch and spatial positions of the
    pre-normalization activations, for running-buffer updates.
    """
    Xb = np.asarray(Xb)
    _check_input(params.arch, Xb, batched=True)
    labels = np.asarray(labels, dtype=params.theta.dtype)
    if labels.shape != (Xb.shape[0], params.arch.out_dim):
        raise ShapeError(
            f"labels shape {labels.shape} does not match "
            f"({Xb.shape[0]}, {params.arch.out_dim})", layer="output")
    y, cache = _forward_cache(params, Xb, mask, "train")
    diff = y - labels
    loss = float(np.mean(diff * diff))
    dy = (2.0 * diff / (params.arch.out_dim * Xb.shape[0])).astype(
        params.theta.dtype)
    grad = _backward_from_cache(params, cache, dy)
    moments = []
    for z in cache["preact"]:
        count = z.shape[0] * z.shape[2] * z.shape[3]
        moments.append((count, z.sum(axis=(0, 2, 3), dtype=np.float64),
                        (z.astype(np.float64) ** 2).sum(axis=(0, 2, 3))))
    return grad, loss, moments


def update_buffers(params: ModelParams, moments, rho: float) -> None:
    """Exponential update of the running normalization statistics."""
    for l, (count, total, sumsq) in enumerate(moments):
        mean = total / count
        var = np.maximum(sumsq / count - mean ** 2, 0.0)
        params.running_mean[l] = (1.0 - rho) * params.running_mean[l] \
            + rho * mean.astype(params.running_mean.dtype)
        params.running_var[l] = (1.0 - rho) * params.running_var[l] \
            + rho * var.astype(params.running_var.dtype)


def merge_moments(per_user_moments):
    """Pool per-user normalization moments into one set."""
    merged = []
    for layer_parts in zip(*per_user_moments):
        count = sum(p[0] for p in layer_parts)
        total = sum(p[1] for p in layer_parts)
        sumsq = sum(p[2] for p in layer_parts)
        merged.append((count, total, sumsq))
    return merged


def sgd_momentum_step(theta: np.ndarray, velocity: np.ndarray,
                      grad: np.ndarray, config: TrainConfig):
    """v' = momentum * v + g; theta' = theta - lr * v'."""
    if theta.shape != velocity.shape or theta.shape != grad.shape:
        raise InvalidInputError("theta, velocity and grad shapes differ")
    v = config.momentum * velocity + grad
    return theta - config.learning_rate * v, v


def param_count(arch: NetworkArch, kappa: float) -> int:
    """Closed-form parameter accounting used by the overhead analysis.

    Counts n_conv * (in_planes * filters * kh * kw) convolution weights
    plus a kappa fraction of the fully connected weights; biases,
    normalization and the output layer are deliberately excluded.
    ``kappa`` is the counted FC fraction (1 means no dropout).
    """
    kh, kw = arch.kernel
    conv = arch.n_conv * arch.in_planes * arch.filters * kh * kw
    fc = kappa * arch.filters * kh * kw * arch.fc_units
    return int(round(conv + fc))


def active_param_count(arch: NetworkArch, mask: np.ndarray) -> int:
    """Parameters exchanged in one round under a dropout mask.

    Follows the same accounting convention as param_count, with the FC
    term restricted to unmasked input-feature columns.
    """
    kh, kw = arch.kernel
    conv = arch.n_conv * arch.in_planes * arch.filters * kh * kw
    return conv + int(mask.sum()) * arch.fc_units


def save_model(params: ModelParams, velocity: np.ndarray, path) -> None:
    """Checkpoint: arch fields, dropout, then theta/velocity/buffers (f32)."""
    arch = params.arch
    if velocity.shape != params.theta.shape:
        raise InvalidInputError("velocity shape does not match theta")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(_MODEL_HEADER.pack(
            arch.in_rows, arch.in_cols, arch.in_planes, arch.n_conv,
            arch.filters, arch.kernel[0], arch.kernel[1], arch.fc_units,
            arch.out_dim, arch.pool_target[0], arch.pool_target[1],
            arch.dropout))
        for vec in (params.theta, velocity, params.running_mean.ravel(),
                    params.running_var.ravel()):
            fh.write(struct.pack("<I", vec.size))
            fh.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def load_model(path):
    """Read a checkpoint back as (ModelParams, velocity), float32."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MODEL_MAGIC) or data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError(f"bad magic in {path}", offset=0)
    base = len(MODEL_MAGIC)
    if len(data) < base + _MODEL_HEADER.size:
        raise FormatError("truncated model header", offset=len(data))
    fields = _MODEL_HEADER.unpack_from(data, base)
    arch = NetworkArch(in_rows=fields[0], in_cols=fields[1],
                       in_planes=fields[2], out_dim=fields[8],
                       n_conv=fields[3], filters=fields[4],
                       kernel=(fields[5], fields[6]), fc_units=fields[7],
                       dropout=fields[11], pool_target=(fields[9], fields[10]))
    offset = base + _MODEL_HEADER.size
    want = (theta_size(arch), theta_size(arch),
            arch.n_conv * arch.filters, arch.n_conv * arch.filters)
    arrays = []
    for k, expected in enumerate(want):
        if len(data) < offset + 4:
            raise FormatError("truncated array length", offset=len(data))
        (n,) = struct.unpack_from("<I", data, offset)
        if n != expected:
            raise FormatError(
                f"array {k}: length {n} does not match {expected}",
                offset=offset)
        offset += 4
        if len(data) < offset + 4 * n:
            raise FormatError(
                f"array {k}: expected {4 * n} payload bytes, got "
                f"{len(data) - offset}", offset=len(data))
        arrays.append(np.frombuffer(data, "<f4", n, offset).copy())
        offset += 4 * n
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes",
                          offset=offset)
    params = ModelParams(
        arch, arrays[0],
        arrays[2].reshape(arch.n_conv, arch.filters),
        arrays[3].reshape(arch.n_conv, arch.filters))
    return params, arrays[1]
