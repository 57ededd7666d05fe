"""Dense tensors, the handful of layers the design scorer needs, and Adam.

The scorer architecture is small and frozen, so instead of a general
autodiff graph each layer carries a hand-derived backward pass; the
contract is the central finite-difference suite in the tests (and
``designfit selfcheck``).  Layers store float32 by default and can be
instantiated in float64 for gradient checking.

Convolutions run one image at a time in channels-first layout: the
input is unfolded into a (C*k*k, H*W) patch matrix whose rows are
contiguous row-major copies, and both directions of the convolution are
single BLAS matrix products against the (out, C*k*k) weight view.  On a
single core this is an order of magnitude faster than transpose-heavy
im2col variants.

All forward passes are deterministic and bit-stable for fixed inputs;
there is no stochastic layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class Param:
    """A named weight tensor with a gradient buffer of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Param({self.name}, shape={self.value.shape})"


def _glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2d:
    """3x3-style convolution, stride 1, zero 'same' padding (odd kernels).

    ``first=True`` marks the input layer; its input gradient is never
    needed, so the backward pass skips that half of the work.
    """

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        ksize: int = 3,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
        name: str = "conv",
        first: bool = False,
    ):
        if ksize % 2 != 1:
            raise ShapeError(f"same padding requires an odd kernel, got {ksize}")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.k = ksize
        self.first = first
        self.dtype = dtype
        self.w = Param(
            f"{name}.w",
            _glorot_uniform(rng, (out_ch, in_ch, ksize, ksize), in_ch * ksize * ksize, out_ch * ksize * ksize, dtype),
        )
        self.b = Param(f"{name}.b", np.zeros(out_ch, dtype=dtype))
        self._cols: list[np.ndarray] | None = None
        self._in_hw: tuple[int, int] | None = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def _im2col(self, xpad: np.ndarray, h: int, w: int) -> np.ndarray:
        k = self.k
        col = np.empty((self.in_ch * k * k, h * w), dtype=self.dtype)
        row = 0
        for c in range(self.in_ch):
            for u in range(k):
                for v in range(k):
                    col[row] = xpad[c, u : u + h, v : v + w].reshape(-1)
                    row += 1
        return col

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ShapeError(f"expected {self.in_ch} input channels, got {c}")
        p = self.k // 2
        wmat = self.w.value.reshape(self.out_ch, -1)
        out = np.empty((n, self.out_ch, h, w), dtype=self.dtype)
        cols: list[np.ndarray] = []
        for i in range(n):
            xpad = np.zeros((c, h + 2 * p, w + 2 * p), dtype=self.dtype)
            xpad[:, p : p + h, p : p + w] = x[i]
            col = self._im2col(xpad, h, w)
            out[i] = (wmat @ col + self.b.value[:, None]).reshape(self.out_ch, h, w)
            if train:
                cols.append(col)
        self._cols = cols if train else None
        self._in_hw = (h, w)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray | None:
        if self._cols is None:
            raise RuntimeError("backward called without a cached training forward")
        n = dy.shape[0]
        h, w = self._in_hw
        p = self.k // 2
        k = self.k
        wmat = self.w.value.reshape(self.out_ch, -1)
        gw = self.w.grad.reshape(self.out_ch, -1)
        dx = None if self.first else np.empty((n, self.in_ch, h, w), dtype=self.dtype)
        for i in range(n):
            dyf = dy[i].reshape(self.out_ch, -1)
            gw += dyf @ self._cols[i].T
            self.b.grad += dyf.sum(axis=1)
            if self.first:
                continue
            dcol = wmat.T @ dyf
            dxpad = np.zeros((self.in_ch, h + 2 * p, w + 2 * p), dtype=self.dtype)
            row = 0
            for c in range(self.in_ch):
                for u in range(k):
                    for v in range(k):
                        dxpad[c, u : u + h, v : v + w] += dcol[row].reshape(h, w)
                        row += 1
            dx[i] = dxpad[:, p : p + h, p : p + w]
        self._cols = None
        return dx


class GroupNorm:
    """Per-sample, per-group normalization with affine scale/shift.

    groups=1 is LayerNorm over (C, H, W); groups=C is InstanceNorm.
    """

    def __init__(
        self,
        channels: int,
        groups: int = 2,
        eps: float = 1e-5,
        *,
        dtype=np.float32,
        name: str = "norm",
    ):
        if channels % groups != 0:
            raise ShapeError(f"{channels} channels not divisible into {groups} groups")
        self.channels = channels
        self.groups = groups
        self.eps = eps
        self.dtype = dtype
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self._xhat: np.ndarray | None = None
        self._inv: np.ndarray | None = None
        self._shape = None

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        xg = x.reshape(n, self.groups, -1)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv = 1.0 / np.sqrt(var + np.asarray(self.eps, dtype=self.dtype))
        xhat = (xg - mu) * inv
        y = xhat.reshape(n, c, h, w) * self.gamma.value[None, :, None, None]
        y += self.beta.value[None, :, None, None]
        if train:
            self._xhat, self._inv, self._shape = xhat, inv, (n, c, h, w)
        else:
            self._xhat = self._inv = None
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._xhat is None:
            raise RuntimeError("backward called without a cached training forward")
        n, c, h, w = self._shape
        xhat4 = self._xhat.reshape(n, c, h, w)
        self.gamma.grad += (dy * xhat4).sum(axis=(0, 2, 3))
        self.beta.grad += dy.sum(axis=(0, 2, 3))
        dxhat = (dy * self.gamma.value[None, :, None, None]).reshape(n, self.groups, -1)
        xhat = self._xhat
        dx = self._inv * (
            dxhat
            - dxhat.mean(axis=2, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=2, keepdims=True)
        )
        self._xhat = self._inv = None
        return dx.reshape(n, c, h, w)


class BatchNorm2d:
    """Cross-batch channel normalization (ablation only; GN is the default).

    Training normalizes with batch statistics and tracks running
    estimates; inference uses the running estimates.
    """

    def __init__(
        self,
        channels: int,
        eps: float = 1e-5,
        momentum: float = 0.1,
        *,
        dtype=np.float32,
        name: str = "norm",
    ):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.dtype = dtype
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._xhat = None
        self._inv = None

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if train:
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(self.dtype)
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + np.asarray(self.eps, dtype=self.dtype))
        xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
        y = xhat * self.gamma.value[None, :, None, None] + self.beta.value[None, :, None, None]
        if train:
            self._xhat, self._inv = xhat, inv
        else:
            self._xhat = self._inv = None
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._xhat is None:
            raise RuntimeError("backward called without a cached training forward")
        xhat, inv = self._xhat, self._inv
        self.gamma.grad += (dy * xhat).sum(axis=(0, 2, 3))
        self.beta.grad += dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.gamma.value[None, :, None, None]
        mean_d = dxhat.mean(axis=(0, 2, 3))
        mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3))
        dx = inv[None, :, None, None] * (
            dxhat - mean_d[None, :, None, None] - xhat * mean_dx[None, :, None, None]
        )
        self._xhat = self._inv = None
        return dx


class Tanh:
    def __init__(self):
        self._y = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y = np.tanh(x)
        self._y = y if train else None
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._y is None:
            raise RuntimeError("backward called without a cached training forward")
        y = self._y
        self._y = None
        return dy * (1.0 - y * y)


class AvgPool2x2:
    """Non-overlapping 2x2 mean pooling; needs even spatial dims."""

    def __init__(self):
        self._in_shape = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"2x2 pooling needs even spatial dims, got {h}x{w}")
        self._in_shape = x.shape
        return 0.25 * (
            x[:, :, 0::2, 0::2] + x[:, :, 0::2, 1::2] + x[:, :, 1::2, 0::2] + x[:, :, 1::2, 1::2]
        )

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx = np.empty(self._in_shape, dtype=dy.dtype)
        q = 0.25 * dy
        dx[:, :, 0::2, 0::2] = q
        dx[:, :, 0::2, 1::2] = q
        dx[:, :, 1::2, 0::2] = q
        dx[:, :, 1::2, 1::2] = q
        return dx


class GlobalAvgPool:
    """(N, C, H, W) -> (N, C) spatial mean."""

    def __init__(self):
        self._in_shape = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._in_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, c, h, w = self._in_shape
        return np.broadcast_to((dy / (h * w))[:, :, None, None], self._in_shape)


class Linear:
    def __init__(self, in_f: int, out_f: int, *, rng: np.random.Generator, dtype=np.float32, name="fc"):
        self.in_f = in_f
        self.out_f = out_f
        self.dtype = dtype
        self.w = Param(f"{name}.w", _glorot_uniform(rng, (out_f, in_f), in_f, out_f, dtype))
        self.b = Param(f"{name}.b", np.zeros(out_f, dtype=dtype))
        self._x = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[1] != self.in_f:
            raise ShapeError(f"expected {self.in_f} features, got {x.shape[1]}")
        self._x = x if train else None
        return x @ self.w.value.T + self.b.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called without a cached training forward")
        self.w.grad += dy.T @ self._x
        self.b.grad += dy.sum(axis=0)
        x = None
        dx = dy @ self.w.value
        self._x = None
        return dx


NORM_KINDS = ("group", "batch", "layer", "instance")


def make_norm(kind: str, channels: int, *, dtype=np.float32, name: str = "norm"):
    """Normalization for the scorer blocks; layer/instance reuse GroupNorm."""
    if kind == "group":
        return GroupNorm(channels, groups=2, dtype=dtype, name=name)
    if kind == "layer":
        return GroupNorm(channels, groups=1, dtype=dtype, name=name)
    if kind == "instance":
        return GroupNorm(channels, groups=channels, dtype=dtype, name=name)
    if kind == "batch":
        return BatchNorm2d(channels, dtype=dtype, name=name)
    raise ValueError(f"unknown norm kind {kind!r}, expected one of {NORM_KINDS}")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimState:
    """Adam with decoupled weight decay; moments keyed by parameter name."""

    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.99
    weight_decay: float = 0.005
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list[Param], opt: OptimState) -> None:
    """One update: w *= (1 - lr*wd), then bias-corrected Adam; grads zeroed."""
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for p in params:
        if p.name not in opt.m:
            opt.m[p.name] = np.zeros_like(p.value)
            opt.v[p.name] = np.zeros_like(p.value)
        g = p.grad
        if opt.weight_decay:
            p.value *= 1.0 - opt.lr * opt.weight_decay
        m = opt.m[p.name]
        v = opt.v[p.name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p.value -= opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        g[...] = 0.0


def halved_lr(base: float, epoch: int, every: int = 5) -> float:
    """Step schedule: divide by two every ``every`` epochs (epoch is 0-based)."""
    return base * 0.5 ** (epoch // every)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"DFITW001"


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Plain binary: magic, tensor count, then per tensor
    name length + name, rank, dims, little-endian float32 payload."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
            n_items = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n_items), dtype="<f4").reshape(shape)
            tensors[name] = data.copy()
        return tensors


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def fd_check(
    loss_fn,
    value: np.ndarray,
    grad: np.ndarray,
    *,
    eps: float = 1e-4,
    coords=None,
    rng: np.random.Generator | None = None,
    max_coords: int = 40,
) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``loss_fn`` recomputes the scalar loss from scratch (no gradient
    side effects); ``value`` is perturbed in place and restored.  A
    random subset of coordinates is probed unless ``coords`` is given.
    Coordinates where both gradients are essentially zero are skipped
    (their relative error is meaningless).
    """
    flat = value.reshape(-1)
    gflat = grad.reshape(-1)
    if coords is None:
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
    worst = 0.0
    for idx in coords:
        keep = flat[idx]
        flat[idx] = keep + eps
        f1 = loss_fn()
        flat[idx] = keep - eps
        f2 = loss_fn()
        flat[idx] = keep
        num = (f1 - f2) / (2.0 * eps)
        ana = float(gflat[idx])
        denom = max(abs(num), abs(ana))
        if denom < 1e-7:
            continue
        worst = max(worst, abs(num - ana) / denom)
    return worst


def fd_check_param(loss_fn, param: Param, **kwargs) -> float:
    return fd_check(loss_fn, param.value, param.grad, **kwargs)
