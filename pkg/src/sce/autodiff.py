"""A small tape-based reverse-mode differentiation engine on numpy arrays.

Only the primitives needed by the sequence models are provided.  Every
primitive records itself on a :class:`Tape`; :meth:`Tape.backward` walks the
record in reverse and accumulates into the ``grad`` of leaf tensors that
require gradients.  Image activations use NHWC layout; convolution weights
use ``(out, in, kh, kw)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class AutodiffError(ValueError):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NotScalar(AutodiffError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype})"


@dataclass
class _Op:
    name: str
    inputs: tuple
    output: Tensor
    backward: Callable


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, h, w, c = x.shape
    xp = _pad_hw(x, pad)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # (n, ho, wo, c, kh, kw) -> rows of (c, kh, kw) patches
    cols = np.ascontiguousarray(win[:, :ho, :wo]).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


class Tape:
    """Ordered record of primitive operations.

    Tensors created by tape methods are outputs of recorded operations;
    tensors passed in from outside (images, parameters) are leaves.
    """

    def __init__(self):
        self.ops: list[_Op] = []

    def __len__(self) -> int:
        return len(self.ops)

    def _check(self, cond: bool, name: str, msg: str) -> None:
        if not cond:
            raise ShapeMismatch(f"op #{len(self.ops)} ({name}): {msg}")

    def _record(self, name: str, inputs: Sequence, data: np.ndarray, backward: Callable) -> Tensor:
        out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
        self.ops.append(_Op(name, tuple(inputs), out, backward))
        return out

    # -- layers -----------------------------------------------------------

    def conv2d(self, x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
        self._check(x.data.ndim == 4 and w.data.ndim == 4, "conv2d", "expects NHWC input and OIHW weight")
        o, c, kh, kw = w.shape
        self._check(x.shape[3] == c, "conv2d", f"input has {x.shape[3]} channels, weight expects {c}")
        self._check(b is None or b.shape == (o,), "conv2d", "bias shape")
        n = x.shape[0]
        cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
        wm = w.data.reshape(o, c * kh * kw)
        out = cols @ wm.T
        if b is not None:
            out += b.data
        out = out.reshape(n, ho, wo, o)
        in_shape = x.shape

        def backward(g):
            g2 = g.reshape(-1, o)
            dw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
            db = g2.sum(axis=0) if b is not None and b.requires_grad else None
            dx = None
            if x.requires_grad:
                dcols = (g2 @ wm).reshape(n, ho, wo, c, kh, kw)
                _, h, wd, _ = in_shape
                dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[..., i, j]
                dx = dxp[:, pad:pad + h, pad:pad + wd, :] if pad else dxp
            return (dx, dw, db) if b is not None else (dx, dw)

        inputs = (x, w, b) if b is not None else (x, w)
        return self._record("conv2d", inputs, out, backward)

    def avg_pool(self, x: Tensor, k: int) -> Tensor:
        """Non-overlapping ``k x k`` average pooling of an NHWC tensor."""
        self._check(x.data.ndim == 4, "avg_pool", "expects NHWC input")
        n, h, w, c = x.shape
        self._check(h % k == 0 and w % k == 0, "avg_pool", f"{h}x{w} not divisible by {k}")
        out = x.data.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))
        inv = x.dtype.type(1.0 / (k * k))

        def backward(g):
            up = np.broadcast_to(g[:, :, None, :, None, :] * inv, (n, h // k, k, w // k, k, c))
            return (up.reshape(n, h, w, c),)

        return self._record("avg_pool", (x,), out, backward)

    def linear(self, x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
        """``x @ w.T + b`` with ``w`` shaped ``(out, in)``."""
        self._check(x.data.ndim == 2 and w.data.ndim == 2, "linear", "expects 2-d input and weight")
        self._check(x.shape[1] == w.shape[1], "linear",
                    f"input width {x.shape[1]} != weight fan-in {w.shape[1]}")
        self._check(b is None or b.shape == (w.shape[0],), "linear", "bias shape")
        out = x.data @ w.data.T
        if b is not None:
            out = out + b.data

        def backward(g):
            dx = g @ w.data if x.requires_grad else None
            dw = g.T @ x.data if w.requires_grad else None
            if b is None:
                return dx, dw
            return dx, dw, (g.sum(axis=0) if b.requires_grad else None)

        inputs = (x, w, b) if b is not None else (x, w)
        return self._record("linear", inputs, out, backward)

    # -- elementwise ------------------------------------------------------

    def relu(self, x: Tensor) -> Tensor:
        mask = x.data > 0
        return self._record("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype),
                            lambda g: (g * mask,))

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.data)
        return self._record("tanh", (x,), y, lambda g: (g * (1 - y * y),))

    def sigmoid(self, x: Tensor) -> Tensor:
        y = np.empty_like(x.data)
        pos = x.data >= 0
        y[pos] = 1 / (1 + np.exp(-x.data[pos]))
        e = np.exp(x.data[~pos])
        y[~pos] = e / (1 + e)
        return self._record("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a.shape == b.shape, "add", f"{a.shape} vs {b.shape}")
        return self._record("add", (a, b), a.data + b.data, lambda g: (g, g))

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a.shape == b.shape, "sub", f"{a.shape} vs {b.shape}")
        return self._record("sub", (a, b), a.data - b.data, lambda g: (g, -g))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a.shape == b.shape, "mul", f"{a.shape} vs {b.shape}")
        return self._record("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = a.dtype.type(c)
        return self._record("scale", (a,), a.data * c, lambda g: (g * c,))

    def shift(self, a: Tensor, c) -> Tensor:
        """Add a constant array (no gradient to the constant)."""
        c = np.asarray(c, dtype=a.dtype)
        self._check(c.shape in ((), a.shape), "shift", f"constant {c.shape} vs {a.shape}")
        return self._record("shift", (a,), a.data + c, lambda g: (g,))

    def square(self, a: Tensor) -> Tensor:
        two = a.dtype.type(2)
        return self._record("square", (a,), a.data * a.data, lambda g: (g * two * a.data,))

    # -- reductions -------------------------------------------------------

    def sum(self, a: Tensor) -> Tensor:
        shape = a.shape
        return self._record("sum", (a,), np.asarray(a.data.sum(), dtype=a.dtype),
                            lambda g: (np.broadcast_to(g, shape).astype(a.dtype),))

    def mean(self, a: Tensor) -> Tensor:
        return self.scale(self.sum(a), 1.0 / a.data.size)

    def logsumexp(self, a: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Row-wise log-sum-exp of a 2-d tensor; ``mask`` False entries are excluded."""
        self._check(a.data.ndim == 2, "logsumexp", "expects a 2-d tensor")
        x = a.data
        if mask is not None:
            self._check(mask.shape == x.shape, "logsumexp", "mask shape")
            x = np.where(mask, x, -np.inf)
        m = x.max(axis=1, keepdims=True)
        e = np.exp(x - m)
        s = e.sum(axis=1, keepdims=True)
        out = (m + np.log(s))[:, 0]
        soft = e / s

        def backward(g):
            return ((g[:, None] * soft).astype(a.dtype),)

        return self._record("logsumexp", (a,), out.astype(a.dtype), backward)

    # -- structural -------------------------------------------------------

    def concat(self, parts: Sequence[Tensor], axis: int = 0) -> Tensor:
        ref = parts[0].data.ndim
        self._check(all(p.data.ndim == ref for p in parts), "concat", "rank mismatch")
        sizes = [p.shape[axis] for p in parts]
        try:
            out = np.concatenate([p.data for p in parts], axis=axis)
        except ValueError as exc:
            raise ShapeMismatch(f"op #{len(self.ops)} (concat): {exc}") from None
        bounds = np.cumsum([0] + sizes)

        def backward(g):
            idx = [slice(None)] * g.ndim
            grads = []
            for k in range(len(parts)):
                idx[axis] = slice(bounds[k], bounds[k + 1])
                grads.append(g[tuple(idx)])
            return tuple(grads)

        return self._record("concat", parts, out, backward)

    def reshape(self, a: Tensor, shape: Sequence[int]) -> Tensor:
        old = a.shape
        try:
            out = a.data.reshape(shape)
        except ValueError as exc:
            raise ShapeMismatch(f"op #{len(self.ops)} (reshape): {exc}") from None
        return self._record("reshape", (a,), out, lambda g: (g.reshape(old),))

    def take_rows(self, a: Tensor, idx: Sequence[int]) -> Tensor:
        idx = np.asarray(idx, dtype=np.intp)
        self._check(idx.size == 0 or (idx.min() >= -a.shape[0] and idx.max() < a.shape[0]),
                    "take_rows", "row index out of range")

        def backward(g):
            d = np.zeros(a.shape, dtype=g.dtype)
            np.add.at(d, idx, g)
            return (d,)

        return self._record("take_rows", (a,), a.data[idx], backward)

    def take_cols(self, a: Tensor, start: int, stop: int) -> Tensor:
        self._check(a.data.ndim == 2 and 0 <= start < stop <= a.shape[1], "take_cols", "bad column range")

        def backward(g):
            d = np.zeros(a.shape, dtype=g.dtype)
            d[:, start:stop] = g
            return (d,)

        return self._record("take_cols", (a,), a.data[:, start:stop], backward)

    def take_elements(self, a: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        self._check(rows.shape == cols.shape, "take_elements", "index shapes differ")

        def backward(g):
            d = np.zeros(a.shape, dtype=g.dtype)
            np.add.at(d, (rows, cols), g)
            return (d,)

        return self._record("take_elements", (a,), a.data[rows, cols], backward)

    def pairwise_sqdist(self, p: Tensor, z: Tensor) -> Tensor:
        """``out[i, j] = sum_k (p[i, k] - z[j, k])**2``."""
        self._check(p.data.ndim == 2 and z.data.ndim == 2 and p.shape[1] == z.shape[1],
                    "pairwise_sqdist", f"{p.shape} vs {z.shape}")
        diff = p.data[:, None, :] - z.data[None, :, :]
        out = (diff * diff).sum(axis=2)
        two = p.dtype.type(2)

        def backward(g):
            w = two * g[:, :, None] * diff
            return w.sum(axis=1), -w.sum(axis=0)

        return self._record("pairwise_sqdist", (p, z), out, backward)

    # -- gradients --------------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every leaf that requires a gradient."""
        if loss.data.size != 1:
            raise NotScalar(f"loss has {loss.data.size} elements")
        produced = {id(op.output) for op in self.ops}
        if id(loss) not in produced:
            raise AutodiffError("loss was not produced by this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
        for op in reversed(self.ops):
            g = grads.pop(id(op.output), None)
            if g is None or not op.output.requires_grad:
                continue
            for t, gi in zip(op.inputs, op.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=t.dtype)
                if id(t) in produced:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi.copy() if prev is None else prev + gi
                else:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi


# -- initialization -------------------------------------------------------

def uniform_fan_in(rng: np.random.Generator, shape: Sequence[int], fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(dtype)


# -- optimizers -----------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "rmsprop"
    lr: float = 4e-4
    alpha: float = 0.99
    eps: float = 1e-8
    momentum: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rmsprop", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.momentum != 0.0:
            raise ValueError("momentum is not supported")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "alpha": self.alpha, "eps": self.eps,
                "momentum": self.momentum}


def optimizer_step(cfg: OptimizerConfig, state: dict, params: Mapping[str, Tensor],
                   grads: Mapping[str, np.ndarray] | None = None) -> None:
    """Update ``params`` in place; ``state`` holds RMSprop running averages."""
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        g = g.astype(p.dtype, copy=False)
        if cfg.kind == "sgd":
            p.data = p.data - p.dtype.type(cfg.lr) * g
            continue
        s = state.get(name)
        if s is None:
            s = np.zeros_like(p.data)
        elif s.shape != p.shape:
            raise ShapeMismatch(f"optimizer state for {name} has shape {s.shape}")
        alpha = p.dtype.type(cfg.alpha)
        s = alpha * s + (p.dtype.type(1) - alpha) * (g * g)
        state[name] = s
        p.data = p.data - p.dtype.type(cfg.lr) * g / (np.sqrt(s) + p.dtype.type(cfg.eps))


# -- gradient checking ----------------------------------------------------

def grad_check(loss_fn: Callable[[Tape], Tensor], params: Mapping[str, Tensor], step: float = 1e-5,
               max_coords: int | None = None, seed: int = 0, per_tensor: int | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` builds the loss on a fresh tape from ``params`` (which should
    be float64).  When ``max_coords`` is set and the model is larger, a
    seeded random subset of coordinates is checked; ``per_tensor`` instead
    caps the sample inside every parameter tensor so none is skipped.
    """
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    tape = Tape()
    loss = loss_fn(tape)
    tape.backward(loss)
    analytic = {k: p.grad.copy() for k, p in params.items()}

    rng = np.random.default_rng(seed)
    coords = []
    for k, p in params.items():
        idx = np.arange(p.data.size)
        if per_tensor is not None and p.data.size > per_tensor:
            idx = np.sort(rng.choice(p.data.size, size=per_tensor, replace=False))
        coords += [(k, int(i)) for i in idx]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.sort(rng.choice(len(coords), size=max_coords, replace=False))
        coords = [coords[i] for i in pick]

    worst = 0.0
    for k, i in coords:
        flat = params[k].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn(Tape()).item()
        flat[i] = orig - step
        down = loss_fn(Tape()).item()
        flat[i] = orig
        numeric = (up - down) / (2 * step)
        a = float(analytic[k].reshape(-1)[i])
        denom = max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, abs(a - numeric) / denom)
    return worst


# -- parameter snapshots ----------------------------------------------------

_MAGIC = b"SCEP"


def save_params(path: Path, params: Mapping[str, Tensor], meta: dict | None = None) -> None:
    """Flat little-endian float32 array preceded by a JSON header."""
    layers = []
    offset = 0
    for name, p in params.items():
        layers.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.data.size
    header = dict(meta or {})
    header["layers"] = layers
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_params(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a parameter snapshot")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + n].decode("utf-8"))
    flat = np.frombuffer(raw[8 + n:], dtype="<f4")
    out = {}
    for layer in header["layers"]:
        size = int(np.prod(layer["shape"], dtype=np.int64))
        out[layer["name"]] = flat[layer["offset"]:layer["offset"] + size].reshape(layer["shape"]).copy()
    return out, header


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
