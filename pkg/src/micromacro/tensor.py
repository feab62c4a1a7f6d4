"""Dense reverse-mode automatic differentiation on numpy arrays.

Graphs are built eagerly (define-by-run): every operation computes its value
immediately and records the parents needed for the reverse pass.  Each
primitive is an :class:`Op` subclass with a ``forward`` and ``backward``
static method, so adjoint rules can be inspected (or patched in tests).

All values are float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

LEAKY_SLOPE = 0.01


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class Node:
    """A value in an expression graph.

    ``value`` is the forward result; ``grad`` is filled in by
    :func:`reverse_grad`.  Leaves have no ``op``.
    """

    __slots__ = ("value", "grad", "parents", "op", "ctx", "name", "requires_grad")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), op=None, ctx=None, name=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple = tuple(parents)
        self.op = op
        self.ctx = ctx
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = self.op.__name__ if self.op is not None else "leaf"
        return f"Node({label}, shape={self.shape})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def leaf(value, name=None, requires_grad=True) -> Node:
    """A trainable input."""
    return Node(np.array(value, dtype=np.float64), name=name, requires_grad=requires_grad)


def constant(value) -> Node:
    return Node(value, requires_grad=False)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


class Op:
    """Base class for primitives.

    ``forward(*values, **kwargs)`` returns ``(out, ctx)``;
    ``backward(ctx, grad_out)`` returns one gradient per input (``None`` for
    inputs that need none).
    """

    @staticmethod
    def forward(*args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    @staticmethod
    def backward(ctx, g):  # pragma: no cover - abstract
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Node:
        nodes = [as_node(x) for x in inputs]
        out, ctx = cls.forward(*[n.value for n in nodes], **kwargs)
        needs = any(n.requires_grad for n in nodes)
        if not needs:
            return Node(out)
        return Node(out, parents=nodes, op=cls, ctx=ctx, requires_grad=True)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(name, a.shape, b.shape) from None


class Add(Op):
    @staticmethod
    def forward(a, b):
        _broadcast_check("add", a, b)
        return a + b, (a.shape, b.shape)

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


class Sub(Op):
    @staticmethod
    def forward(a, b):
        _broadcast_check("subtract", a, b)
        return a - b, (a.shape, b.shape)

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)


class Mul(Op):
    @staticmethod
    def forward(a, b):
        _broadcast_check("multiply", a, b)
        return a * b, (a, b)

    @staticmethod
    def backward(ctx, g):
        a, b = ctx
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


class Scale(Op):
    @staticmethod
    def forward(a, c):
        return a * c, c

    @staticmethod
    def backward(ctx, g):
        return (g * ctx,)


class MatMul(Op):
    @staticmethod
    def forward(a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", a.shape, b.shape)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError("matmul", a.shape, b.shape) from None
        return a @ b, (a, b)

    @staticmethod
    def backward(ctx, g):
        a, b = ctx
        ga = g @ np.swapaxes(b, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: fold the batch axes into one GEMM
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Transpose(Op):
    @staticmethod
    def forward(a):
        if a.ndim < 2:
            raise ShapeError("transpose", a.shape)
        return np.swapaxes(a, -1, -2), None

    @staticmethod
    def backward(ctx, g):
        return (np.swapaxes(g, -1, -2),)


class Sum(Op):
    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return a.sum(axis=axis, keepdims=keepdims), (a.shape, axis, keepdims)

    @staticmethod
    def backward(ctx, g):
        shape, axis, keepdims = ctx
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % len(shape) for ax in axes)
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)


class Maximum(Op):
    """Elementwise max with a constant; subgradient 0 at the kink."""

    @staticmethod
    def forward(a, c=0.0):
        return np.maximum(a, c), a > c

    @staticmethod
    def backward(ctx, g):
        return (g * ctx,)


class Clip(Op):
    @staticmethod
    def forward(a, lo, hi):
        return np.clip(a, lo, hi), (a > lo) & (a < hi)

    @staticmethod
    def backward(ctx, g):
        return (g * ctx,)


class Abs(Op):
    @staticmethod
    def forward(a):
        return np.abs(a), np.sign(a)

    @staticmethod
    def backward(ctx, g):
        return (g * ctx,)


class Sigmoid(Op):
    @staticmethod
    def forward(a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        e = np.exp(a[~pos])
        out[~pos] = e / (1.0 + e)
        return out, out

    @staticmethod
    def backward(ctx, g):
        s = ctx
        return (g * s * (1.0 - s),)


class LeakyReLU(Op):
    @staticmethod
    def forward(a, slope=LEAKY_SLOPE):
        pos = a > 0
        return np.where(pos, a, slope * a), (pos, slope)

    @staticmethod
    def backward(ctx, g):
        pos, slope = ctx
        return (np.where(pos, g, slope * g),)


class Exp(Op):
    @staticmethod
    def forward(a):
        out = np.exp(a)
        return out, out

    @staticmethod
    def backward(ctx, g):
        return (g * ctx,)


class Log(Op):
    @staticmethod
    def forward(a):
        return np.log(a), a

    @staticmethod
    def backward(ctx, g):
        return (g / ctx,)


class Square(Op):
    @staticmethod
    def forward(a):
        return a * a, a

    @staticmethod
    def backward(ctx, g):
        return (2.0 * g * ctx,)


class Reciprocal(Op):
    @staticmethod
    def forward(a):
        out = 1.0 / a
        return out, out

    @staticmethod
    def backward(ctx, g):
        return (-g * ctx * ctx,)


class LayerNorm(Op):
    """Normalize over the last axis, then apply gain and bias."""

    @staticmethod
    def forward(x, gain, bias, eps=1e-12):
        if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
            raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        return xhat * gain + bias, (xhat, inv, gain)

    @staticmethod
    def backward(ctx, g):
        xhat, inv, gain = ctx
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gx_hat = g * gain
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias


class BroadcastRows(Op):
    """Repeat a length-d vector into an (n, d) matrix."""

    @staticmethod
    def forward(v, n):
        if v.ndim != 1:
            raise ShapeError("broadcast_rows", v.shape)
        return np.broadcast_to(v, (n, v.shape[0])).copy(), None

    @staticmethod
    def backward(ctx, g):
        return (g.sum(axis=0),)


class Diagonal(Op):
    @staticmethod
    def forward(a):
        if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
            raise ShapeError("diagonal", a.shape)
        return np.diagonal(a, axis1=-2, axis2=-1).copy(), a.shape

    @staticmethod
    def backward(ctx, g):
        out = np.zeros(ctx)
        n = ctx[-1]
        idx = np.arange(n)
        out[..., idx, idx] = g
        return (out,)


class MatrixPower(Op):
    """``a @ a @ ... @ a`` (s factors) over the last two axes."""

    @staticmethod
    def forward(a, s):
        if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
            raise ShapeError("matrix_power", a.shape)
        if s < 1:
            raise ValueError("matrix_power: exponent must be >= 1")
        powers = [np.broadcast_to(np.eye(a.shape[-1]), a.shape), a]
        for _ in range(s - 1):
            powers.append(powers[-1] @ a)
        return powers[s].copy(), (powers, s)

    @staticmethod
    def backward(ctx, g):
        powers, s = ctx
        total = np.zeros_like(powers[1])
        for k in range(s):
            left = np.swapaxes(powers[k], -1, -2)
            right = np.swapaxes(powers[s - 1 - k], -1, -2)
            total = total + left @ g @ right
        return (total,)


class Reshape(Op):
    @staticmethod
    def forward(a, shape):
        try:
            return a.reshape(shape), a.shape
        except ValueError:
            raise ShapeError("reshape", a.shape, shape) from None

    @staticmethod
    def backward(ctx, g):
        return (g.reshape(ctx),)


class TriuToSymmetric(Op):
    """Scatter a strict-upper-triangle vector into a symmetric matrix with zero diagonal."""

    @staticmethod
    def forward(v, n):
        m = n * (n - 1) // 2
        if v.shape[-1] != m:
            raise ShapeError("triu_to_symmetric", v.shape, (m,))
        iu = np.triu_indices(n, k=1)
        out = np.zeros(v.shape[:-1] + (n, n))
        out[..., iu[0], iu[1]] = v
        out[..., iu[1], iu[0]] = v
        return out, iu

    @staticmethod
    def backward(ctx, g):
        iu = ctx
        return (g[..., iu[0], iu[1]] + g[..., iu[1], iu[0]],)


PRIMITIVES = (
    Add, Sub, Mul, Scale, MatMul, Transpose, Sum, Maximum, Clip, Abs, Sigmoid,
    LeakyReLU, Exp, Log, Square, Reciprocal, LayerNorm, BroadcastRows, Diagonal,
    MatrixPower, Reshape, TriuToSymmetric,
)


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def scale(a, c: float):
    return Scale.apply(a, c=float(c))


def matmul(a, b):
    return MatMul.apply(a, b)


def transpose(a):
    return Transpose.apply(a)


def sum_(a, axis=None, keepdims=False):
    if isinstance(axis, list):
        axis = tuple(axis)
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    a = as_node(a)
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def maximum(a, c: float = 0.0):
    return Maximum.apply(a, c=float(c))


def clip(a, lo: float, hi: float):
    return Clip.apply(a, lo=float(lo), hi=float(hi))


def abs_(a):
    return Abs.apply(a)


def sigmoid(a):
    return Sigmoid.apply(a)


def leaky_relu(a, slope: float = LEAKY_SLOPE):
    return LeakyReLU.apply(a, slope=slope)


def exp(a):
    return Exp.apply(a)


def log(a):
    return Log.apply(a)


def square(a):
    return Square.apply(a)


def reciprocal(a):
    return Reciprocal.apply(a)


def layer_norm(x, gain, bias, eps: float = 1e-12):
    return LayerNorm.apply(x, gain, bias, eps=eps)


def broadcast_rows(v, n: int):
    return BroadcastRows.apply(v, n=int(n))


def diagonal(a):
    return Diagonal.apply(a)


def trace(a):
    return sum_(diagonal(a), axis=-1)


def matrix_power(a, s: int):
    return MatrixPower.apply(a, s=int(s))


def reshape(a, shape):
    return Reshape.apply(a, shape=tuple(shape))


def triu_to_symmetric(v, n: int):
    return TriuToSymmetric.apply(v, n=int(n))


# ---------------------------------------------------------------------------
# evaluation and gradients


def forward_eval(root: Node) -> np.ndarray:
    """Return the value of ``root``.

    Values are computed while the graph is built, so this only hands back
    the cached result.
    """
    return root.value


def _topological(root: Node) -> List[Node]:
    order: List[Node] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def reverse_grad(loss: Node, wrt: Optional[Iterable[Node]] = None) -> Dict[Node, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Returns a mapping from leaf node to gradient.  Leaves listed in ``wrt``
    that the loss does not depend on get a zero gradient.
    """
    if loss.value.size != 1:
        raise ValueError(f"reverse_grad: loss must be scalar, got shape {loss.shape}")
    order = _topological(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node.op is not None else grads.get(id(node))
        if g is None:
            continue
        node.grad = g
        if node.op is None:
            continue
        parent_grads = node.op.backward(node.ctx, g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out: Dict[Node, np.ndarray] = {}
    for node in order:
        if node.op is None and node.requires_grad:
            out[node] = node.grad if node.grad is not None else np.zeros_like(node.value)
    if wrt is not None:
        for w in wrt:
            if w not in out:
                w.grad = np.zeros_like(w.value)
                out[w] = w.grad
    return out


def finite_difference_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


_ADAM_CHUNK = 1 << 14


def _adam_update(p, g, m, v, b1, b2, step, inv_root2, eps):
    # Cache-sized chunks keep the dozen elementwise passes in L2; the flat
    # arrays are views, so updates land in the caller's buffers.
    tmp = np.empty(min(_ADAM_CHUNK, p.size))
    for lo in range(0, p.size, _ADAM_CHUNK):
        hi = min(lo + _ADAM_CHUNK, p.size)
        gs, ms, vs, t = g[lo:hi], m[lo:hi], v[lo:hi], tmp[: hi - lo]
        np.multiply(gs, 1.0 - b1, out=t)
        ms *= b1
        ms += t
        np.square(gs, out=t)
        t *= 1.0 - b2
        vs *= b2
        vs += t
        np.sqrt(vs, out=t)
        t *= inv_root2
        t += eps
        np.divide(ms, t, out=t)
        t *= step
        p[lo:hi] -= t


def adam_step(params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"adam_step[{name}]", params[name].shape, g.shape)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    step = state.lr / corr1
    root2 = math.sqrt(corr2)
    for name, g in grads.items():
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(params[name])
            state.second_moment[name] = np.zeros_like(params[name])
        if not params[name].flags.c_contiguous:
            params[name] = np.ascontiguousarray(params[name])
        _adam_update(params[name].reshape(-1), g.reshape(-1), m.reshape(-1),
                     state.second_moment[name].reshape(-1), b1, b2, step, 1.0 / root2, state.eps)
    return params, state


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * factor
    return total


# ---------------------------------------------------------------------------
# tensor files

MAGIC = b"MMTENSOR"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible tensor file."""


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named tensors.

    Layout: magic, version byte, 8-byte little-endian manifest length, UTF-8
    manifest (one ``name<TAB>d0,d1,...`` line per tensor), then the float64
    little-endian payloads in manifest order.
    """
    lines = []
    for name, arr in tensors.items():
        if any(c in name for c in "\t\n"):
            raise ValueError(f"invalid tensor name {name!r}")
        shape = ",".join(str(int(d)) for d in np.shape(arr))
        lines.append(f"{name}\t{shape}")
    manifest = "\n".join(lines).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = len(MAGIC)
    if blob[:head] != MAGIC:
        raise CheckpointError(f"{path}: bad magic string")
    if len(blob) < head + 9:
        raise CheckpointError(f"{path}: truncated header")
    version = blob[head]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (mlen,) = struct.unpack("<Q", blob[head + 1:head + 9])
    pos = head + 9
    if len(blob) < pos + mlen:
        raise CheckpointError(f"{path}: truncated manifest")
    manifest = blob[pos:pos + mlen].decode("utf-8")
    pos += mlen
    out: Dict[str, np.ndarray] = {}
    for line in manifest.split("\n") if manifest else []:
        name, shape_txt = line.split("\t")
        shape = tuple(int(d) for d in shape_txt.split(",")) if shape_txt else ()
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if len(blob) < pos + nbytes:
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        out[name] = np.frombuffer(blob[pos:pos + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
