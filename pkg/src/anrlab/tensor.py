"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

A ``GradTape`` is created per optimization step, parameters are attached with
``tape.watch(...)``, and ops whose operands carry the tape record themselves
onto it. ``tape.backward(loss)`` runs reverse accumulation and then releases
every tensor from the tape, so a tape is strictly single-use.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense n-d float64 array, optionally tracked by a gradient tape."""

    __slots__ = ("data", "grad", "tape", "tape_id")

    def __init__(self, data, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape: GradTape | None = tape
        self.tape_id: int | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """A tape-free tensor sharing this one's data buffer."""
        return Tensor(self.data)

    def __repr__(self):
        tag = " tracked" if self.tape is not None else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # arithmetic sugar; scalars mean python numbers or 0-d tensors
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, c):
        if not isinstance(c, (int, float)):
            raise TypeError("tensor division only by python scalars")
        return mul(self, 1.0 / c)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def max(self, axis=None):
        return tmax(self, axis)


class TapeNode:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class GradTape:
    """Append-only record of ops; backward traverses in reverse order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._watched: list[Tensor] = []
        self._consumed = False

    def watch(self, *tensors: Tensor):
        """Attach leaf tensors; clears any gradient left from a prior step."""
        if self._consumed:
            raise RuntimeError("tape already consumed by backward")
        for t in tensors:
            t.tape = self
            t.grad = None
            self._watched.append(t)

    def record(self, out: Tensor, parents: tuple, backward_fn):
        """Register a forward result and its backward rule.

        Public so composite ops (softmax, layernorm, l_softmax, custom test
        fixtures) can define fused backward rules through the same mechanism
        the primitives use.
        """
        if self._consumed:
            raise RuntimeError("tape already consumed by backward")
        out.tape = self
        out.tape_id = len(self.nodes)
        self.nodes.append(TapeNode(out, parents, backward_fn))

    def backward(self, loss: Tensor):
        if self._consumed:
            raise RuntimeError("tape already consumed by backward")
        if loss.tape is not self:
            raise RuntimeError("backward on a tensor not recorded on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is not None:
                node.backward(g)
        self._consumed = True
        # release: tensors revert to detached, grads stay readable
        for node in self.nodes:
            node.out.tape = None
            node.out.tape_id = None
        for t in self._watched:
            t.tape = None


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _joint_tape(*tensors) -> GradTape | None:
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise RuntimeError("operands belong to different tapes")
    if tape is not None and tape._consumed:
        raise RuntimeError("operand belongs to a consumed tape; detach or re-watch")
    return tape


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)
    tape = _joint_tape(a, b)
    if tape is not None:

        def backward(g, a=a, b=b, tape=tape):
            if a.tape is tape:
                _accum(a, g @ b.data.T)
            if b.tape is tape:
                _accum(b, a.data.T @ g)

        tape.record(out, (a, b), backward)
    return out


def transpose(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    if t.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {t.data.shape}")
    out = Tensor(np.ascontiguousarray(t.data.T))
    tape = _joint_tape(t)
    if tape is not None:

        def backward(g, t=t):
            _accum(t, g.T)

        tape.record(out, (t,), backward)
    return out


def _binary_shapes(a: Tensor, b: Tensor):
    # equal shapes, or one side is a scalar (0-d tensor)
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(f"elementwise: shape mismatch {a.data.shape} vs {b.data.shape}")


def _scalar_reduce(g: np.ndarray, t: Tensor) -> np.ndarray:
    # gradient for a 0-d operand broadcast against a full-shape result
    if t.data.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        out = Tensor(a.data + b)
        tape = _joint_tape(a)
        if tape is not None:
            tape.record(out, (a,), lambda g, a=a: _accum(a, g))
        return out
    if isinstance(a, (int, float)):
        return add(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = Tensor(a.data + b.data)
    tape = _joint_tape(a, b)
    if tape is not None:

        def backward(g, a=a, b=b, tape=tape):
            if a.tape is tape:
                _accum(a, _scalar_reduce(g, a))
            if b.tape is tape:
                _accum(b, _scalar_reduce(g, b))

        tape.record(out, (a, b), backward)
    return out


def sub(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        return add(a, -b)
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = Tensor(a.data - b.data)
    tape = _joint_tape(a, b)
    if tape is not None:

        def backward(g, a=a, b=b, tape=tape):
            if a.tape is tape:
                _accum(a, _scalar_reduce(g, a))
            if b.tape is tape:
                _accum(b, _scalar_reduce(-g, b))

        tape.record(out, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        out = Tensor(a.data * b)
        tape = _joint_tape(a)
        if tape is not None:
            tape.record(out, (a,), lambda g, a=a, b=b: _accum(a, g * b))
        return out
    if isinstance(a, (int, float)):
        return mul(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b)
    out = Tensor(a.data * b.data)
    tape = _joint_tape(a, b)
    if tape is not None:

        def backward(g, a=a, b=b, tape=tape):
            if a.tape is tape:
                _accum(a, _scalar_reduce(g * b.data, a))
            if b.tape is tape:
                _accum(b, _scalar_reduce(g * a.data, b))

        tape.record(out, (a, b), backward)
    return out


def scale(t: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    return mul(t, float(c))


def neg(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(-t.data)
    tape = _joint_tape(t)
    if tape is not None:
        tape.record(out, (t,), lambda g, t=t: _accum(t, -g))
    return out


def relu(t: Tensor) -> Tensor:
    """max(x, 0); subgradient at exactly 0 is 0."""
    t = _as_tensor(t)
    out = Tensor(np.maximum(t.data, 0.0))
    tape = _joint_tape(t)
    if tape is not None:
        mask = t.data > 0.0

        def backward(g, t=t, mask=mask):
            _accum(t, g * mask)

        tape.record(out, (t,), backward)
    return out


def sin(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(np.sin(t.data))
    tape = _joint_tape(t)
    if tape is not None:

        def backward(g, t=t):
            _accum(t, g * np.cos(t.data))

        tape.record(out, (t,), backward)
    return out


def exp(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(np.exp(t.data))
    tape = _joint_tape(t)
    if tape is not None:

        def backward(g, t=t, out=out):
            _accum(t, g * out.data)

        tape.record(out, (t,), backward)
    return out


def square(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(t.data * t.data)
    tape = _joint_tape(t)
    if tape is not None:

        def backward(g, t=t):
            _accum(t, g * (2.0 * t.data))

        tape.record(out, (t,), backward)
    return out


def add_row(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an (m, n) matrix."""
    x, v = _as_tensor(x), _as_tensor(v)
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"add_row: shapes {x.data.shape} and {v.data.shape}")
    out = Tensor(x.data + v.data[None, :])
    tape = _joint_tape(x, v)
    if tape is not None:

        def backward(g, x=x, v=v, tape=tape):
            if x.tape is tape:
                _accum(x, g)
            if v.tape is tape:
                _accum(v, g.sum(axis=0))

        tape.record(out, (x, v), backward)
    return out


def mul_row(x: Tensor, v: Tensor) -> Tensor:
    """Scale every row of an (m, n) matrix elementwise by a length-n vector."""
    x, v = _as_tensor(x), _as_tensor(v)
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"mul_row: shapes {x.data.shape} and {v.data.shape}")
    out = Tensor(x.data * v.data[None, :])
    tape = _joint_tape(x, v)
    if tape is not None:

        def backward(g, x=x, v=v, tape=tape):
            if x.tape is tape:
                _accum(x, g * v.data[None, :])
            if v.tape is tape:
                _accum(v, (g * x.data).sum(axis=0))

        tape.record(out, (x, v), backward)
    return out


def col_slice(x: Tensor, j0: int, j1: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= j0 < j1 <= x.data.shape[1]):
        raise ShapeError(f"col_slice[{j0}:{j1}] on shape {x.data.shape}")
    out = Tensor(np.ascontiguousarray(x.data[:, j0:j1]))
    tape = _joint_tape(x)
    if tape is not None:

        def backward(g, x=x, j0=j0, j1=j1):
            full = np.zeros_like(x.data)
            full[:, j0:j1] = g
            _accum(x, full)

        tape.record(out, (x,), backward)
    return out


def row_slice(x: Tensor, i0: int, i1: int) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2 or not (0 <= i0 < i1 <= x.data.shape[0]):
        raise ShapeError(f"row_slice[{i0}:{i1}] on shape {x.data.shape}")
    out = Tensor(np.ascontiguousarray(x.data[i0:i1, :]))
    tape = _joint_tape(x)
    if tape is not None:

        def backward(g, x=x, i0=i0, i1=i1):
            full = np.zeros_like(x.data)
            full[i0:i1, :] = g
            _accum(x, full)

        tape.record(out, (x,), backward)
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeError("concat_cols: row counts differ")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    tape = _joint_tape(*parts)
    if tape is not None:
        widths = [p.data.shape[1] for p in parts]

        def backward(g, parts=parts, widths=widths, tape=tape):
            j = 0
            for p, w in zip(parts, widths):
                if p.tape is tape:
                    _accum(p, g[:, j : j + w])
                j += w

        tape.record(out, tuple(parts), backward)
    return out


def concat_rows(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    cols = parts[0].data.shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != cols:
            raise ShapeError("concat_rows: column counts differ")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    tape = _joint_tape(*parts)
    if tape is not None:
        heights = [p.data.shape[0] for p in parts]

        def backward(g, parts=parts, heights=heights, tape=tape):
            i = 0
            for p, h in zip(parts, heights):
                if p.tape is tape:
                    _accum(p, g[i : i + h, :])
                i += h

        tape.record(out, tuple(parts), backward)
    return out


def _check_axis(t: Tensor, axis):
    if axis is not None and not (-t.data.ndim <= axis < t.data.ndim):
        raise ShapeError(f"axis {axis} out of range for shape {t.data.shape}")


def tsum(t: Tensor, axis=None) -> Tensor:
    t = _as_tensor(t)
    _check_axis(t, axis)
    out = Tensor(t.data.sum(axis=axis))
    tape = _joint_tape(t)
    if tape is not None:

        def backward(g, t=t, axis=axis):
            if axis is None:
                _accum(t, np.broadcast_to(g, t.data.shape))
            else:
                _accum(t, np.broadcast_to(np.expand_dims(g, axis), t.data.shape))

        tape.record(out, (t,), backward)
    return out


def tmean(t: Tensor, axis=None) -> Tensor:
    t = _as_tensor(t)
    _check_axis(t, axis)
    out = Tensor(t.data.mean(axis=axis))
    count = t.data.size if axis is None else t.data.shape[axis]
    tape = _joint_tape(t)
    if tape is not None:

        def backward(g, t=t, axis=axis, count=count):
            if axis is None:
                _accum(t, np.broadcast_to(g / count, t.data.shape))
            else:
                _accum(t, np.broadcast_to(np.expand_dims(g / count, axis), t.data.shape))

        tape.record(out, (t,), backward)
    return out


def tmax(t: Tensor, axis=None) -> Tensor:
    """Max reduction; ties route the gradient to the lowest index."""
    t = _as_tensor(t)
    _check_axis(t, axis)
    out = Tensor(t.data.max(axis=axis))
    tape = _joint_tape(t)
    if tape is not None:

        def backward(g, t=t, axis=axis):
            full = np.zeros_like(t.data)
            if axis is None:
                full[np.unravel_index(np.argmax(t.data), t.data.shape)] = g
            else:
                idx = np.expand_dims(np.argmax(t.data, axis=axis), axis)
                np.put_along_axis(full, idx, np.expand_dims(g, axis), axis)
            _accum(t, full)

        tape.record(out, (t,), backward)
    return out
