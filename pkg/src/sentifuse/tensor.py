"""Dense float64 tensors with reverse-mode gradient accumulation.

A ``Tensor`` wraps a numpy array plus an optional same-shape gradient buffer.
Differentiable operations executed inside a ``with Graph() as g:`` block
append an adjoint closure to the graph's tape; ``backward(g, loss)`` seeds
d(loss)/d(loss) = 1 and replays the closures in exact reverse execution
order, so two replays of the same graph produce bit-identical gradients.
Outside a graph, every operation is forward-only.

64-bit floats throughout: the gradient-check tolerances used across the
package (1e-5 .. 1e-6 relative) are not reachable in single precision.
"""

import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Misuse of a Graph (e.g. backward from a non-scalar)."""


class Tensor:
    """Dense real array with an optional gradient accumulator.

    ``data`` is always float64. When ``requires_grad`` is set, ``grad`` is a
    zero-initialized array of the same shape; it stays all-zero until some
    backward pass deposits into it, so a parameter that never participates
    in a loss reports an (correct) all-zero gradient.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}{flag})"

    # arithmetic sugar; every overload routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Ordered tape of executed operations, replayable in reverse.

    Usable as a context manager; graphs may nest (innermost active). A graph
    and the gradients it populates belong to a single thread.
    """

    def __init__(self):
        self._tape = []
        self._tensors = []
        self._seen = set()

    def __enter__(self):
        _push(self)
        return self

    def __exit__(self, *exc):
        _pop(self)
        return False

    def __len__(self):
        return len(self._tape)

    def record(self, name, tensors, backward_fn):
        self._tape.append((name, backward_fn))
        for t in tensors:
            if id(t) not in self._seen:
                self._seen.add(id(t))
                self._tensors.append(t)

    def zero_grads(self):
        """Reset the gradient of every tensor touched by this graph."""
        for t in self._tensors:
            t.zero_grad()


_local = threading.local()


def _stack():
    if not hasattr(_local, "graphs"):
        _local.graphs = []
    return _local.graphs


def _push(g):
    _stack().append(g)


def _pop(g):
    top = _stack().pop()
    if top is not g:
        raise GraphError("graph contexts exited out of order")


def active_graph():
    """The innermost active Graph on this thread, or None."""
    s = _stack()
    return s[-1] if s else None


def backward(g: Graph, loss: Tensor):
    """Populate grads with d(loss)/d(tensor) for everything recorded on g.

    ``loss`` must be a scalar produced through ``g``. Gradients accumulate:
    call ``g.zero_grads()`` first to rerun a replay from scratch.
    """
    if loss.data.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad (was it computed inside the graph?)")
    loss.grad += 1.0
    for _name, fn in reversed(g._tape):
        fn()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(name, data, inputs, backward_builder) -> Tensor:
    """Create the output tensor of a differentiable op and record its adjoint.

    ``backward_builder(out)`` must return a zero-argument closure that adds
    this op's contributions into ``inp.grad`` for every input that requires
    grad, reading ``out.grad``. Recording happens only when a graph is active
    and some input requires grad; otherwise the op is forward-only.
    """
    g = active_graph()
    needs = g is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        g.record(name, (*inputs, out), backward_builder(out))
    return out


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a, b) -> Tensor:
    """Elementwise sum; also supports adding a length-d vector to every row
    of an [m, d] matrix (bias broadcast), and Tensor + python scalar."""
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = as_tensor(a)
        bval = float(b)

        def build(out):
            def bwd():
                if a.requires_grad:
                    a.grad += out.grad
            return bwd

        return make_op("add_const", a.data + bval, (a,), build)

    a, b = as_tensor(a), as_tensor(b)
    row_broadcast = a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]
    if not row_broadcast and a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not match")

    def build(out):
        def bwd():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad.sum(axis=0) if row_broadcast else out.grad
        return bwd

    return make_op("add", a.data + b.data, (a, b), build)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not match")

    def build(out):
        def bwd():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad -= out.grad
        return bwd

    return make_op("sub", a.data - b.data, (a, b), build)


def mul(a, b) -> Tensor:
    """Elementwise product of same-shape tensors, or Tensor * python scalar."""
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return scale(b, float(a))
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not match")

    def build(out):
        def bwd():
            if a.requires_grad:
                a.grad += b.data * out.grad
            if b.requires_grad:
                b.grad += a.data * out.grad
        return bwd

    return make_op("mul", a.data * b.data, (a, b), build)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def build(out):
        def bwd():
            if a.requires_grad:
                a.grad += c * out.grad
        return bwd

    return make_op("scale", a.data * c, (a,), build)


def matmul(a, b) -> Tensor:
    """Matrix product for (m,k)@(k,n), (k,)@(k,n) and (m,k)@(k,) shapes."""
    a, b = as_tensor(a), as_tensor(b)
    ka = a.shape[-1] if a.data.ndim >= 1 else None
    kb = b.shape[0] if b.data.ndim >= 1 else None
    if a.data.ndim == 0 or b.data.ndim == 0 or a.data.ndim > 2 or b.data.ndim > 2 or ka != kb:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def build(out):
        def bwd():
            g = out.grad
            if a.data.ndim == 2 and b.data.ndim == 2:
                if a.requires_grad:
                    a.grad += g @ b.data.T
                if b.requires_grad:
                    b.grad += a.data.T @ g
            elif a.data.ndim == 1:  # (k,)@(k,n) -> (n,)
                if a.requires_grad:
                    a.grad += b.data @ g
                if b.requires_grad:
                    b.grad += np.outer(a.data, g)
            else:  # (m,k)@(k,) -> (m,)
                if a.requires_grad:
                    a.grad += np.outer(g, b.data)
                if b.requires_grad:
                    b.grad += a.data.T @ g
        return bwd

    return make_op("matmul", a.data @ b.data, (a, b), build)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {x.shape}")

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad += out.grad.T
        return bwd

    return make_op("transpose", x.data.T.copy(), (x,), build)


def tanh_act(x) -> Tensor:
    x = as_tensor(x)

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad += (1.0 - out.data * out.data) * out.grad
        return bwd

    return make_op("tanh", np.tanh(x.data), (x,), build)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    # split by sign to avoid overflow in exp
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad += out.data * (1.0 - out.data) * out.grad
        return bwd

    return make_op("sigmoid", s, (x,), build)


def softmax(x) -> Tensor:
    """Softmax of a 1-D tensor, computed with max-subtraction."""
    x = as_tensor(x)
    if x.data.ndim != 1 or x.size == 0:
        raise ShapeError(f"softmax needs a non-empty 1-D tensor, got shape {x.shape}")
    e = np.exp(x.data - x.data.max())
    p = e / e.sum()

    def build(out):
        def bwd():
            if x.requires_grad:
                g = out.grad
                x.grad += out.data * (g - np.dot(g, out.data))
        return bwd

    return make_op("softmax", p, (x,), build)


def l2_norm_sq(x) -> Tensor:
    """Sum of squared entries, as a scalar tensor."""
    x = as_tensor(x)

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad += 2.0 * x.data * out.grad
        return bwd

    return make_op("l2_norm_sq", np.float64(np.sum(x.data * x.data)), (x,), build)


def unit_norm(x, eps: float = 1e-12) -> Tensor:
    """x / ||x||_2, skipping the division when ||x|| < eps (degenerate guard)."""
    x = as_tensor(x)
    r = float(np.linalg.norm(x.data))
    if r < eps:
        def build_id(out):
            def bwd():
                if x.requires_grad:
                    x.grad += out.grad
            return bwd

        return make_op("unit_norm(id)", x.data.copy(), (x,), build_id)

    def build(out):
        def bwd():
            if x.requires_grad:
                g = out.grad
                x.grad += (g - out.data * np.dot(out.data, g)) / r
        return bwd

    return make_op("unit_norm", x.data / r, (x,), build)


def concat(parts) -> Tensor:
    """Concatenate 1-D tensors into one vector."""
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat expects 1-D parts, got shape {p.shape}")
    sizes = [p.size for p in parts]
    offsets = np.cumsum([0] + sizes)

    def build(out):
        def bwd():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p.grad += out.grad[lo:hi]
        return bwd

    return make_op("concat", np.concatenate([p.data for p in parts]), tuple(parts), build)


def slice_vec(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 1:
        raise ShapeError(f"slice_vec expects a 1-D tensor, got shape {x.shape}")

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad[start:stop] += out.grad
        return bwd

    return make_op("slice", x.data[start:stop].copy(), (x,), build)


def pick(x, index: int) -> Tensor:
    """Scalar entry x[index] of a 1-D tensor."""
    x = as_tensor(x)

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad[index] += out.grad
        return bwd

    return make_op("pick", np.float64(x.data[index]), (x,), build)


def log_clamped(x, floor: float = 1e-15) -> Tensor:
    """log(max(x, floor)); gradient is zero wherever the clamp is active."""
    x = as_tensor(x)
    clamped = np.maximum(x.data, floor)

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad += np.where(x.data > floor, out.grad / clamped, 0.0)
        return bwd

    return make_op("log", np.log(clamped), (x,), build)


# ---------------------------------------------------------------------------
# sequence ops ([m, d] matrices, time-major)


def hstack(a, b) -> Tensor:
    """Concatenate two [m, p]/[m, q] matrices along the feature axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"hstack: incompatible shapes {a.shape} and {b.shape}")
    p = a.shape[1]

    def build(out):
        def bwd():
            if a.requires_grad:
                a.grad += out.grad[:, :p]
            if b.requires_grad:
                b.grad += out.grad[:, p:]
        return bwd

    return make_op("hstack", np.hstack([a.data, b.data]), (a, b), build)


def reverse_rows(x) -> Tensor:
    x = as_tensor(x)

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad += out.grad[::-1]
        return bwd

    return make_op("reverse_rows", x.data[::-1].copy(), (x,), build)


def pad_rows(x, total: int) -> Tensor:
    """Zero-pad an [m, d] matrix with extra rows up to ``total`` rows."""
    x = as_tensor(x)
    m, d = x.shape
    if total < m:
        raise ShapeError(f"pad_rows: target {total} smaller than current {m}")
    padded = np.zeros((total, d))
    padded[:m] = x.data

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad += out.grad[:m]
        return bwd

    return make_op("pad_rows", padded, (x,), build)


def max_over_rows(x) -> Tensor:
    """Columnwise maximum of an [m, c] matrix (max-over-time pooling)."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"max_over_rows needs a non-empty 2-D tensor, got {x.shape}")
    arg = np.argmax(x.data, axis=0)

    def build(out):
        def bwd():
            if x.requires_grad:
                x.grad[arg, np.arange(x.shape[1])] += out.grad
        return bwd

    return make_op("max_over_rows", x.data[arg, np.arange(x.shape[1])], (x,), build)


def windows(x, width: int) -> Tensor:
    """Stack the k-row sliding windows of an [m, n] matrix as an
    [m-k+1, k*n] matrix (valid positions, stride 1)."""
    x = as_tensor(x)
    m, n = x.shape
    if width < 1 or width > m:
        raise ShapeError(f"windows: width {width} invalid for {m} rows")
    count = m - width + 1
    data = np.empty((count, width * n))
    for i in range(count):
        data[i] = x.data[i:i + width].ravel()

    def build(out):
        def bwd():
            if x.requires_grad:
                for i in range(count):
                    x.grad[i:i + width] += out.grad[i].reshape(width, n)
        return bwd

    return make_op("windows", data, (x,), build)
