"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a backward closure on the result,
so the implicit tape is the operation graph itself. ``Tensor.backward()``
walks that graph once in reverse topological order and accumulates exact
analytic gradients into every tensor that requires them.

Broadcasting is deliberately restricted to scalar-vs-tensor and
equal-shape operands; anything wider must be expressed through matmul.
"""

import numpy as np

from .errors import ContractError, DimensionError, DomainError


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    def __init__(self, data, requires_grad=False, _children=(), _op="leaf"):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = tuple(_children)
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            # copy: g may alias another node's gradient buffer or a view
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def detach(self):
        return Tensor(self.data.copy())

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _lift(value):
        return value if isinstance(value, Tensor) else Tensor(value)

    def _child(self, data, children, op):
        needs = any(c.requires_grad for c in children)
        out = Tensor(data, requires_grad=needs,
                     _children=tuple(c for c in children if c.requires_grad) if needs else (),
                     _op=op)
        return out

    # -- elementwise operations ----------------------------------------

    def _binary_guard(self, other, op):
        a, b = self.data, other.data
        if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
            raise DimensionError(
                f"{op}: shapes {a.shape} and {b.shape} are neither equal nor scalar")

    def __add__(self, other):
        other = Tensor._lift(other)
        self._binary_guard(other, "add")
        out = self._child(self.data + other.data, (self, other), "add")

        def _backward():
            if self.requires_grad:
                self._accumulate(_reduce_to(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_reduce_to(out.grad, other.shape))
        out._backward = _backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._lift(other)
        self._binary_guard(other, "sub")
        out = self._child(self.data - other.data, (self, other), "sub")

        def _backward():
            if self.requires_grad:
                self._accumulate(_reduce_to(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_reduce_to(-out.grad, other.shape))
        out._backward = _backward
        return out

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)
        self._binary_guard(other, "mul")
        out = self._child(self.data * other.data, (self, other), "mul")

        def _backward():
            if self.requires_grad:
                self._accumulate(_reduce_to(other.data * out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_reduce_to(self.data * out.grad, other.shape))
        out._backward = _backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = self._child(-self.data, (self,), "neg")

        def _backward():
            if self.requires_grad:
                self._accumulate(-out.grad)
        out._backward = _backward
        return out

    def exp(self):
        y = np.exp(self.data)
        out = self._child(y, (self,), "exp")

        def _backward():
            if self.requires_grad:
                self._accumulate(y * out.grad)
        out._backward = _backward
        return out

    def log(self):
        if np.any(self.data <= 0.0):
            raise DomainError("log: input must be strictly positive")
        out = self._child(np.log(self.data), (self,), "log")

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad / self.data)
        out._backward = _backward
        return out

    def relu(self):
        out = self._child(np.maximum(self.data, 0.0), (self,), "relu")

        def _backward():
            if self.requires_grad:
                self._accumulate((self.data > 0.0) * out.grad)
        out._backward = _backward
        return out

    def clamp(self, lo=None, hi=None):
        """Clip to [lo, hi]; gradient passes through the interior only."""
        y = np.clip(self.data, lo, hi)
        out = self._child(y, (self,), "clamp")
        inside = np.ones_like(self.data, dtype=bool)
        if lo is not None:
            inside &= self.data > lo
        if hi is not None:
            inside &= self.data < hi

        def _backward():
            if self.requires_grad:
                self._accumulate(inside * out.grad)
        out._backward = _backward
        return out

    # -- linear algebra ---------------------------------------------------

    def matmul(self, other):
        other = Tensor._lift(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError(f"matmul: expects rank-2 operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
        out = self._child(a @ b, (self, other), "matmul")

        def _backward():
            g = out.grad
            if self.requires_grad:
                self._accumulate(g @ b.T)
            if other.requires_grad:
                other._accumulate(a.T @ g)
        out._backward = _backward
        return out

    __matmul__ = matmul

    # -- reductions and shape -----------------------------------------------

    def sum(self, axis=None):
        if axis is not None and not (-self.ndim <= axis < self.ndim):
            raise DimensionError(f"sum: axis {axis} out of range for rank {self.ndim}")
        out = self._child(self.data.sum(axis=axis), (self,), "sum")

        def _backward():
            if not self.requires_grad:
                return
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())
        out._backward = _backward
        return out

    def mean(self, axis=None):
        if axis is not None and not (-self.ndim <= axis < self.ndim):
            raise DimensionError(f"mean: axis {axis} out of range for rank {self.ndim}")
        n = self.size if axis is None else self.shape[axis]
        out = self._child(self.data.mean(axis=axis), (self,), "mean")

        def _backward():
            if not self.requires_grad:
                return
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape) / n)
        out._backward = _backward
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self._child(self.data.reshape(shape), (self,), "reshape")

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.shape))
        out._backward = _backward
        return out

    def transpose(self):
        if self.ndim != 2:
            raise DimensionError(f"transpose: expects rank-2, got {self.shape}")
        out = self._child(self.data.T, (self,), "transpose")

        def _backward():
            if self.requires_grad:
                self._accumulate(out.grad.T)
        out._backward = _backward
        return out

    # -- backward pass ------------------------------------------------------

    def backward(self):
        if self.ndim != 0:
            raise ContractError(f"backward: loss must be a scalar, got shape {self.shape}")
        order = ancestors(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            # a None gradient means every downstream contribution was zero
            # (e.g. a mixture component no row picked); nothing to propagate
            if node._backward is not None and node.grad is not None:
                node._backward()
        for node in order:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)


def ancestors(root):
    """All tensors reachable from ``root``, in topological order (inputs first)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._prev:
            if id(child) not in visited:
                stack.append((child, False))
    return order


def _reduce_to(grad, shape):
    """Sum a gradient down to ``shape`` (handles the scalar-broadcast case)."""
    if grad.shape == shape:
        return grad
    # restricted broadcasting means the only mismatch is a scalar operand
    return grad.sum().reshape(shape)


# -- convolution -------------------------------------------------------------


def conv2d(x, kernels, stride=1):
    """Valid-padding cross-correlation of a [C,H,W] input with [O,C,kh,kw] kernels."""
    x = Tensor._lift(x)
    kernels = Tensor._lift(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise DimensionError(
            f"conv2d: expects input [C,H,W] and kernels [O,C,kh,kw], got {x.shape}, {kernels.shape}")
    if stride < 1:
        raise ContractError("conv2d: stride must be a positive integer")
    c, h, w = x.shape
    o, ck, kh, kw = kernels.shape
    if ck != c:
        raise DimensionError(f"conv2d: kernel channels {ck} != input channels {c}")
    if kh > h or kw > w:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1

    patches = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    patches = patches[:, ::stride, ::stride][:, :ho, :wo]
    y = np.einsum("cijhw,ochw->oij", patches, kernels.data)

    out = x._child(y, (x, kernels), "conv2d")

    def _backward():
        g = out.grad
        if kernels.requires_grad:
            kernels._accumulate(np.einsum("oij,cijhw->ochw", g, patches))
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    dx[:, i:i + ho * stride:stride, j:j + wo * stride:stride] += np.einsum(
                        "oij,oc->cij", g, kernels.data[:, :, i, j])
            x._accumulate(dx)
    out._backward = _backward
    return out


def conv_transpose2d(x, kernels, stride=1):
    """Transposed convolution: maps [C,Hi,Wi] with [C,O,kh,kw] kernels to
    [O,(Hi-1)*stride+kh,(Wi-1)*stride+kw], inverting conv2d geometry."""
    x = Tensor._lift(x)
    kernels = Tensor._lift(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise DimensionError(
            f"conv_transpose2d: expects input [C,H,W] and kernels [C,O,kh,kw], "
            f"got {x.shape}, {kernels.shape}")
    if stride < 1:
        raise ContractError("conv_transpose2d: stride must be a positive integer")
    c, hi, wi = x.shape
    ck, o, kh, kw = kernels.shape
    if ck != c:
        raise DimensionError(f"conv_transpose2d: kernel channels {ck} != input channels {c}")
    ho = (hi - 1) * stride + kh
    wo = (wi - 1) * stride + kw

    y = np.zeros((o, ho, wo))
    for i in range(kh):
        for j in range(kw):
            y[:, i:i + hi * stride:stride, j:j + wi * stride:stride] += np.einsum(
                "cij,co->oij", x.data, kernels.data[:, :, i, j])

    out = x._child(y, (x, kernels), "conv_transpose2d")

    def _backward():
        g = out.grad
        gpatch = np.lib.stride_tricks.sliding_window_view(g, (kh, kw), axis=(1, 2))
        gpatch = gpatch[:, ::stride, ::stride][:, :hi, :wi]
        if x.requires_grad:
            x._accumulate(np.einsum("oijhw,cohw->cij", gpatch, kernels.data))
        if kernels.requires_grad:
            kernels._accumulate(np.einsum("oijhw,cij->cohw", gpatch, x.data))
    out._backward = _backward
    return out


def concat_rows(parts):
    """Stack rank-2 tensors along axis 0; gradient slices back to each part."""
    parts = [Tensor._lift(p) for p in parts]
    if not parts:
        raise ContractError("concat_rows: needs at least one tensor")
    cols = parts[0].shape[-1]
    for p in parts:
        if p.ndim != 2 or p.shape[-1] != cols:
            raise DimensionError("concat_rows: all parts must be rank-2 with equal columns")
    data = np.concatenate([p.data for p in parts], axis=0)
    needs = any(p.requires_grad for p in parts)
    out = Tensor(data, requires_grad=needs,
                 _children=tuple(p for p in parts if p.requires_grad) if needs else (),
                 _op="concat_rows")

    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def _backward():
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(out.grad[a:b])
    out._backward = _backward
    return out


def elementwise(kind, a, b=None):
    """Dispatch by op-kind name; ``scale`` multiplies by the python float ``b``."""
    a = Tensor._lift(a)
    unary = {"exp": a.exp, "log": a.log, "relu": a.relu, "neg": a.__neg__}
    if kind in unary:
        if b is not None:
            raise ContractError(f"elementwise: {kind} takes one operand")
        return unary[kind]()
    if kind == "scale":
        return a * float(b)
    binary = {"add": a.__add__, "sub": a.__sub__, "mul": a.__mul__}
    if kind not in binary:
        raise ContractError(f"elementwise: unknown op-kind {kind!r}")
    if b is None:
        raise ContractError(f"elementwise: {kind} takes two operands")
    return binary[kind](b)


class Adam:
    """Adam with bias correction; moment state persists across steps."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                raise ContractError("adam: parameter has no gradient; run backward first")
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
