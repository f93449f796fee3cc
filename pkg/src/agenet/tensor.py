"""N-dimensional tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and, when ``requires_grad`` is set anywhere
upstream, records the operation graph so that ``backward()`` on a scalar
loss fills the ``grad`` field of every reachable tensor. Broadcasting is
supported for the scalar-with-tensor and bias-add patterns (leading axes
of size 1); anything else raises ShapeError.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """Backward pass requested on something that is not a recorded scalar."""


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()
        self.name = name

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    # -- basic protocol ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    # -- graph plumbing -------------------------------------------------------

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Reverse-mode sweep from a scalar; fills .grad on reachable tensors."""
        if self.data.size != 1:
            raise TapeError(f"backward requires a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -----------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add,
                       lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract,
                       lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _to_tensor(other, self.dtype) - self

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda g, a, b: (g * b.data, g * a.data))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide,
                       lambda g, a, b: (g / b.data, -g * a.data / (b.data * b.data)))

    def __rtruediv__(self, other):
        return _to_tensor(other, self.dtype) / self

    def __neg__(self):
        return _unary(self, np.negative, lambda g, x: -g)

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ShapeError("only scalar exponents are supported")
        return _unary(self, lambda x: x ** exponent,
                      lambda g, x: g * exponent * x ** (exponent - 1))

    def maximum(self, other):
        def back(g, a, b):
            mask = a.data >= b.data  # ties route to the first operand
            return g * mask, g * ~mask
        return _binary(self, other, np.maximum, back)

    def exp(self):
        return _unary(self, np.exp, lambda g, x: g * np.exp(x))

    def log(self):
        return _unary(self, np.log, lambda g, x: g / x)

    def sqrt(self):
        return _unary(self, np.sqrt, lambda g, x: g * 0.5 / np.sqrt(x))

    def abs(self):
        return _unary(self, np.abs, lambda g, x: g * np.sign(x))

    # -- reductions and reshapes ----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def back(g, x):
            if axis is None:
                return np.broadcast_to(g, x.shape).copy()
            if not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, x.shape).copy()
        return _unary(self, lambda x: np.sum(x, axis=axis, keepdims=keepdims), back)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return _unary(self, lambda x: x.reshape(shape),
                      lambda g, x: g.reshape(old))

    def flatten_batch(self):
        """Collapse all axes after the first (batch) axis."""
        n = self.data.shape[0]
        return self.reshape(n, -1)

    # -- linear algebra ---------------------------------------------------------

    def __matmul__(self, other):
        other = _to_tensor(other, self.dtype)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")

        def back(g, x, y):
            return g @ y.data.T, x.data.T @ g
        return _binary(self, other, np.matmul, back, check_broadcast=False)


def _to_tensor(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _broadcast_ok(sa, sb):
    """Scalar or leading-axes-of-size-1 broadcasting only."""
    if sa == sb or len(sa) == 0 or len(sb) == 0:
        return True
    short, long = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    padded = (1,) * (len(long) - len(short)) + tuple(short)
    return all(p == q or p == 1 or q == 1 for p, q in zip(padded, long))


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _unary(a, fwd, bwd):
    out = Tensor(fwd(a.data))
    if a.requires_grad or a._parents:
        out.requires_grad = a.requires_grad
        out._parents = (a,)

        def _backward(g):
            a._accumulate(bwd(g, a.data))
        out._backward = _backward
    return out


def _binary(a, b, fwd, bwd, check_broadcast=True):
    b = _to_tensor(b, a.dtype if isinstance(a, Tensor) else None)
    a = _to_tensor(a, b.dtype)
    if check_broadcast and not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast")
    out = Tensor(fwd(a.data, b.data))
    track_a = a.requires_grad or a._parents
    track_b = b.requires_grad or b._parents
    if track_a or track_b:
        out.requires_grad = a.requires_grad or b.requires_grad
        out._parents = (a, b)

        def _backward(g):
            ga, gb = bwd(g, a, b)
            if track_a:
                a._accumulate(_unbroadcast(np.asarray(ga, dtype=a.dtype), a.shape))
            if track_b:
                b._accumulate(_unbroadcast(np.asarray(gb, dtype=b.dtype), b.shape))
        out._backward = _backward
    return out


def _custom(parents, out_data, backward_fn):
    """Build a graph node with a hand-written backward rule.

    ``backward_fn(g)`` returns one gradient array (or None) per parent.
    """
    out = Tensor(out_data)
    tracked = [p for p in parents if p.requires_grad or p._parents]
    if tracked:
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)

        def _backward(g):
            grads = backward_fn(g)
            for parent, grad in zip(parents, grads):
                if grad is not None and (parent.requires_grad or parent._parents):
                    parent._accumulate(grad.astype(parent.dtype, copy=False))
        out._backward = _backward
    return out


# -- spec-level op surface ------------------------------------------------------

_ELEMENTWISE_BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "max": lambda a, b: a.maximum(b),
}
_ELEMENTWISE_UNARY = {
    "exp": lambda a: a.exp(),
    "log": lambda a: a.log(),
    "abs": lambda a: a.abs(),
    "neg": lambda a: -a,
}


def elementwise(op_kind, a, b=None):
    """Dispatch table over the elementwise op vocabulary."""
    if op_kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    if op_kind in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[op_kind](a)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def matmul(a, b):
    return a @ b


# -- 2-D convolution --------------------------------------------------------------


def _pad_amount(size, k, padding):
    if padding == "same":
        total = k - 1
        return total // 2, total - total // 2
    if padding == "valid":
        return 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def _extract_patches(x, k, stride):
    # x: (N, Hp, Wp, C) -> (N, Ho, Wo, k, k, C)
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def _scatter_patches(dpatches, x_shape, k, stride):
    # inverse of _extract_patches for gradient flow
    dx = np.zeros(x_shape, dtype=dpatches.dtype)
    ho, wo = dpatches.shape[1], dpatches.shape[2]
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho * stride:stride, j:j + wo * stride:stride, :] += \
                dpatches[:, :, :, i, j, :]
    return dx


def conv2d(x, kernels, bias=None, padding="same", stride=1):
    """2-D convolution, channel-last.

    x: Tensor (H, W, Cin) or (N, H, W, Cin); kernels: (k, k, Cin, Cout);
    bias: (Cout,) or None. Stride applies to both spatial axes.
    """
    single = x.data.ndim == 3
    xb = x.reshape((1,) + x.shape) if single else x
    k, k2, cin, cout = kernels.shape
    if k != k2:
        raise ShapeError(f"kernels must be square, got {kernels.shape}")
    n, h, w, c = xb.shape
    if c != cin:
        raise ShapeError(f"input channels {c} != kernel channels {cin}")
    pt, pb = _pad_amount(h, k, padding)
    pl, pr = _pad_amount(w, k, padding)
    if k > h + pt + pb or k > w + pl + pr:
        raise ShapeError(f"kernel {k}x{k} larger than padded input {h}x{w} ({padding})")

    xp = np.pad(xb.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    patches = _extract_patches(xp, k, stride)
    ho, wo = patches.shape[1], patches.shape[2]
    cols = patches.reshape(n * ho * wo, k * k * cin)
    wmat = kernels.data.reshape(k * k * cin, cout)
    out_data = (cols @ wmat).reshape(n, ho, wo, cout)
    if bias is not None:
        out_data = out_data + bias.data

    parents = [xb, kernels] + ([bias] if bias is not None else [])

    def backward_fn(g):
        gflat = g.reshape(n * ho * wo, cout)
        dw = (cols.T @ gflat).reshape(kernels.shape)
        dcols = gflat @ wmat.T
        dpatches = dcols.reshape(n, ho, wo, k, k, cin)
        dxp = _scatter_patches(dpatches, xp.shape, k, stride)
        dx = dxp[:, pt:pt + h, pl:pl + w, :]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    out = _custom(parents, out_data, backward_fn)
    if single:
        return out.reshape(out.shape[1:])
    return out


def depthwise_conv2d(x, kernel, padding="same", stride=1):
    """Per-channel 3x3-style convolution; kernel shape (k, k, C)."""
    single = x.data.ndim == 3
    xb = x.reshape((1,) + x.shape) if single else x
    k, k2, c = kernel.shape
    if k != k2:
        raise ShapeError(f"depthwise kernel must be square, got {kernel.shape}")
    n, h, w, cin = xb.shape
    if cin != c:
        raise ShapeError(f"input channels {cin} != depthwise channels {c}")
    pt, pb = _pad_amount(h, k, padding)
    pl, pr = _pad_amount(w, k, padding)
    xp = np.pad(xb.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    patches = _extract_patches(xp, k, stride)  # (N, Ho, Wo, k, k, C)
    ho, wo = patches.shape[1], patches.shape[2]
    out_data = np.einsum("nhwijc,ijc->nhwc", patches, kernel.data)

    def backward_fn(g):
        dk = np.einsum("nhwijc,nhwc->ijc", patches, g)
        dpatches = g[:, :, :, None, None, :] * kernel.data
        dxp = _scatter_patches(dpatches, xp.shape, k, stride)
        dx = dxp[:, pt:pt + h, pl:pl + w, :]
        return [dx, dk]

    out = _custom([xb, kernel], out_data, backward_fn)
    if single:
        return out.reshape(out.shape[1:])
    return out


# -- gradient utilities -----------------------------------------------------------


def grad_map(loss, params):
    """Backward from ``loss`` and collect gradients for a name->Tensor map.

    Parameters never touched by the loss get zero gradients.
    """
    for p in params.values():
        p.zero_grad()
    loss.backward()
    return {
        name: Tensor(p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
        if p.requires_grad
    }


def finite_diff(f, x, eps=1e-6):
    """Central-difference gradient estimate of a scalar function of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value near index {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
