"""Layer forward/backward definitions, initializers and weight constraints.

Everything here is a pure function of (input, params, mode, rng); gradients
come from the autograd graph built in :mod:`agenet.tensor`.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeError, conv2d, depthwise_conv2d, _custom

SELU_LAMBDA = 1.05070098
SELU_ALPHA = 1.67326324


# -- convolution family ------------------------------------------------------------


def separable_conv2d(x, depthwise, pointwise, bias=None, padding="same"):
    """Depthwise 3x3 convolution followed by 1x1 pointwise channel mixing.

    depthwise: (k, k, Cin); pointwise: (Cin, Cout); bias: (Cout,) or None.
    """
    cin = depthwise.shape[-1]
    if pointwise.shape[0] != cin:
        raise ShapeError(
            f"depthwise channels {cin} != pointwise input channels {pointwise.shape[0]}")
    mid = depthwise_conv2d(x, depthwise, padding=padding)
    point_kernel = pointwise.reshape(1, 1, pointwise.shape[0], pointwise.shape[1])
    return conv2d(mid, point_kernel, bias=bias, padding="valid")


def max_pool2d(x, size=2, stride=2):
    """Per-window max with floor semantics on odd spatial dims.

    Gradient routes to the first (row-major) maximal element per window.
    """
    single = x.data.ndim == 3
    xb = x.reshape((1,) + x.shape) if single else x
    n, h, w, c = xb.shape
    if h < size or w < size:
        raise ShapeError(f"spatial dims {h}x{w} smaller than pool size {size}")
    ho, wo = h // stride, w // stride
    cropped = xb.data[:, :ho * stride, :wo * stride, :]
    windows = cropped.reshape(n, ho, stride, wo, stride, c)
    flat = windows.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, stride * stride)
    idx = np.argmax(flat, axis=-1)  # first index wins ties
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
        dwin = dflat.reshape(n, ho, wo, c, stride, stride).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros(xb.shape, dtype=g.dtype)
        dx[:, :ho * stride, :wo * stride, :] = dwin.reshape(
            n, ho * stride, wo * stride, c)
        return [dx]

    out = _custom([xb], out_data, backward_fn)
    if single:
        return out.reshape(out.shape[1:])
    return out


# -- normalization -----------------------------------------------------------------


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    epsilon: float = 1e-3

    @staticmethod
    def create(channels, dtype=np.float32, momentum=0.99, epsilon=1e-3):
        return BatchNormState(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )


def batch_norm(x, state, mode):
    """Channel-wise batch normalization (channel = last axis).

    Train mode normalizes by batch statistics and updates running stats by
    exponential moving average; infer mode uses the running stats.
    """
    c = x.shape[-1]
    if state.gamma.shape[0] != c:
        raise ShapeError(f"batch_norm state has {state.gamma.shape[0]} channels, input has {c}")
    axes = tuple(range(x.data.ndim - 1))
    if mode == "train":
        mean = x.mean(axis=axes, keepdims=True) if axes else x * 0
        centered = x - mean
        var = (centered * centered).mean(axis=axes, keepdims=True) if axes else centered * centered
        xhat = centered / (var + state.epsilon).sqrt()
        m = state.momentum
        state.running_mean[:] = m * state.running_mean + (1 - m) * mean.data.reshape(c)
        state.running_var[:] = np.maximum(
            m * state.running_var + (1 - m) * var.data.reshape(c), state.epsilon)
    elif mode == "infer":
        xhat = (x - state.running_mean) / np.sqrt(state.running_var + state.epsilon)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return xhat * state.gamma + state.beta


# -- dropout family ----------------------------------------------------------------


def _check_rate(rate):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")


def dropout(x, rate, mode, rng=None):
    """Inverted element-wise dropout; identity when infer or rate 0."""
    _check_rate(rate)
    if mode == "infer" or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype.type)
    return x * (mask / (1.0 - rate))


def spatial_dropout(x, rate, mode, rng=None):
    """Drops whole feature maps (last axis = channels), per sample."""
    _check_rate(rate)
    if mode == "infer" or rate == 0.0:
        return x
    if x.data.ndim == 4:
        mask_shape = (x.shape[0], 1, 1, x.shape[-1])
    else:
        mask_shape = (1,) * (x.data.ndim - 1) + (x.shape[-1],)
    mask = (rng.random(mask_shape) >= rate).astype(x.dtype.type)
    return x * (mask / (1.0 - rate))


def alpha_dropout(x, rate, mode, rng=None):
    """SELU-compatible dropout: dropped units go to the negative saturation
    value and an affine correction restores unit mean/variance."""
    _check_rate(rate)
    if mode == "infer" or rate == 0.0:
        return x
    alpha_prime = -SELU_LAMBDA * SELU_ALPHA
    keep = 1.0 - rate
    a = (keep + alpha_prime ** 2 * keep * rate) ** -0.5
    b = -a * alpha_prime * rate
    mask = (rng.random(x.shape) >= rate).astype(x.dtype.type)
    return (x * mask + alpha_prime * (1.0 - mask)) * a + b


# -- dense + activations -----------------------------------------------------------


def dense(x, weights, bias):
    """x @ W + b; accepts a single vector or a batch of rows."""
    single = x.data.ndim == 1
    xb = x.reshape(1, -1) if single else x
    if xb.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense input dim {xb.shape[1]} != weight rows {weights.shape[0]}")
    out = xb @ weights + bias
    if single:
        return out.reshape(out.shape[1])
    return out


def relu(x):
    return x.maximum(Tensor(np.zeros((), dtype=x.dtype)))


def elu(x, alpha=1.0):
    # exp only on the clamped negative branch; np.where evaluates both
    # branches and exp of a large positive input would overflow
    neg = np.minimum(x.data, 0.0)
    data = np.where(x.data > 0, x.data, alpha * np.expm1(neg))

    def backward_fn(g):
        return [np.where(x.data > 0, g, g * alpha * np.exp(neg))]
    return _custom([x], data, backward_fn)


def selu(x):
    lam, alpha = SELU_LAMBDA, SELU_ALPHA
    neg = np.minimum(x.data, 0.0)
    data = lam * np.where(x.data > 0, x.data, alpha * np.expm1(neg))

    def backward_fn(g):
        return [np.where(x.data > 0, g * lam, g * lam * alpha * np.exp(neg))]
    return _custom([x], data, backward_fn)


def sigmoid(x):
    # branch form avoids overflow in exp for large |x|
    z = x.data
    data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def backward_fn(g):
        return [g * data * (1.0 - data)]
    return _custom([x], data, backward_fn)


def softmax(x):
    """Row-max-shifted softmax along the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return [data * (g - dot)]
    return _custom([x], data, backward_fn)


_ACTIVATIONS = {
    "relu": relu,
    "elu": elu,
    "selu": selu,
    "sigmoid": sigmoid,
    "softmax": softmax,
}


def apply_activation(kind, x):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# -- initializers and constraints ---------------------------------------------------


def _fans(shape):
    if len(shape) == 2:  # dense (in, out)
        return shape[0], shape[1]
    if len(shape) == 3:  # depthwise (k, k, C): each channel sees k*k inputs
        return shape[0] * shape[1], shape[0] * shape[1]
    if len(shape) == 4:  # conv (k, k, Cin, Cout)
        rf = shape[0] * shape[1]
        return rf * shape[2], rf * shape[3]
    if len(shape) == 1:
        return shape[0], shape[0]
    raise ValueError(f"cannot derive fans from shape {shape}")


def init_weights(scheme, shape, rng, dtype=np.float32):
    fan_in, fan_out = _fans(tuple(shape))
    if scheme == "zeros":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
    if scheme == "ones":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
    if fan_in == 0:
        raise ValueError("zero fan_in")
    if scheme == "he_uniform":
        bound = np.sqrt(6.0 / fan_in)
    elif scheme == "xavier_uniform":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True)


def apply_max_norm(weights, c):
    """Rescale any weight column (per output unit) whose L2 norm exceeds c.

    Operates in place on the parameter buffer; meant to run right after an
    optimizer step.
    """
    if c <= 0:
        raise ValueError(f"max-norm bound must be positive, got {c}")
    w = weights.data
    cols = w.reshape(-1, w.shape[-1])
    norms = np.sqrt((cols * cols).sum(axis=0))
    scale = np.where(norms > c, c / np.maximum(norms, 1e-12), 1.0)
    over = norms > c
    if over.any():
        cols[:, over] *= scale[over].astype(w.dtype)
    return weights


# -- layer specs ------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    hyperparams: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.hyperparams.get(key, default)
