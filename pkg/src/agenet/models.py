"""Model architectures: custom CNNs and the six transfer-learning heads.

A ModelSpec is an ordered list of LayerSpecs plus shape metadata; parameters
live in a separate name -> Tensor map so checkpoints and optimizers stay
simple. ``forward`` threads an input through the stack, recording the
autograd graph in train mode.
"""

import hashlib
import json

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .layers import LayerSpec
from .tensor import Tensor, ShapeError

OUTPUT_KINDS = ("regression_age", "softmax_5", "softmax_2", "sigmoid_binary")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple
    layers: tuple
    output_kind: str

    def spec_hash(self):
        payload = json.dumps(
            {
                "name": self.name,
                "input_shape": list(self.input_shape),
                "output_kind": self.output_kind,
                "layers": [[l.kind, sorted(l.hyperparams.items())] for l in self.layers],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def _sep(filters, activation="relu", initializer="he_uniform", constraint=None):
    hp = {"filters": filters, "kernel": 3, "padding": "same",
          "activation": activation, "initializer": initializer}
    if constraint is not None:
        hp["constraint"] = constraint
    return LayerSpec("separable_conv2d", hp)


def _conv(filters, activation="relu", initializer="he_uniform", constraint=None):
    hp = {"filters": filters, "kernel": 3, "padding": "same",
          "activation": activation, "initializer": initializer}
    if constraint is not None:
        hp["constraint"] = constraint
    return LayerSpec("conv2d", hp)


def _dense(units, activation=None, initializer="he_uniform", constraint=None):
    hp = {"units": units, "initializer": initializer}
    if activation is not None:
        hp["activation"] = activation
    if constraint is not None:
        hp["constraint"] = constraint
    return LayerSpec("dense", hp)


def _pool():
    return LayerSpec("max_pool", {"size": 2})


def _bn():
    return LayerSpec("batch_norm", {})


def _drop(kind, rate):
    return LayerSpec(kind, {"rate": rate})


# -- custom CNNs (trained end to end on images) ---------------------------------------


def _custom_conv_stack(block_filters, initializer, constraint, conv_kind="separable_conv2d"):
    make = _sep if conv_kind == "separable_conv2d" else _conv
    stack = []
    deep_from = len(block_filters) - 2  # spatial dropout on the two deepest blocks
    for i, filters in enumerate(block_filters):
        stack.append(make(filters, activation="relu", initializer=initializer,
                          constraint=constraint))
        stack.append(_pool())
        stack.append(_bn())
        if i >= deep_from:
            stack.append(_drop("spatial_dropout", 0.2))
    return stack


def _custom_fc_stack(initializer, constraint, fc_dropout=(0.3, 0.3, 0.3)):
    stack = [LayerSpec("flatten", {})]
    for units, rate in zip((128, 64, 32), fc_dropout):
        stack.append(_dense(units, activation="relu", initializer=initializer,
                            constraint=constraint))
        stack.append(_drop("dropout", rate))
        stack.append(_bn())
    return stack


def build_custom_age_estimator(initializer="he_uniform", constraint=None,
                               input_size=180, conv_kind="separable_conv2d",
                               blocks=(64, 128, 128, 256, 256)):
    """Five-block CNN regressing age in years (single ReLU output unit).

    ``blocks`` scales the conv stack for small inputs (each block halves
    the spatial size, so input_size must allow len(blocks) poolings).
    """
    stack = _custom_conv_stack(list(blocks), initializer, constraint,
                               conv_kind)
    stack += _custom_fc_stack(initializer, constraint)
    stack.append(_dense(1, activation="relu", initializer=initializer))
    return ModelSpec("custom_age_estimator", (input_size, input_size, 3),
                     tuple(stack), "regression_age")


def build_custom_age_classifier(initializer="he_uniform", constraint=None,
                                input_size=180, conv_kind="separable_conv2d"):
    """Six-block CNN classifying age into five 25-year groups."""
    stack = _custom_conv_stack([64, 128, 128, 256, 256, 256], initializer,
                               constraint, conv_kind)
    stack += _custom_fc_stack(initializer, constraint)
    stack.append(_dense(5, activation="softmax", initializer=initializer))
    return ModelSpec("custom_age_classifier", (input_size, input_size, 3),
                     tuple(stack), "softmax_5")


def build_custom_gender_classifier(initializer="he_uniform", constraint=None,
                                   input_size=180, conv_kind="separable_conv2d"):
    """Five-block CNN classifying gender (two-way softmax)."""
    stack = _custom_conv_stack([64, 128, 128, 256, 256], initializer, constraint,
                               conv_kind)
    stack += _custom_fc_stack(initializer, constraint)
    stack.append(_dense(2, activation="softmax", initializer=initializer))
    return ModelSpec("custom_gender_classifier", (input_size, input_size, 3),
                     tuple(stack), "softmax_2")


# -- transfer-learning heads over frozen backbone features ----------------------------

TRANSFER_KINDS = ("vgg_gender", "resnet_gender", "senet_gender",
                  "vgg_age", "resnet_age", "senet_age")

# The alpha-dropout rate in the vgg gender head is not pinned anywhere;
# 0.1 is the conventional value for self-normalizing stacks.
VGG_GENDER_ALPHA_DROPOUT = 0.1


def build_transfer_head(kind, input_shape=None, literal_keep=True):
    """Heads trained on precomputed backbone embeddings.

    vgg_* kinds expect a spatial feature map; resnet/senet kinds expect a
    flat pooled vector. ``literal_keep`` keeps the stated keep-probabilities
    of the vgg age head as written (keep 0.2 means drop 0.8); set False to
    read them as drop probabilities instead.
    """
    if kind not in TRANSFER_KINDS:
        raise ValueError(f"unknown transfer head {kind!r}")
    spatial = kind.startswith("vgg")
    if input_shape is None:
        input_shape = (6, 6, 512) if spatial else (2048,)
    if spatial and len(input_shape) != 3:
        raise ShapeError(f"{kind} needs a HxWxC feature map, got {input_shape}")
    if not spatial and len(input_shape) != 1:
        raise ShapeError(f"{kind} needs a flat feature vector, got {input_shape}")

    stack = []
    if kind == "vgg_gender":
        for _ in range(2):
            stack += [_bn(), _drop("spatial_dropout", 0.5),
                      _sep(512, activation="relu"), _pool()]
        stack += [LayerSpec("flatten", {}), _bn(),
                  _drop("alpha_dropout", VGG_GENDER_ALPHA_DROPOUT),
                  _dense(128, activation="relu"), _bn(),
                  _dense(1, activation="sigmoid")]
        out = "sigmoid_binary"
    elif kind in ("resnet_gender", "senet_gender"):
        stack += [_bn(), _drop("dropout", 0.5),
                  _dense(128, activation="elu", constraint=3.0),
                  _dense(1, activation="sigmoid")]
        out = "sigmoid_binary"
    elif kind == "vgg_age":
        for keep in (0.8, 0.6):
            stack += [_bn(), _drop("spatial_dropout", round(1.0 - keep, 6)),
                      _sep(512, activation="relu"), _pool()]
        stack.append(LayerSpec("flatten", {}))
        fc_keep = (0.2, 0.2, 1.0)
        for units, keep in zip((1024, 512, 128), fc_keep):
            # non-literal reading: the stated numbers are drop rates, except
            # "1" which can only mean keep-everything
            rate = round(1.0 - keep, 6) if literal_keep else (
                0.0 if keep == 1.0 else keep)
            stack.append(_dense(units, activation="elu"))
            if rate > 0:
                stack.append(_drop("dropout", rate))
        stack += [_dense(1, activation="relu"), _bn()]
        out = "regression_age"
    else:  # resnet_age / senet_age
        for units, keep in zip((512, 512, 512, 256, 128),
                               (0.5, 0.3, 0.3, 0.3, 0.5)):
            stack += [_dense(units, activation="selu"),
                      _drop("dropout", round(1.0 - keep, 6)), _bn()]
        stack += [_dense(1, activation="relu"), _bn()]
        out = "regression_age"
    return ModelSpec(kind, tuple(input_shape), tuple(stack), out)


# -- shape propagation ------------------------------------------------------------


def shape_trace(spec):
    """Output shape after each layer, starting with the input shape."""
    shape = tuple(spec.input_shape)
    trace = [("input", shape)]
    for i, layer in enumerate(spec.layers):
        kind = layer.kind
        if kind in ("separable_conv2d", "conv2d"):
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: conv needs HxWxC input, got {shape}")
            shape = (shape[0], shape[1], layer.get("filters"))
        elif kind == "max_pool":
            size = layer.get("size", 2)
            if shape[0] < size or shape[1] < size:
                raise ShapeError(f"layer {i}: pool on {shape}")
            shape = (shape[0] // size, shape[1] // size, shape[2])
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"layer {i}: dense needs flat input, got {shape}")
            shape = (layer.get("units"),)
        elif kind in ("batch_norm", "dropout", "spatial_dropout", "alpha_dropout",
                      "activation"):
            pass
        else:
            raise ShapeError(f"layer {i}: unknown kind {kind!r}")
        trace.append((kind, shape))
    return trace


def output_shape(spec):
    return shape_trace(spec)[-1][1]


# -- parameters -------------------------------------------------------------------


def init_params(spec, seed=0, dtype=np.float32):
    """Create (params, buffers) for a spec. Buffers hold batch-norm
    running statistics; params hold every trainable tensor."""
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    shape = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        prefix = f"layer{i:02d}.{layer.kind}"
        init = layer.get("initializer", "he_uniform")
        if layer.kind == "separable_conv2d":
            cin, cout = shape[2], layer.get("filters")
            params[f"{prefix}.depthwise"] = L.init_weights(init, (3, 3, cin), rng, dtype)
            params[f"{prefix}.pointwise"] = L.init_weights(init, (cin, cout), rng, dtype)
            params[f"{prefix}.bias"] = L.init_weights("zeros", (cout,), rng, dtype)
            shape = (shape[0], shape[1], cout)
        elif layer.kind == "conv2d":
            k = layer.get("kernel", 3)
            cin, cout = shape[2], layer.get("filters")
            params[f"{prefix}.kernel"] = L.init_weights(init, (k, k, cin, cout), rng, dtype)
            params[f"{prefix}.bias"] = L.init_weights("zeros", (cout,), rng, dtype)
            shape = (shape[0], shape[1], cout)
        elif layer.kind == "dense":
            units = layer.get("units")
            params[f"{prefix}.weight"] = L.init_weights(init, (shape[0], units), rng, dtype)
            params[f"{prefix}.bias"] = L.init_weights("zeros", (units,), rng, dtype)
            shape = (units,)
        elif layer.kind == "batch_norm":
            c = shape[-1]
            params[f"{prefix}.gamma"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
            params[f"{prefix}.beta"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
            buffers[f"{prefix}.running_mean"] = np.zeros(c, dtype=dtype)
            buffers[f"{prefix}.running_var"] = np.ones(c, dtype=dtype)
        elif layer.kind == "max_pool":
            size = layer.get("size", 2)
            shape = (shape[0] // size, shape[1] // size, shape[2])
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
    return params, buffers


def constrained_params(spec):
    """(param_name, bound) pairs for every layer carrying a max-norm constraint."""
    out = []
    for i, layer in enumerate(spec.layers):
        c = layer.get("constraint")
        if c is None:
            continue
        prefix = f"layer{i:02d}.{layer.kind}"
        if layer.kind == "dense":
            out.append((f"{prefix}.weight", float(c)))
        elif layer.kind == "separable_conv2d":
            out.append((f"{prefix}.pointwise", float(c)))
            out.append((f"{prefix}.depthwise", float(c)))
        elif layer.kind == "conv2d":
            out.append((f"{prefix}.kernel", float(c)))
    return out


# -- forward ------------------------------------------------------------------------


def forward(spec, params, buffers, x, mode="infer", rng=None):
    """Run the layer stack. Train mode applies dropout and batch statistics
    (and updates running stats); infer mode is deterministic."""
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    t = x if isinstance(x, Tensor) else Tensor(x)
    batched = t.data.ndim == len(spec.input_shape) + 1
    expected = tuple(spec.input_shape)
    got = t.shape[1:] if batched else t.shape
    if tuple(got) != expected:
        raise ShapeError(f"{spec.name}: input shape {t.shape} does not match {expected}")

    for i, layer in enumerate(spec.layers):
        prefix = f"layer{i:02d}.{layer.kind}"
        try:
            t = _apply(layer, prefix, t, params, buffers, mode, rng)
        except ShapeError as exc:
            raise ShapeError(f"{spec.name} layer {i} ({layer.kind}): {exc}") from exc
    return t


def _apply(layer, prefix, t, params, buffers, mode, rng):
    kind = layer.kind
    if kind == "separable_conv2d":
        t = L.separable_conv2d(t, params[f"{prefix}.depthwise"],
                               params[f"{prefix}.pointwise"],
                               params[f"{prefix}.bias"],
                               padding=layer.get("padding", "same"))
        act = layer.get("activation")
        return L.apply_activation(act, t) if act else t
    if kind == "conv2d":
        from .tensor import conv2d
        t = conv2d(t, params[f"{prefix}.kernel"], params[f"{prefix}.bias"],
                   padding=layer.get("padding", "same"))
        act = layer.get("activation")
        return L.apply_activation(act, t) if act else t
    if kind == "max_pool":
        return L.max_pool2d(t, size=layer.get("size", 2), stride=layer.get("size", 2))
    if kind == "batch_norm":
        state = L.BatchNormState(
            gamma=params[f"{prefix}.gamma"],
            beta=params[f"{prefix}.beta"],
            running_mean=buffers[f"{prefix}.running_mean"],
            running_var=buffers[f"{prefix}.running_var"],
        )
        return L.batch_norm(t, state, mode)
    if kind == "dropout":
        return L.dropout(t, layer.get("rate"), mode, rng)
    if kind == "spatial_dropout":
        return L.spatial_dropout(t, layer.get("rate"), mode, rng)
    if kind == "alpha_dropout":
        return L.alpha_dropout(t, layer.get("rate"), mode, rng)
    if kind == "flatten":
        return t.flatten_batch() if t.data.ndim == 4 else t.reshape(-1)
    if kind == "dense":
        t = L.dense(t, params[f"{prefix}.weight"], params[f"{prefix}.bias"])
        act = layer.get("activation")
        return L.apply_activation(act, t) if act else t
    if kind == "activation":
        return L.apply_activation(layer.get("fn"), t)
    raise ShapeError(f"unknown layer kind {kind!r}")


def parameter_count(spec):
    params, _ = init_params(spec, seed=0)
    return {name: int(np.prod(p.shape)) for name, p in params.items()}
