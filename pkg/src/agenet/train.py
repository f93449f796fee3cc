"""Training loop: batches -> forward -> loss -> backward -> optimizer step ->
constraint projection -> metric logging -> best-validation checkpointing."""

import copy
import json
import io
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import ftns, losses, models
from .data import DECADE_LABELS, decade_bucket
from .layers import apply_max_norm
from .optim import LrSchedule, OptimizerState, lr_at, optimizer_step
from .tensor import Tensor, grad_map


class NumericFailure(RuntimeError):
    """Non-finite loss or gradient; carries the fault location."""


@dataclass
class RunConfig:
    task: str = "age_reg"
    model: str = "custom"
    batch_size: int = 32
    epochs: int = 40
    optimizer: str = "adam"
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    class_weights: dict | None = None
    checkpoint_path: str | None = None


@dataclass
class RunHistory:
    epochs: list = field(default_factory=list)  # rows: (epoch, train_loss, val_loss, val_metric, lr)

    def append(self, epoch, train_loss, val_loss, val_metric, lr):
        self.epochs.append((epoch, train_loss, val_loss, val_metric, lr))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss,val_metric,lr\n")
            for row in self.epochs:
                fh.write(f"{row[0]},{row[1]:.8g},{row[2]:.8g},{row[3]:.8g},{row[4]:.8g}\n")

    @staticmethod
    def from_csv(path):
        hist = RunHistory()
        with open(path) as fh:
            next(fh)
            for line in fh:
                e, tl, vl, vm, lr = line.strip().split(",")
                hist.append(int(e), float(tl), float(vl), float(vm), float(lr))
        return hist


def _targets_for(spec, y):
    y = np.asarray(y)
    if spec.output_kind == "softmax_2" and y.ndim == 1:
        out = np.zeros((y.size, 2), dtype=np.float32)
        out[np.arange(y.size), y.astype(int)] = 1.0
        return out
    if spec.output_kind == "softmax_5" and y.ndim == 1:
        out = np.zeros((y.size, 5), dtype=np.float32)
        out[np.arange(y.size), y.astype(int)] = 1.0
        return out
    return y


def compute_loss(spec, output, y, class_weights=None):
    if spec.output_kind == "regression_age":
        return losses.mse(output.reshape(-1), np.asarray(y, dtype=np.float64).reshape(-1))
    if spec.output_kind in ("softmax_5", "softmax_2"):
        return losses.categorical_cross_entropy(output, _targets_for(spec, y))
    if spec.output_kind == "sigmoid_binary":
        return losses.binary_cross_entropy(output.reshape(-1), np.asarray(y).reshape(-1),
                                           weights=class_weights)
    raise ValueError(f"unknown output kind {spec.output_kind!r}")


def compute_metric(spec, output, y):
    """MAE for regression, accuracy for classification."""
    arr = output.data if isinstance(output, Tensor) else np.asarray(output)
    y = np.asarray(y)
    if spec.output_kind == "regression_age":
        return losses.mae(arr.reshape(-1), y.reshape(-1))
    if spec.output_kind == "sigmoid_binary":
        return losses.accuracy(losses.labels_from_probs(arr, binary=True), y.reshape(-1))
    labels = losses.labels_from_probs(arr)
    truth = np.argmax(y, axis=-1) if y.ndim > 1 else y
    return losses.accuracy(labels, truth)


def _batches(X, y, batch_size, rng):
    order = rng.permutation(X.shape[0])
    for start in range(0, X.shape[0], batch_size):
        idx = order[start:start + batch_size]
        yield X[idx], y[idx]


def train(spec, params, buffers, train_xy, val_xy, config):
    """Run the full recipe; returns (history, best_params, best_buffers).

    train_xy / val_xy are (inputs, targets) arrays with targets already
    encoded for the task (ages, one-hot rows, or 0/1 labels).
    """
    X, y = train_xy
    if X.shape[0] == 0:
        raise ValueError("empty training data")
    if config.epochs < 1 or config.batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    opt = OptimizerState(kind=config.optimizer)
    constrained = models.constrained_params(spec)
    trainable = {k: p for k, p in params.items() if p.requires_grad}
    history = RunHistory()
    best = (np.inf, None, None)

    for epoch in range(config.epochs):
        lr = lr_at(config.schedule, epoch)
        epoch_rng = np.random.default_rng([config.seed, epoch])
        drop_rng = np.random.default_rng([config.seed, epoch, 1])
        total_loss, total_n = 0.0, 0
        for batch_no, (xb, yb) in enumerate(
                _batches(X, y, config.batch_size, epoch_rng)):
            out = models.forward(spec, params, buffers, Tensor(xb),
                                 mode="train", rng=drop_rng)
            loss = compute_loss(spec, out, yb, config.class_weights)
            if not np.isfinite(loss.item()):
                raise NumericFailure(
                    f"non-finite loss at epoch {epoch} batch {batch_no}")
            grads = grad_map(loss, trainable)
            optimizer_step(opt, trainable, grads, lr=lr)
            for name, bound in constrained:
                apply_max_norm(params[name], bound)
            total_loss += loss.item() * xb.shape[0]
            total_n += xb.shape[0]

        val_loss, val_metric = _validate(spec, params, buffers, val_xy,
                                         config.class_weights)
        history.append(epoch, total_loss / total_n, val_loss, val_metric, lr)
        if val_loss < best[0]:
            best = (val_loss,
                    {k: Tensor(p.data.copy(), requires_grad=p.requires_grad)
                     for k, p in params.items()},
                    {k: b.copy() for k, b in buffers.items()})

    best_params = best[1] if best[1] is not None else params
    best_buffers = best[2] if best[2] is not None else buffers
    if config.checkpoint_path:
        save_checkpoint(spec, best_params, best_buffers, config.checkpoint_path)
    return history, best_params, best_buffers


def _validate(spec, params, buffers, val_xy, class_weights):
    Xv, yv = val_xy
    out = models.forward(spec, params, buffers, Tensor(Xv), mode="infer")
    loss = compute_loss(spec, out.detach(), yv, class_weights)
    return loss.item(), compute_metric(spec, out, yv)


def evaluate(spec, params, buffers, X, y, ages=None):
    """Metrics on a held-out set; adds a per-decade MAE table for age regression."""
    if np.asarray(X).shape[0] == 0:
        raise ValueError("empty evaluation set")
    out = models.forward(spec, params, buffers, Tensor(np.asarray(X)), mode="infer")
    result = {"metric": compute_metric(spec, out, y),
              "loss": compute_loss(spec, out.detach(), y).item()}
    if spec.output_kind == "regression_age":
        pred = out.data.reshape(-1)
        truth = np.asarray(y, dtype=np.float64).reshape(-1)
        source_ages = truth if ages is None else np.asarray(ages)
        table = []
        for bucket, label in enumerate(DECADE_LABELS):
            mask = np.array([decade_bucket(int(a)) == bucket for a in source_ages])
            bucket_mae = (float(np.mean(np.abs(pred[mask] - truth[mask])))
                          if mask.any() else float("nan"))
            table.append((label, int(mask.sum()), bucket_mae))
        result["per_decade_mae"] = table
    return result


def predict(spec, params, buffers, sample):
    """Single-sample inference in infer mode."""
    x = np.asarray(sample.data if isinstance(sample, Tensor) else sample)
    out = models.forward(spec, params, buffers, Tensor(x[None, ...]), mode="infer")
    arr = out.data.reshape(-1)
    if spec.output_kind == "regression_age":
        return {"age": float(arr[0])}
    if spec.output_kind == "sigmoid_binary":
        p = float(arr[0])
        label = 1 if p >= 0.5 else 0
        return {"gender": label, "confidence": p if label == 1 else 1.0 - p}
    label = int(np.argmax(arr))
    return {"label": label, "probs": arr.tolist()}


# -- checkpoints ----------------------------------------------------------------------


class CheckpointError(Exception):
    """Checkpoint container is corrupt or does not match the model spec."""


def save_checkpoint(spec, params, buffers, path):
    manifest = {
        "name": spec.name,
        "input_shape": list(spec.input_shape),
        "output_kind": spec.output_kind,
        "layers": [[l.kind, dict(l.hyperparams)] for l in spec.layers],
        "spec_hash": spec.spec_hash(),
        "params": sorted(params),
        "buffers": sorted(buffers),
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        for name in sorted(params):
            buf = io.BytesIO()
            ftns.write_tensor(buf, params[name].data)
            zf.writestr(f"params/{name}.ftns", buf.getvalue())
        for name in sorted(buffers):
            buf = io.BytesIO()
            ftns.write_tensor(buf, buffers[name])
            zf.writestr(f"buffers/{name}.ftns", buf.getvalue())


def load_checkpoint(path, expected_spec=None):
    """Returns (spec, params, buffers); rejects spec-hash mismatches."""
    from .layers import LayerSpec

    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            params, buffers = {}, {}
            for name in manifest["params"]:
                arr = ftns.read_tensor(io.BytesIO(zf.read(f"params/{name}.ftns")))
                params[name] = Tensor(arr, requires_grad=not name.endswith("running"))
            for name in manifest["buffers"]:
                buffers[name] = ftns.read_tensor(
                    io.BytesIO(zf.read(f"buffers/{name}.ftns")))
    except (zipfile.BadZipFile, KeyError, ftns.FtnsError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc

    spec = models.ModelSpec(
        name=manifest["name"],
        input_shape=tuple(manifest["input_shape"]),
        layers=tuple(LayerSpec(kind, hp) for kind, hp in manifest["layers"]),
        output_kind=manifest["output_kind"],
    )
    if spec.spec_hash() != manifest["spec_hash"]:
        raise CheckpointError(f"manifest hash mismatch in {path}")
    if expected_spec is not None and expected_spec.spec_hash() != spec.spec_hash():
        raise CheckpointError(
            f"checkpoint was written for {spec.name}, not {expected_spec.name}")
    return spec, params, buffers
