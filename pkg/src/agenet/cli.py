"""Command-line surface for the whole pipeline.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

import argparse
import os
import sys

import numpy as np

from . import baselines, data, features, models, plot, train as engine
from .losses import balanced_class_weights
from .optim import LrSchedule

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CUSTOM_MODELS = {
    "custom": models.build_custom_age_estimator,
    "custom_age_cls": models.build_custom_age_classifier,
    "custom_gender_cls": models.build_custom_gender_classifier,
}


def _data_root(args):
    root = args.data or os.environ.get("AGENET_DATA")
    if not root:
        raise data.DataError("no dataset directory: pass --data or set AGENET_DATA")
    return root


def cmd_scan(args):
    records, skips = data.scan_directory(_data_root(args))
    if not records:
        raise data.DataError("no parseable records found")
    split = data.stratified_split(records, seed=args.seed)
    text = data.format_composition(data.composition_report(split))
    text += f"\n\nSkipped files: {len(skips)}"
    for skip in skips[:20]:
        text += f"\n  {skip.image_path}: {skip.reason}"
    _emit(text, args.out)
    return 0


def cmd_split(args):
    records, _ = data.scan_directory(_data_root(args))
    if not records:
        raise data.DataError("no parseable records found")
    split = data.stratified_split(records, seed=args.seed)
    data.save_manifest(split, args.out)
    print(f"train={len(split.train)} validation={len(split.validation)} "
          f"test={len(split.test)} -> {args.out}")
    return 0


def _load_feature_split(prefix, split):
    path = f"{prefix}.{split}.ftns"
    if not os.path.exists(path):
        raise data.DataError(f"feature file not found: {path}")
    fset = features.load_features(path)
    records = []
    for key in fset.keys:
        rec = data.parse_label(key)
        if not isinstance(rec, data.FaceRecord):
            raise data.DataError(f"feature key carries no labels: {key}")
        records.append(rec)
    return fset, records


def _image_arrays(records, task, target, limit=None):
    if limit:
        records = records[:limit]
    X = np.stack([data.prepare_image(r.image_path, target=target).data
                  for r in records])
    return X, data.encode_targets(records, task), records


def _feature_arrays(fset, records, task):
    X, recs = features.align(fset, records)
    return X.astype(np.float32), data.encode_targets(recs, task), recs


def _build_model(name, args, input_shape=None):
    if name in CUSTOM_MODELS:
        return CUSTOM_MODELS[name](input_size=args.input_size)
    if name in models.TRANSFER_KINDS:
        return models.build_transfer_head(name, input_shape=input_shape)
    raise data.DataError(f"unknown model {name!r}")


def cmd_train(args):
    task = args.task
    if args.features:
        train_set, train_recs = _load_feature_split(args.features, "train")
        val_set, val_recs = _load_feature_split(args.features, "validation")
        spec = _build_model(args.model, args,
                            input_shape=train_set.feature_shape)
        Xt, yt, train_recs = _feature_arrays(train_set, train_recs, task)
        Xv, yv, _ = _feature_arrays(val_set, val_recs, task)
    else:
        records, _ = data.scan_directory(_data_root(args))
        if args.manifest:
            split = data.load_manifest(args.manifest, records)
        else:
            split = data.stratified_split(records, seed=args.seed)
        spec = _build_model(args.model, args)
        Xt, yt, train_recs = _image_arrays(split.train, task, args.input_size, args.limit)
        Xv, yv, _ = _image_arrays(split.validation, task, args.input_size,
                                  max(1, (args.limit or 0) // 8) if args.limit else None)

    class_weights = None
    if args.class_weights and task == "gender_cls":
        counts = {0: sum(1 for r in train_recs if r.gender == 0),
                  1: sum(1 for r in train_recs if r.gender == 1)}
        class_weights = balanced_class_weights(counts)

    schedule = LrSchedule(initial_lr=args.lr, halve_at_end=args.halve_at_end)
    config = engine.RunConfig(
        task=task, model=args.model, batch_size=args.batch, epochs=args.epochs,
        optimizer=args.optimizer, schedule=schedule, seed=args.seed,
        class_weights=class_weights, checkpoint_path=args.checkpoint)
    params, buffers = models.init_params(spec, seed=args.seed)
    history, _, _ = engine.train(spec, params, buffers, (Xt, yt), (Xv, yv), config)
    if args.history:
        history.to_csv(args.history)
    last = history.epochs[-1]
    print(f"done: epochs={len(history.epochs)} train_loss={last[1]:.5g} "
          f"val_loss={last[2]:.5g} val_metric={last[3]:.5g}")
    return 0


def cmd_eval(args):
    spec, params, buffers = engine.load_checkpoint(args.checkpoint)
    task = args.task
    if args.features:
        fset, records = _load_feature_split(args.features, args.split)
        X, y, records = _feature_arrays(fset, records, task)
    else:
        records, _ = data.scan_directory(_data_root(args))
        if args.manifest:
            split = data.load_manifest(args.manifest, records)
            records = getattr(split, args.split if args.split != "validation" else "validation")
        X, y, records = _image_arrays(records, task, spec.input_shape[0], args.limit)
    result = engine.evaluate(spec, params, buffers, X, y,
                             ages=[r.age for r in records])
    metric_name = "mae" if spec.output_kind == "regression_age" else "accuracy"
    print(f"{metric_name}={result['metric']:.4f} loss={result['loss']:.5g}")
    for row in result.get("per_decade_mae", []):
        print(f"  {row[0]:>7}: n={row[1]:<6} mae="
              + (f"{row[2]:.3f}" if np.isfinite(row[2]) else "n/a"))
    return 0


def cmd_predict(args):
    spec, params, buffers = engine.load_checkpoint(args.checkpoint)
    if args.image:
        sample = data.prepare_image(args.image, target=spec.input_shape[0]).data
    else:
        fset = features.load_features(args.features)
        if args.key not in fset.keys:
            raise data.DataError(f"key {args.key!r} not in feature set")
        sample = fset.features[fset.keys.index(args.key)]
    print(engine.predict(spec, params, buffers, sample))
    return 0


def cmd_features_synth(args):
    sets, _ = features.synthetic_feature_sets(
        extractor=args.extractor, dim=args.dim,
        sizes=(args.train_size, args.val_size, args.test_size),
        seed=args.seed, spatial=args.spatial)
    os.makedirs(args.out_dir, exist_ok=True)
    prefix = os.path.join(args.out_dir, args.extractor)
    for split, fset in sets.items():
        features.save_features(fset, f"{prefix}.{split}.ftns")
    print(f"wrote {len(sets)} feature sets under {prefix}.*.ftns")
    return 0


def cmd_features_import(args):
    fset = features.load_features(args.path)
    print(f"{fset.extractor_name}/{fset.split}: {fset.features.shape[0]} samples, "
          f"feature shape {tuple(fset.feature_shape)}")
    return 0


def cmd_baseline(args):
    rows = []
    if args.task in ("age_reg", "both"):
        tr_set, tr_recs = _load_feature_split(args.features, "train")
        te_set, te_recs = _load_feature_split(args.features, "test")
        Xt, yt, _ = _feature_arrays(tr_set, tr_recs, "age_reg")
        Xe, ye, _ = _feature_arrays(te_set, te_recs, "age_reg")
        Xt2, Xe2 = Xt.reshape(Xt.shape[0], -1), Xe.reshape(Xe.shape[0], -1)
        model = baselines.linreg_fit(Xt2, yt)
        rows.append(("Linear Regression",
                     baselines.baseline_eval(model, Xt2, yt)["mae"],
                     baselines.baseline_eval(model, Xe2, ye)["mae"]))
    if args.task in ("gender_cls", "both"):
        tr_set, tr_recs = _load_feature_split(args.features, "train")
        te_set, te_recs = _load_feature_split(args.features, "test")
        Xt, yt, _ = _feature_arrays(tr_set, tr_recs, "gender_cls")
        Xe, ye, _ = _feature_arrays(te_set, te_recs, "gender_cls")
        Xt2, Xe2 = Xt.reshape(Xt.shape[0], -1), Xe.reshape(Xe.shape[0], -1)
        model = baselines.logreg_fit(Xt2, yt, lr=args.lr, epochs=args.epochs)
        rows.append(("Logistic Regression",
                     baselines.baseline_eval(model, Xt2, yt)["accuracy"],
                     baselines.baseline_eval(model, Xe2, ye)["accuracy"]))
    text = baselines.baseline_report(rows)
    _emit(text, args.out)
    return 0


def cmd_report(args):
    rows = []
    with open(args.csv) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("method"):
                continue
            method, train_v, test_v = line.split(",")
            rows.append((method, float(train_v), float(test_v)))
    _emit(baselines.baseline_report(rows), args.out)
    return 0


def cmd_plot(args):
    history = engine.RunHistory.from_csv(args.history)
    plot.history_plot(history, args.out, title=args.title)
    print(f"wrote {args.out}")
    return 0


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    print(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="agenet",
                                     description="age/gender prediction pipeline")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_data(p):
        p.add_argument("--data", help="dataset directory (or AGENET_DATA)")
        p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("scan", help="dataset composition report")
    add_data(p)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("split", help="write a split manifest")
    add_data(p)
    p.add_argument("--out", default="split_manifest.txt")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train a model")
    add_data(p)
    p.add_argument("--task", choices=data.TASKS, default="age_reg")
    p.add_argument("--model", default="custom")
    p.add_argument("--features", help="feature file prefix (transfer heads)")
    p.add_argument("--manifest")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--optimizer", default="adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--halve-at-end", type=int, default=None)
    p.add_argument("--input-size", type=int, default=180)
    p.add_argument("--limit", type=int, help="cap training records (desk-scale runs)")
    p.add_argument("--class-weights", action="store_true")
    p.add_argument("--history", help="metrics CSV output")
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=data.TASKS, default="age_reg")
    p.add_argument("--features")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=features.SPLITS, default="test")
    p.add_argument("--limit", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="single-sample inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image")
    p.add_argument("--features", help="feature file (with --key)")
    p.add_argument("--key")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("features-synth", help="write planted-signal feature sets")
    p.add_argument("--out-dir", default="features")
    p.add_argument("--extractor", choices=features.EXTRACTORS, default="senet50_f")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--train-size", type=int, default=1600)
    p.add_argument("--val-size", type=int, default=200)
    p.add_argument("--test-size", type=int, default=200)
    p.add_argument("--spatial", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_features_synth)

    p = sub.add_parser("features-import", help="validate a feature file")
    p.add_argument("path")
    p.set_defaults(fn=cmd_features_import)

    p = sub.add_parser("baseline", help="linear/logistic baselines over features")
    p.add_argument("--features", required=True, help="feature file prefix")
    p.add_argument("--task", choices=["age_reg", "gender_cls", "both"], default="both")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("report", help="format a method,train,test CSV as a table")
    p.add_argument("--csv", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("plot", help="loss-curve SVG from a history CSV")
    p.add_argument("--history", required=True)
    p.add_argument("--out", default="loss.svg")
    p.add_argument("--title", default="training loss")
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code else 0
    try:
        return args.fn(args)
    except (data.DataError, features.FeatureStoreError, engine.CheckpointError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except engine.NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
