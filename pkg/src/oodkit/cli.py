"""``oodkit`` command line: gen, train-toy, predict, fit, score, eval, demo.

Exit codes: 0 success, 2 usage/input error, 3 training divergence,
4 undefined metric. Tensors are OODT files, models OODM sidecars, and
reports/manifests JSON. Every output gets a ``<name>.manifest.json``
next to it recording the invocation.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import FORMAT_VERSION, __version__, benchmarks, density, detectors, metrics, modelio, synthetic, \
    tensor_io, toymodel
from .errors import DivergenceError, FormatError, InvalidArgumentError, InvalidInputError, \
    InvalidModelError, OODError, UndefinedMetricError, UnusableModelError

OUT_DIR_ENV = "OODKIT_OUT_DIR"
GENERATORS = ("gaussian", "rademacher", "blobs", "mixture", "ood-mixture", "multilabel")
SCORERS = ("msp", "maxlogit", "logitavg", "klmatch", "background", "dropoutvar",
           "recon", "lof", "iforest", "branch", "odin")


class UsageError(Exception):
    pass


def _default_out_dir():
    return os.environ.get(OUT_DIR_ENV, ".")


def _shape(text):
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; use e.g. 32x32 or 32x32x3")
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def _ints(text):
    return tuple(int(p) for p in text.split(",") if p)


def _need(args, *names):
    for name in names:
        value = getattr(args, name)
        if value is None:
            raise UsageError(f"{args.command} {getattr(args, 'name', '')}: missing required --{name.replace('_', '-')}")
        if isinstance(value, (str, Path)) and not Path(value).exists():
            raise UsageError(f"input file not found: {value}")


def _write_manifest(output, args, seed, inputs, outputs, started):
    params = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": args.command,
        "parameters": params,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "format_version": FORMAT_VERSION,
        "duration_seconds": round(time.perf_counter() - started, 6),
    }
    path = Path(str(output) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------


def _mixture_spec(args):
    return synthetic.MixtureSpec(
        class_count=args.classes, feature_dim=args.dim, sigma=args.sigma,
        base_separation=args.separation, fine_grained_pairs=args.pairs,
        delta=args.delta, layout_seed=args.layout_seed,
    )


def cmd_gen(args):
    started = time.perf_counter()
    out_dir = Path(args.out_dir or _default_out_dir())
    out_dir.mkdir(parents=True, exist_ok=True)
    name = args.name
    outputs = []
    if name in ("gaussian", "rademacher", "blobs"):
        if name == "gaussian":
            data = synthetic.gen_gaussian_ood(args.count, args.shape, args.seed, std=args.std)
        elif name == "rademacher":
            data = synthetic.gen_rademacher_ood(args.count, args.shape, args.seed)
        else:
            data = synthetic.gen_blobs_ood(args.count, args.shape, args.seed, blur_sigma=args.blur_sigma)
        path = out_dir / f"{name}.oodt"
        tensor_io.write_tensor(data, path)
        outputs.append(path)
    else:
        spec = _mixture_spec(args)
        if name == "mixture":
            feats, classes = synthetic.gen_mixture_dataset(spec, args.per_class, args.seed)
            tensor_io.write_tensor(feats, out_dir / "features.oodt")
            tensor_io.write_tensor(classes, out_dir / "classes.oodt")
            outputs += [out_dir / "features.oodt", out_dir / "classes.oodt"]
        elif name == "ood-mixture":
            tensor_io.write_tensor(synthetic.gen_ood_mixture(spec, args.count, args.seed), out_dir / "ood.oodt")
            outputs.append(out_dir / "ood.oodt")
        else:
            feats, targets = synthetic.gen_multilabel_dataset(spec, args.count, args.seed, args.max_labels)
            tensor_io.write_tensor(feats, out_dir / "features.oodt")
            tensor_io.write_tensor(targets, out_dir / "targets.oodt")
            outputs += [out_dir / "features.oodt", out_dir / "targets.oodt"]
    _write_manifest(out_dir / name, args, args.seed, [], outputs, started)
    for p in outputs:
        print(p)
    return 0


# --------------------------------------------------------------------------
# train-toy
# --------------------------------------------------------------------------


def cmd_train_toy(args):
    started = time.perf_counter()
    _need(args, "features")
    x = tensor_io.read_tensor(args.features)
    config = toymodel.TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed,
        lambda_init=args.lambda_init, budget=args.budget, hint_probability=args.hint_probability,
        weight_decay=args.weight_decay,
    )
    inputs = [args.features]
    if args.autoencoder:
        ae = toymodel.init_autoencoder(x.shape[1], args.bottleneck or max(1, x.shape[1] // 2),
                                       args.hidden, seed=args.seed)
        model, trace = toymodel.train_autoencoder(ae, x, config)
        report = {"initial_loss": trace[0]["loss"], "epochs": trace[1:]}
    else:
        _need(args, "labels")
        inputs.append(args.labels)
        y = tensor_io.read_tensor(args.labels)
        if args.head == "softmax":
            y = y.reshape(-1).astype(np.int64)
            k = args.classes or int(y.max()) + 1
        else:
            k = y.shape[1]
        model = toymodel.init_classifier(x.shape[1], args.hidden, k, head=args.head,
                                         dropout_rate=args.dropout, confidence=args.confidence, seed=args.seed)
        if args.confidence:
            model, report = toymodel.train_confidence_branch(model, x, y, config)
        else:
            model, trace = toymodel.train_classifier(model, x, y, config)
            report = {"initial_loss": trace[0]["loss"], "epochs": trace[1:]}
    model.save(args.out)
    trace_path = args.trace or Path(str(args.out) + ".trace.json")
    _dump_json(report, trace_path)
    _write_manifest(args.out, args, args.seed, inputs, [args.out, trace_path], started)
    print(args.out)
    return 0


def cmd_predict(args):
    started = time.perf_counter()
    _need(args, "model", "features")
    model = toymodel.ToyClassifier.load(args.model)
    x = tensor_io.read_tensor(args.features)
    if args.passes:
        out = toymodel.mc_dropout_posteriors(model, x, args.passes, args.seed)
    elif args.posteriors:
        out = toymodel.posteriors(model, x)
    else:
        out = toymodel.forward(model, x)
    tensor_io.write_tensor(out, args.out)
    _write_manifest(args.out, args, args.seed, [args.model, args.features], [args.out], started)
    print(args.out)
    return 0


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------


def cmd_fit(args):
    started = time.perf_counter()
    if args.name == "klmatch":
        _need(args, "val_logits")
        src = args.val_logits
        tpl = detectors.fit_kl_templates(tensor_io.read_tensor(src))
        modelio.save(args.out, modelio.KIND_TEMPLATES, {"num_classes": tpl.num_classes},
                     {"templates": tpl.templates, "counts": tpl.counts})
    else:
        _need(args, "train")
        src = args.train
        x = tensor_io.read_tensor(src)
        if args.name == "lof":
            density.lof_fit(x, args.k).save(args.out)
        else:
            density.iforest_fit(x, args.trees, args.subsample, args.seed).save(args.out)
    _write_manifest(args.out, args, args.seed, [src], [args.out], started)
    print(args.out)
    return 0


def load_templates(path):
    _, _, arrays = modelio.load(path, modelio.KIND_TEMPLATES)
    return detectors.PosteriorTemplateSet(arrays["templates"], arrays["counts"])


# --------------------------------------------------------------------------
# score
# --------------------------------------------------------------------------


def _score(args):
    name = args.name
    if name in ("msp", "maxlogit", "logitavg", "klmatch", "lof", "iforest"):
        if args.logits is None and args.model is not None:
            _need(args, "model", "features")
            model = toymodel.ToyClassifier.load(args.model)
            args.logits = args.features
            logits = toymodel.forward(model, tensor_io.read_tensor(args.features))
        else:
            _need(args, "logits")
            logits = tensor_io.read_tensor(args.logits)
        if name == "msp":
            return detectors.msp_score(logits), [args.logits]
        if name == "maxlogit":
            return detectors.maxlogit_score(logits), [args.logits]
        if name == "logitavg":
            return detectors.logit_avg_score(logits), [args.logits]
        if name == "klmatch":
            _need(args, "templates")
            return detectors.kl_matching_score(logits, load_templates(args.templates)), [args.logits, args.templates]
        _need(args, "fitted")
        if name == "lof":
            return density.lof_score(density.LofModel.load(args.fitted), logits), [args.logits, args.fitted]
        return density.iforest_score(density.IsolationForestModel.load(args.fitted), logits), [args.logits, args.fitted]
    if name == "background":
        _need(args, "posteriors", "background_index")
        return detectors.background_score(tensor_io.read_tensor(args.posteriors), args.background_index), [args.posteriors]
    if name == "dropoutvar":
        if args.stack is not None:
            _need(args, "stack")
            return detectors.dropout_variance_score(tensor_io.read_tensor(args.stack)), [args.stack]
        _need(args, "model", "features")
        model = toymodel.ToyClassifier.load(args.model)
        stack = toymodel.mc_dropout_posteriors(model, tensor_io.read_tensor(args.features), args.passes, args.seed)
        return detectors.dropout_variance_score(stack), [args.model, args.features]
    if name == "recon":
        if args.reconstruction is not None:
            _need(args, "input", "reconstruction")
            return detectors.reconstruction_score(tensor_io.read_tensor(args.input),
                                                  tensor_io.read_tensor(args.reconstruction)), [args.input, args.reconstruction]
        _need(args, "model", "features")
        ae = toymodel.ToyAutoencoder.load(args.model)
        x = tensor_io.read_tensor(args.features)
        return detectors.reconstruction_score(x, toymodel.reconstruct(ae, x)), [args.model, args.features]
    _need(args, "model", "features")
    model = toymodel.ToyClassifier.load(args.model)
    x = tensor_io.read_tensor(args.features)
    if name == "branch":
        return toymodel.confidence_score(model, x), [args.model, args.features]
    return toymodel.odin_score(model, x, args.temperature, args.epsilon, args.variant), [args.model, args.features]


def cmd_score(args):
    started = time.perf_counter()
    scores, inputs = _score(args)
    tensor_io.write_tensor(np.asarray(scores).reshape(np.shape(scores) or (1,)), args.out)
    _write_manifest(args.out, args, args.seed, inputs, [args.out], started)
    print(args.out)
    return 0


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------


def cmd_eval(args):
    started = time.perf_counter()
    if len(args.scores) != len(args.labels):
        raise UsageError("--scores and --labels need the same number of files")
    for p in [*args.scores, *args.labels]:
        if not Path(p).exists():
            raise UsageError(f"input file not found: {p}")
    scores = [tensor_io.read_tensor(p) for p in args.scores]
    labels = [tensor_io.read_labels(p) for p in args.labels]
    for s, y in zip(scores, labels):
        if s.shape != y.shape:
            raise InvalidArgumentError(f"score shape {s.shape} does not match label shape {y.shape}")
    if args.segmentation:
        maps, masks = [], []
        for s, y in zip(scores, labels):
            if s.ndim == 2:
                maps.append(s)
                masks.append(y)
            elif s.ndim == 3:
                maps.extend(s)
                masks.extend(y)
            else:
                raise InvalidArgumentError("segmentation inputs must be H x W or N x H x W")
        report = metrics.evaluate_segmentation(maps, masks, args.recall_level)
    else:
        report = metrics.evaluate(np.concatenate([s.ravel() for s in scores]),
                                  np.concatenate([y.ravel() for y in labels]), args.recall_level)
    outputs = []
    if args.curves:
        flat_s = np.concatenate([s.ravel() for s in scores])
        flat_y = np.concatenate([y.ravel() for y in labels])
        cdir = Path(args.curves)
        cdir.mkdir(parents=True, exist_ok=True)
        metrics.roc_curve(flat_s, flat_y).to_csv(cdir / "roc.csv")
        metrics.pr_curve(flat_s, flat_y).to_csv(cdir / "pr.csv")
        outputs += [cdir / "roc.csv", cdir / "pr.csv"]
    text = json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        outputs.append(args.out)
        _write_manifest(args.out, args, None, [*args.scores, *args.labels], outputs, started)
    sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# demo
# --------------------------------------------------------------------------


def cmd_demo(args):
    started = time.perf_counter()
    out_dir = Path(args.out_dir or _default_out_dir())
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(range(args.seed, args.seed + args.seeds))
    table = benchmarks.run_seeds(benchmarks.run_fine_grained, seeds)
    (out_dir / "demo_table.md").write_text(table.to_markdown())
    (out_dir / "demo_table.csv").write_text(table.to_csv())
    _write_manifest(out_dir / "demo", args, args.seed, [],
                    [out_dir / "demo_table.md", out_dir / "demo_table.csv"], started)
    sys.stdout.write(table.to_markdown())
    return 0


# --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="oodkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"oodkit {__version__} (OODT format v{FORMAT_VERSION}, OODM format v{FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic data")
    g.add_argument("name", choices=GENERATORS)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--shape", type=_shape, default=(32, 32))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", type=Path)
    g.add_argument("--std", type=float, default=0.5, help="Gaussian noise standard deviation")
    g.add_argument("--blur-sigma", type=float, default=2.0)
    g.add_argument("--classes", type=int, default=20)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--pairs", type=int, default=5)
    g.add_argument("--delta", type=float, default=1.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--separation", type=float, default=8.0)
    g.add_argument("--layout-seed", type=int, default=0)
    g.add_argument("--per-class", type=int, default=200)
    g.add_argument("--max-labels", type=int, default=3)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train-toy", help="train the toy classifier or autoencoder")
    t.add_argument("--features", type=Path)
    t.add_argument("--labels", type=Path, help="class indices (softmax) or N x K multi-hot (sigmoid)")
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--trace", type=Path)
    t.add_argument("--head", choices=("softmax", "sigmoid"), default="softmax")
    t.add_argument("--classes", type=int)
    t.add_argument("--hidden", type=_ints, default=(64, 64))
    t.add_argument("--dropout", type=float, default=0.0)
    t.add_argument("--confidence", action="store_true")
    t.add_argument("--autoencoder", action="store_true")
    t.add_argument("--bottleneck", type=int)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--weight-decay", type=float, default=0.01)
    t.add_argument("--lambda-init", type=float, default=0.1)
    t.add_argument("--budget", type=float, default=0.3)
    t.add_argument("--hint-probability", type=float, default=0.5)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("predict", help="logits, posteriors or an MC-dropout posterior stack")
    p.add_argument("--model", type=Path)
    p.add_argument("--features", type=Path)
    p.add_argument("--posteriors", action="store_true")
    p.add_argument("--passes", type=int, default=0, help="M >= 2 writes an M x N x K dropout stack")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    f = sub.add_parser("fit", help="fit KL templates or a density model")
    f.add_argument("name", choices=("klmatch", "lof", "iforest"))
    f.add_argument("--val-logits", type=Path)
    f.add_argument("--train", type=Path)
    f.add_argument("--out", type=Path, required=True)
    f.add_argument("--k", type=int, default=20)
    f.add_argument("--trees", type=int, default=100)
    f.add_argument("--subsample", type=int, default=256)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("score", help="compute anomaly scores (higher = more anomalous)")
    s.add_argument("name", choices=SCORERS)
    s.add_argument("--logits", type=Path)
    s.add_argument("--posteriors", type=Path)
    s.add_argument("--templates", type=Path)
    s.add_argument("--fitted", type=Path, help="fitted LOF / Isolation Forest model")
    s.add_argument("--model", type=Path, help="toy classifier or autoencoder")
    s.add_argument("--features", type=Path)
    s.add_argument("--background-index", type=int)
    s.add_argument("--stack", type=Path, help="M x ... x K posterior stack")
    s.add_argument("--passes", type=int, default=8)
    s.add_argument("--input", type=Path)
    s.add_argument("--reconstruction", type=Path)
    s.add_argument("--temperature", type=float, default=1000.0)
    s.add_argument("--epsilon", type=float, default=0.0)
    s.add_argument("--variant", choices=("msp", "maxlogit"), default="msp")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="AUROC / AUPR / FPR at recall")
    e.add_argument("--scores", type=Path, nargs="+", required=True)
    e.add_argument("--labels", type=Path, nargs="+", required=True)
    e.add_argument("--segmentation", action="store_true", help="average metrics per image")
    e.add_argument("--recall-level", type=float, default=0.95)
    e.add_argument("--curves", type=Path, help="directory for roc.csv and pr.csv")
    e.add_argument("--out", type=Path)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("demo", help="fine-grained mixture benchmark over several seeds")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--seeds", type=int, default=5)
    d.add_argument("--out-dir", type=Path)
    d.set_defaults(func=cmd_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"oodkit: error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"oodkit: {exc}", file=sys.stderr)
        return 3
    except UndefinedMetricError as exc:
        print(f"oodkit: undefined metric: {exc}", file=sys.stderr)
        return 4
    except (FileNotFoundError, FormatError, InvalidArgumentError, InvalidInputError,
            InvalidModelError, UnusableModelError, OODError) as exc:
        print(f"oodkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
