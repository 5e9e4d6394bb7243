"""Command-line entry point: ``vialnet <command> [options]``.

Commands and their files under ``--out``:

* ``synth``     images/*.png, manifest.csv
* ``augment``   images/*.png, manifest.csv, transforms.txt
* ``train``     model.ckpt, history.csv, replications.csv, metrics.txt,
                confusion.csv, roc.csv (2 labels only), test.csv
* ``crossval``  folds.txt, folds.csv
* ``eval``      metrics.txt, confusion.csv, roc.csv (2 labels only),
                postval.txt (with ``--originals``)
* ``explain``   saliency.png, ig.png, stats.txt

Exit codes: 0 success, 2 usage error, 3 file error, 4 validation error.
``VIALNET_THREADS`` caps the number of BLAS threads.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import augment as A
from . import evaluation as E
from . import interpret as I
from .data import CLASS_NAMES, Dataset, kfold, read_manifest, split, synth_generate, write_dataset, write_manifest_lines
from .errors import CheckpointError, RasterError, VialnetError
from .model import image_to_input, load_checkpoint, save_checkpoint
from .optim import TrainConfig, evaluate, train, train_replications
from .raster import load_raster, save_raster

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4

log = logging.getLogger("vialnet")


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_train_flags(p, replications=True):
    d = TrainConfig()
    p.add_argument("--epochs", type=_positive_int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--batch", type=_positive_int, default=d.batch_size)
    p.add_argument("--wd", type=float, default=d.weight_decay)
    if replications:
        p.add_argument("--replications", type=_positive_int, default=d.replications)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vialnet", description="Vial fill-state classifier toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--per-class", type=_positive_int, default=100)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distractor", action="store_true", help="draw a white ring distractor")
    p.add_argument("--out", required=True)

    p = sub.add_parser("augment", help="apply the training pipeline or a validation set pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--set", type=int, choices=(1, 2, 3, 4), help="validation set id; default is the training pipeline")
    p.add_argument("--pipeline", help="custom pipeline file (overrides the built-in one)")
    p.add_argument("--scenario", type=int, choices=(2, 4), default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="split, train, save the best checkpoint and report test metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scenario", type=int, choices=(2, 4), default=2)
    p.add_argument("--res", type=int, help="expected image side; checked against the manifest")
    _add_train_flags(p)
    p.add_argument("--test-fraction", type=float, default=0.15)
    p.add_argument("--group-by-source", action="store_true",
                   help="keep all variants of one source image on the same side of the split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scenario", type=int, choices=(2, 4), default=2)
    p.add_argument("--k", type=int, default=5)
    _add_train_flags(p, replications=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scenario", type=int, choices=(2, 4))
    p.add_argument("--originals", help="manifest of original images for the four post-validation sets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="saliency and integrated-gradients heatmaps for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--target", type=int, help="class to attribute; default is the predicted class")
    p.add_argument("--steps", type=_positive_int, default=I.DEFAULT_IG_STEPS)
    p.add_argument("--out", required=True)
    return parser


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def _config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, weight_decay=args.wd,
                       replications=getattr(args, "replications", 1))


def _class_names(n: int) -> list[str]:
    return [CLASS_NAMES[n][i] for i in range(n)]


def _report(out: Path, net, ds: Dataset, batch: int = 64) -> float:
    """Write metrics.txt, confusion.csv and (for 2 labels) roc.csv; return accuracy."""
    n = net.n_classes
    labels = ds.labels(n)
    loss, acc, probs = evaluate(net, ds.inputs(), labels, batch)
    cm = E.confusion(np.argmax(probs, axis=1), labels, n)
    report = E.metrics_for(cm)
    text = f"images {cm.total}\ncorrect {cm.correct}\nloss {loss:.6f}\n" + report.to_text()
    _write(out / "metrics.txt", text)
    _write(out / "confusion.csv", cm.to_csv(_class_names(n)))
    if n == 2 and 0 < int(np.sum(labels == E.POSITIVE_CLASS)) < len(labels):
        roc = E.roc_auc(probs[:, E.POSITIVE_CLASS], labels == E.POSITIVE_CLASS)
        _write(out / "roc.csv", roc.to_csv())
        with open(out / "metrics.txt", "a") as fh:
            fh.write(f"auc {roc.auc:.6f}\n")
    return acc


def cmd_synth(args) -> None:
    ds = synth_generate(args.per_class, args.res, args.seed, args.distractor)
    write_dataset(ds, _out_dir(args.out))


def cmd_augment(args) -> None:
    originals = read_manifest(args.manifest, args.scenario)
    pipeline = None
    if args.pipeline:
        expected = A.VALIDATION_VARIANTS if args.set else None
        pipeline = A.parse_pipeline(Path(args.pipeline).read_text(), Path(args.pipeline).stem, expected)
    if args.set:
        ds = A.build_validation_set(originals, args.set, args.scenario, args.seed, pipeline=pipeline)
        prefix = f"val{args.set}"
    else:
        ds = A.build_training_set(originals, args.seed, pipeline)
        prefix = "aug"
    out = _out_dir(args.out)
    write_dataset(ds, out, prefix=prefix)
    _write(out / "transforms.txt", "".join(f"{it.source} {it.tag}\n" for it in ds.items))


def _load_for_training(args) -> Dataset:
    ds = read_manifest(args.manifest, args.scenario)
    if not ds.items:
        raise VialnetError(f"manifest {args.manifest} lists no images")
    shapes = {it.image.shape for it in ds.items}
    if len(shapes) != 1:
        raise VialnetError(f"manifest images differ in size: {sorted(shapes)}")
    (h, w, _), = shapes
    if h != w:
        raise VialnetError(f"images must be square, got {h}x{w}")
    if getattr(args, "res", None) and args.res != h:
        raise VialnetError(f"--res {args.res} does not match image side {h}")
    return ds


def cmd_train(args) -> None:
    ds = _load_for_training(args)
    tr, te = split(ds, args.test_fraction, args.seed, args.group_by_source)
    cfg = _config(args)
    n = args.scenario
    log_every = 1 if args.verbose else 0
    net, runs, best = train_replications(tr.inputs(), tr.labels(), te.inputs(), te.labels(), cfg, args.seed, n,
                                         log_every=log_every)
    out = _out_dir(args.out)
    save_checkpoint(net, out / "model.ckpt")
    log.info("wrote %s", out / "model.ckpt")
    _write(out / "history.csv", runs[best].history_csv())
    rows = ["replication,seed,best_epoch,test_acc,test_loss,final_train_loss"]
    for r, run in enumerate(runs):
        values = (run.best_test_acc, run.best_test_loss, run.history[-1].train_loss)
        rows.append(f"{r},{run.seed},{run.best_epoch}," + ",".join(repr(float(v)) for v in values))
    rows.append(f"mean,,,{float(np.mean([r.best_test_acc for r in runs]))!r},,")
    _write(out / "replications.csv", "\n".join(rows) + "\n")
    _report(out, net, te, cfg.batch_size)
    manifest_dir = Path(args.manifest).resolve().parent
    paths = [os.path.relpath(manifest_dir / it.tag, out.resolve()) for it in te.items]
    write_manifest_lines(paths, te.items, out / "test.csv")


def cmd_crossval(args) -> None:
    if args.k < 2:
        raise UsageError(f"--k must be at least 2, got {args.k}")
    ds = _load_for_training(args)
    plan = kfold(len(ds), args.k, args.seed)
    cfg = _config(args)
    labels = ds.labels()
    x = ds.inputs()
    accs = []
    for i in range(args.k):
        tr, va = plan.train_indices(i), plan.validation_indices(i)
        _, run = train(x[tr], labels[tr], x[va], labels[va], cfg, args.seed + i, args.scenario)
        accs.append(run.history[-1].test_acc)
        log.info("fold %d accuracy %.5f", i + 1, accs[-1])
    summary = E.FoldSummary(tuple(accs))
    out = _out_dir(args.out)
    _write(out / "folds.txt", summary.to_text())
    _write(out / "folds.csv", summary.to_csv())


def _checkpoint_for(args):
    net = load_checkpoint(args.checkpoint)
    if getattr(args, "scenario", None) and args.scenario != net.n_classes:
        raise VialnetError(f"checkpoint has {net.n_classes} output labels, --scenario is {args.scenario}")
    return net


def cmd_eval(args) -> None:
    net = _checkpoint_for(args)
    ds = read_manifest(args.manifest, net.n_classes)
    out = _out_dir(args.out)
    _report(out, net, ds)
    if args.originals:
        originals = read_manifest(args.originals, net.n_classes)
        sets = {s: A.build_validation_set(originals, s, net.n_classes, args.seed) for s in (1, 2, 3, 4)}
        errors = E.post_validate(net, sets)
        _write(out / "postval.txt", E.format_post_validation(errors))


def cmd_explain(args) -> None:
    net = _checkpoint_for(args)
    x = image_to_input(load_raster(args.image), np.float64)
    net64 = net.astype(np.float64)
    target = int(net64.predict(x)) if args.target is None else args.target
    sal = I.saliency(net64, x, target)
    ig = I.integrated_gradients(net64, x, target, steps=args.steps)
    attributed, diff = I.completeness_residual(net64, x, ig)
    out = _out_dir(args.out)
    save_raster(I.render_heatmap(sal), out / "saliency.png")
    save_raster(I.render_heatmap(ig), out / "ig.png")
    _write(out / "stats.txt", I.stats_text([
        ("target", target),
        ("target_name", CLASS_NAMES[net.n_classes][target]),
        ("ig_steps", args.steps),
        ("saliency_min", sal.min), ("saliency_max", sal.max),
        ("ig_min", ig.min), ("ig_max", ig.max),
        ("ig_sum", attributed), ("logit_difference", diff),
        ("completeness_residual", attributed - diff),
    ]))


COMMANDS = {
    "synth": cmd_synth, "augment": cmd_augment, "train": cmd_train,
    "crossval": cmd_crossval, "eval": cmd_eval, "explain": cmd_explain,
}


def _thread_limit():
    raw = os.environ.get("VIALNET_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"VIALNET_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"VIALNET_THREADS must be >= 1, got {n}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        limit = _thread_limit()
        if limit is None:
            COMMANDS[args.command](args)
        else:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=limit):
                COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vialnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RasterError, CheckpointError) as exc:
        print(f"vialnet: file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VialnetError as exc:
        print(f"vialnet: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
