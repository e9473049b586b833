"""Command-line entry point: ``cryonet <command> [options]``.

Exit codes: 0 success, 2 validation error (bad config, missing input,
inconsistent artifacts), 3 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as runconfig
from .dataset import PatchSet, class_weights, patchify, split
from .evaluate import RegistryError, confusion, metrics, predict_scene, write_report
from .features import PcaLoadings, TasseledCapCoefficients
from .importance import channel_importance
from .labels import IGNORE, LabelMask, labels_from_stack
from .nn.checkpoint import Checkpoint
from .pipeline import build_feature_stack, collect_sources
from .raster import BandStack, RasterError, normalize_stack, read_stack, save_stats, write_stack
from .synthetic import synth_scene
from .train import fine_tune, train, write_history

log = logging.getLogger("cryonet")

PALETTE = {
    0: (128, 128, 128),  # background
    1: (215, 235, 255),  # clean ice
    2: (139, 90, 43),    # debris-covered
    3: (30, 90, 200),    # water
    4: (40, 160, 60),    # vegetation
    IGNORE: (0, 0, 0),
}


class UsageError(Exception):
    """Validation failure reported with exit code 2."""


def _need(path, producer, what="file"):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {p} not found; produce it with `cryonet {producer}`")
    return p


def _out_dir(args):
    if not args.out:
        raise UsageError("--out is required")
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _echo(cfg, out_dir, command, argv):
    doc = {"command": command, "argv": list(argv), "config": cfg.to_dict()}
    (out_dir / "resolved_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def render_png(classes, path):
    from PIL import Image

    rgb = np.zeros(classes.shape + (3,), dtype=np.uint8)
    for cls, color in PALETTE.items():
        rgb[classes == cls] = color
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG", optimize=False)


def _fill_nodata(stack: BandStack, value=0.0):
    bad = stack.data == np.float32(stack.nodata)
    if not bad.any():
        return stack
    data = stack.data.copy()
    data[bad] = value
    return BandStack(stack.geometry, stack.names, stack.roles, data, stack.nodata)


# ------------------------------------------------------------------ commands

def cmd_synth_scene(args, cfg):
    s = cfg.synth
    stack, labels = synth_scene(s.size, s.bands, tuple(s.informative), cfg.seed, s.noise,
                                s.separation, s.texture, s.shift)
    out = _out_dir(args)
    write_stack(stack, out / "stack.cryo")
    write_stack(labels.to_stack(), out / "labels.cryo")
    return out


def cmd_build_stack(args, cfg):
    if not args.inputs:
        raise UsageError("build-stack needs at least one input stack file")
    stacks = [read_stack(_need(p, "build-stack", "input stack")) for p in args.inputs]
    f = cfg.features
    sources = collect_sources(stacks, f.resample_method)
    tc = TasseledCapCoefficients.from_json(f.tasseled_cap) if f.tasseled_cap else None
    loadings = PcaLoadings.load(f.pca_loadings) if f.pca_loadings else None
    stack, loadings = build_feature_stack(sources, f.glcm(), f.glcm_band, f.pca_components,
                                          f.pca_standardize, loadings, tc)
    out = _out_dir(args)
    write_stack(stack, out / "stack.cryo")
    loadings.save(out / "pca_loadings.json")
    return out


def _read_mask(path):
    s = read_stack(_need(path, "build-stack", "mask"))
    return s.data[0] > 0.5 if s.data.dtype != np.uint8 else s.data[0] > 0


def cmd_make_labels(args, cfg):
    stack = read_stack(_need(args.stack, "build-stack", "feature stack"))
    if not args.glacier or not args.debris:
        raise UsageError("make-labels needs --glacier and --debris mask files")
    lab = cfg.labels
    mask, counts = labels_from_stack(stack, _read_mask(args.glacier), _read_mask(args.debris),
                                     tuple(lab.priority), lab.water_threshold, lab.vegetation_threshold)
    out = _out_dir(args)
    write_stack(mask.to_stack(), out / "labels.cryo")
    (out / "class_counts.json").write_text(json.dumps([int(c) for c in counts]) + "\n")
    return out


def cmd_patchify(args, cfg):
    stack = read_stack(_need(args.stack, "build-stack", "feature stack"))
    labels = LabelMask.from_stack(read_stack(_need(args.labels, "make-labels", "label mask")))
    p = cfg.patches
    norm, stats = normalize_stack(stack)
    norm = _fill_nodata(norm)
    ps = patchify(norm, labels, p.patch_size, p.stride or p.patch_size, cfg.seed)
    ps = split(ps, p.train_fraction, cfg.seed)
    _, y = ps.arrays("train")
    ps.class_weights = class_weights(y, cfg.model_config().classes)
    out = _out_dir(args)
    ps.save(out)
    save_stats(stack, stats, out / "stats.json")
    return out


def _load_patches(path):
    d = _need(path, "patchify", "patch set directory")
    _need(d / "manifest.json", "patchify", "patch manifest")
    return PatchSet.load(d), d


def _attach_stats(ckpt, patch_dir):
    stats_path = patch_dir / "stats.json"
    if stats_path.exists():
        ckpt.meta["norm_stats"] = json.loads(stats_path.read_text())


def cmd_train(args, cfg):
    ps, d = _load_patches(args.patches)
    res = train(cfg.model_config(), ps, cfg.train_config())
    out = _out_dir(args)
    for ck in (res.final, res.best):
        _attach_stats(ck, d)
    res.final.save(out / "final.ckpt")
    res.best.save(out / "best.ckpt")
    write_history(res.history, out / "history.csv")
    return out


def cmd_fine_tune(args, cfg):
    ckpt = Checkpoint.load(_need(args.checkpoint, "train", "checkpoint"))
    ps, _ = _load_patches(args.patches)
    iterations = args.iterations if args.iterations is not None else 50
    tuned = fine_tune(ckpt, ps, iterations, cfg.train_config())
    out = _out_dir(args)
    tuned.save(out / "fine_tuned.ckpt")
    return out


def cmd_predict(args, cfg):
    ckpt = Checkpoint.load(_need(args.checkpoint, "train", "checkpoint"))
    stack = read_stack(_need(args.stack, "build-stack", "feature stack"))
    stats = ckpt.meta.get("norm_stats")
    if stats is not None:
        names = [r["name"] for r in stats]
        missing = [n for n in names if n not in stack.names]
        if missing:
            raise RegistryError(f"stack is missing bands required by the model: {missing}")
        stack = stack.select(names)
        stack, _ = normalize_stack(stack, [(r["mean"], r["std"]) for r in stats])
    stack = _fill_nodata(stack)
    p = cfg.predict
    mask, probs = predict_scene(ckpt, stack, p.patch_size, p.stride, p.batch_size)
    out = _out_dir(args)
    write_stack(mask.to_stack("classes"), out / "classes.cryo")
    write_stack(probs, out / "probabilities.cryo")
    render_png(mask.classes, out / "classes.png")
    return out


def cmd_evaluate(args, cfg):
    pred = LabelMask.from_stack(read_stack(_need(args.pred, "predict", "prediction")))
    truth = LabelMask.from_stack(read_stack(_need(args.truth, "make-labels", "label mask")))
    cm = confusion(pred, truth)
    out = _out_dir(args)
    write_report(metrics(cm), cm, out / "metrics.json", out / "metrics.csv")
    return out


def cmd_importance(args, cfg):
    ckpt = Checkpoint.load(_need(args.checkpoint, "train", "checkpoint"))
    ps, _ = _load_patches(args.patches)
    bands = None
    if args.band:
        bands = []
        for b in args.band:
            if b in ps.band_names:
                bands.append(ps.band_names.index(b))
            elif b.isdigit() and int(b) < len(ps.band_names):
                bands.append(int(b))
            else:
                raise UsageError(f"unknown band {b!r}; patch set bands are {ps.band_names}")
    report = channel_importance(ckpt, ps, cfg.seed, cfg.importance.repeats, bands)
    out = _out_dir(args)
    report.to_csv(out / "importance.csv")
    return out


COMMANDS = {
    "synth-scene": (cmd_synth_scene, "generate the synthetic 5-class test scene"),
    "build-stack": (cmd_build_stack, "derive the 30-band feature stack from source rasters"),
    "make-labels": (cmd_make_labels, "synthesize the 5-class label mask"),
    "patchify": (cmd_patchify, "normalize, cut into patches and split train/test"),
    "train": (cmd_train, "train the segmentation network"),
    "fine-tune": (cmd_fine_tune, "fine-tune a checkpoint on a new patch set"),
    "predict": (cmd_predict, "full-scene prediction with Hann-weighted merging"),
    "evaluate": (cmd_evaluate, "metrics of a prediction against a label mask"),
    "importance": (cmd_importance, "permutation channel importance on the test split"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--patch-size", type=int)
    common.add_argument("--stride", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--band", action="append", help="band name or index (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cryonet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "build-stack":
            p.add_argument("inputs", nargs="*")
        if name in ("make-labels", "patchify", "predict"):
            p.add_argument("--stack")
        if name == "make-labels":
            p.add_argument("--glacier")
            p.add_argument("--debris")
        if name == "patchify":
            p.add_argument("--labels")
        if name in ("train", "fine-tune", "importance"):
            p.add_argument("--patches")
        if name in ("fine-tune", "predict", "importance"):
            p.add_argument("--checkpoint")
        if name == "fine-tune":
            p.add_argument("--iterations", type=int)
        if name == "train":
            p.add_argument("--max-steps", type=int)
            p.add_argument("--batch-size", type=int)
        if name == "evaluate":
            p.add_argument("--pred")
            p.add_argument("--truth")
    return parser


def resolve_config(args):
    cfg = runconfig.load(args.config) if args.config else runconfig.RunConfig()
    train = dict(cfg.train)
    if args.seed is not None:
        cfg.seed = args.seed
        train["seed"] = args.seed
    if args.patch_size is not None:
        cfg.patches.patch_size = args.patch_size
        cfg.predict.patch_size = args.patch_size
    if args.stride is not None:
        cfg.patches.stride = args.stride
        cfg.predict.stride = args.stride
    if args.epochs is not None:
        train["epochs"] = args.epochs
    if args.lr is not None:
        train["learning_rate"] = args.lr
    if getattr(args, "max_steps", None) is not None:
        train["max_steps"] = args.max_steps
    if getattr(args, "batch_size", None) is not None:
        train["batch_size"] = args.batch_size
    cfg.train = train
    cfg = runconfig.from_dict(cfg.to_dict())  # re-validate with overrides applied
    return cfg


@contextlib.contextmanager
def _thread_cap():
    n = os.environ.get("CRYOSTACK_THREADS")
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(n)):
        yield


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, _ = COMMANDS[args.command]
    try:
        cfg = resolve_config(args)
        with _thread_cap():
            out = fn(args, cfg)
        _echo(cfg, Path(out), args.command, sys.argv[1:] if argv is None else argv)
    except (UsageError, runconfig.RunConfigError, RegistryError, RasterError) as exc:
        print(f"cryonet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"cryonet {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
