"""Command-line entry point: ``kinface <command> [options]``.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numeric failure.
Logs go to stderr; results go to files under ``--out-dir`` and a short
summary to stdout.
"""

from __future__ import annotations

import argparse
import collections
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import imaging
from .augment import apply_affine, augment_family
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .errors import ConfigError, ImageIOError, ManifestError, NumericError
from .numerics import (
    INPUT_DIM, OUTPUT_DIM, MlpParams, dropout_keep, finite_diff_gradcheck, seeded_rng,
)

log = logging.getLogger("kinface")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-5


def _global_flags():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="YAML or JSON run configuration")
    parent.add_argument("--seed", type=int, help="override the run seed")
    parent.add_argument("--out-dir", help="directory for all outputs")
    parent.add_argument("--strict", action="store_true", default=None,
                        help="turn recoverable input problems into errors")
    parent.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.lr=1e-4 (repeatable)")
    parent.add_argument("-v", "--verbose", action="store_true")
    return parent


def build_parser():
    g = _global_flags()
    parser = argparse.ArgumentParser(prog="kinface", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", parents=[g], help="write augmented copies of a dataset")
    p.add_argument("--manifest")

    p = sub.add_parser("colorize", parents=[g], help="render label maps as colour images")
    p.add_argument("labels", nargs="+")
    p.add_argument("--palette", help="palette JSON (11 [r, g, b] triples)")

    p = sub.add_parser("train", parents=[g], help="train the latent aggregator")
    p.add_argument("--manifest")

    p = sub.add_parser("predict", parents=[g], help="predict a child from two parents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--father", required=True)
    p.add_argument("--mother", required=True)

    p = sub.add_parser("eval", parents=[g], help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", choices=["train", "val", "all"])

    p = sub.add_parser("gradcheck", parents=[g], help="verify MLP gradients numerically")
    p.add_argument("--full", action="store_true", help="use the full-size network")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--batch", type=int, default=4)

    p = sub.add_parser("synth", parents=[g], help="write a synthetic family dataset")
    p.add_argument("--families", type=int, default=64)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--factors", type=int, default=8)
    return parser


def resolve_config(args) -> RunConfig:
    flags = {"seed": args.seed, "out_dir": args.out_dir, "strict": args.strict}
    if getattr(args, "manifest", None):
        flags["manifest"] = args.manifest
    if getattr(args, "split", None):
        flags["eval.split"] = args.split
    return load_config(args.config, args.set, **flags)


def _manifest(cfg: RunConfig):
    from .pipeline import load_manifest

    if not cfg.manifest:
        raise ConfigError("no manifest given (use --manifest or the 'manifest' config key)")
    return load_manifest(cfg.manifest, cfg.seed, cfg.train.train_fraction)


def cmd_augment(cfg: RunConfig, out: Path, args) -> int:
    from .pipeline import FamilyImages, family_rng

    manifest = _manifest(cfg)
    images = FamilyImages(use_segmentation=False)
    counts = collections.Counter()
    augmented = 0
    for fam in manifest.families:
        father, mother, child = (images.get(fam, r) for r in ("father", "mother", "child"))
        res = augment_family(father, mother, child, cfg.augment,
                             family_rng(cfg, fam.family_id), cfg.strict)
        changed = bool(res.applied["mixup"] or res.applied["father"] or res.applied["jitter"])
        augmented += changed
        if res.applied["mixup"]:
            counts["mixup"] += 1
        for role in ("father", "mother"):
            for op in res.applied[role]:
                counts[op.kind] += 1
        if res.applied["jitter"]:
            counts["jitter"] += 2
        for role, img in (("father", res.father), ("mother", res.mother), ("child", child)):
            dst = out / _relative(fam.image_path(role), manifest.root)
            if changed and role != "child":
                imaging.save_image(img, dst)
            else:
                _copy(fam.image_path(role), dst)
            lpath = fam.labels_path(role)
            if lpath is None:
                continue
            ldst = out / _relative(lpath, manifest.root)
            ops = res.applied.get(role, []) if role != "child" else []
            if role != "child" and res.applied["mixup"]:
                log.warning("family %s: %s labels dropped (MixUp has no label map)",
                            fam.family_id, role)
                continue
            if ops:
                lab = imaging.load_labelmap(lpath)
                for op in ops:
                    lab = apply_affine(lab, op, interpolation="nearest")
                imaging.save_labelmap(lab, ldst)
            else:
                _copy(lpath, ldst)
    _write_augmented_manifest(manifest, out, counts)
    print(f"families: {len(manifest.families)}")
    print(f"augmented: {augmented}")
    for kind in ("mixup", "shear_x", "shear_y", "translate_x", "translate_y", "rotate",
                 "hflip", "jitter"):
        print(f"{kind}: {counts[kind]}")
    return EXIT_OK


def _relative(path, root):
    try:
        return Path(path).relative_to(root)
    except ValueError:
        return Path(Path(path).name)


def _copy(src, dst):
    dst.parent.mkdir(parents=True, exist_ok=True)
    try:
        shutil.copyfile(src, dst)
    except OSError as exc:
        raise ImageIOError(f"cannot copy {src} to {dst}: {exc}") from exc


def _write_augmented_manifest(manifest, out, counts):
    import json

    data = manifest.to_json()
    for row in data["families"]:
        for key in list(row):
            if key.endswith("_labels") and not (out / row[key]).is_file():
                del row[key]
    (out / "manifest.json").write_text(json.dumps(data, indent=2) + "\n")


def cmd_colorize(cfg: RunConfig, out: Path, args) -> int:
    palette = imaging.load_palette(args.palette) if args.palette else imaging.DEFAULT_PALETTE
    for path in args.labels:
        labels = imaging.load_labelmap(path)
        dst = out / f"{Path(path).stem}.png"
        imaging.save_image(imaging.colorize_labels(labels, palette), dst)
        print(dst)
    imaging.save_palette(palette, out / "palette.json")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    from .pipeline import train

    manifest = _manifest(cfg)

    def report(epoch, tr, va):
        log.info("epoch %d train_mse %.6g val_mse %s", epoch, tr,
                 "n/a" if va is None else f"{va:.6g}")

    ckpt, history = train(manifest, cfg, on_epoch=report)
    save_checkpoint(ckpt, out / "checkpoint.bin")
    history.write(out)
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    print(f"best_epoch: {ckpt.meta['best_epoch']}")
    if history.epochs:
        print(f"final_train_mse: {history.train_mse[-1]:.6g}")
        if history.val_mse[-1] is not None:
            print(f"final_val_mse: {history.val_mse[-1]:.6g}")
    return EXIT_OK


def _codec_input(path, cfg: RunConfig):
    if cfg.train.use_segmentation:
        return imaging.colorize_labels(imaging.load_labelmap(path))
    return imaging.load_image(path)


def cmd_predict(cfg: RunConfig, out: Path, args) -> int:
    from .pipeline import predict

    ckpt = load_checkpoint(args.checkpoint)
    z, img = predict(ckpt, _codec_input(args.father, cfg), _codec_input(args.mother, cfg), cfg)
    imaging.save_image(img, out / "child.png")
    np.save(out / "child_latent.npy", z)
    print(f"child_image: {out / 'child.png'}")
    print(f"child_latent: {out / 'child_latent.npy'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: Path, args) -> int:
    from .evaluation import evaluate, format_table, write_report

    ckpt = load_checkpoint(args.checkpoint)
    report = evaluate(ckpt, _manifest(cfg), cfg)
    write_report(report, out / "report.csv", "csv")
    write_report(report, out / "report.json", "json")
    print(format_table(report))
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, out: Path, args) -> int:
    rng = seeded_rng(cfg.seed, "gradcheck")
    dims = (INPUT_DIM, 512, OUTPUT_DIM) if args.full else (24, 16, 12)
    params = MlpParams.init(rng, *dims)
    params.b1[:] = 0.1 * rng.standard_normal(dims[1])
    x = rng.standard_normal((args.batch, dims[0]))
    target = rng.standard_normal((args.batch, dims[2]))
    keep = dropout_keep(rng, (args.batch, dims[1]), params.dropout_p)
    err, info = finite_diff_gradcheck(params, x, target, eps=args.eps, keep=keep,
                                      max_per_array=500 if args.full else None,
                                      seed=cfg.seed, return_details=True)
    ok = err < GRADCHECK_TOL
    print(f"max_rel_err: {err:.3e}")
    print(f"checked: {info['checked']} skipped_kinks: {info['skipped_kinks']}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_synth(cfg: RunConfig, out: Path, args) -> int:
    from .synthetic import make_synthetic_dataset

    make_synthetic_dataset(out, n_families=args.families, size=args.size,
                           n_factors=args.factors, seed=cfg.seed,
                           train_fraction=cfg.train.train_fraction)
    print(f"manifest: {out / 'manifest.json'}")
    return EXIT_OK


COMMANDS = {
    "augment": cmd_augment,
    "colorize": cmd_colorize,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, out / "config.json")
        return COMMANDS[args.command](cfg, out, args)
    except (ConfigError, ManifestError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (ImageIOError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
