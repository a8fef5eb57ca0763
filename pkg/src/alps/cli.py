"""``alps`` command line.

Exit codes: 0 success, 2 configuration/usage error, 3 data/protocol error,
4 training diverged.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from alps import data as D
from alps.checkpoint import load_checkpoint
from alps.config import RunConfig, load_run_config, run_to_text
from alps.errors import AlpsError, ConfigError, DataError, DivergenceError, IngestionError
from alps.evaluation import run_class_vs_rest, run_frame_protocol
from alps.scoring import score_sample
from alps.training import train

log = logging.getLogger("alps")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

TEST_FILE_PAIRS = [("test-images.idx", "test-labels.idx"),
                   ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
                   ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz")]


# ------------------------------------------------------------------ train


def _training_data(run: RunConfig):
    """(train images, val images, val labels, split plan or None) at model resolution."""
    cfg = run.training
    if run.dataset in ("synthetic", "idx"):
        if run.dataset == "synthetic":
            corpus = D.blob_corpus(cfg.seed, run.synthetic_inliers, run.synthetic_outliers)
        else:
            corpus = D.load_idx(run.train_images, run.train_labels)
        split = D.make_split(corpus, run.inlier_class, cfg.seed, cfg.val_inliers, cfg.val_outliers)
        train_idx = split.train
        if run.max_train is not None and run.max_train < len(train_idx):
            rng = np.random.default_rng([cfg.seed, 29])
            train_idx = np.sort(rng.permutation(train_idx)[:run.max_train])
            split.train = train_idx
        x_train = D.to_model_input(corpus.images[train_idx], cfg.resolution)
        x_val = D.to_model_input(corpus.images[split.validation], cfg.resolution)
        return x_train, x_val, split.validation_labels, split
    if run.dataset == "frames":
        frames = D.load_frame_dir(run.frames_dir)
        normal = frames.frames[frames.labels == 0]
        patches = np.concatenate([D.extract_patches(f, run.patch_size) for f in normal])
        log.info("%d normal frames -> %d training patches", len(normal), len(patches))
        return D.to_model_input(patches, cfg.resolution), None, None, None
    images, _ = D.load_image_dir(run.patch_dir)
    return np.concatenate([D.to_model_input(im[None], cfg.resolution) for im in images]), None, None, None


def cmd_train(args) -> int:
    run = load_run_config(args.config, seed_override=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(run_to_text(run))
    x_train, x_val, y_val, split = _training_data(run)
    if split is not None:
        split.write_csv(out / "split.csv")
    meta = {"dataset": run.dataset}
    if run.inlier_class is not None:
        meta["inlier_class"] = str(run.inlier_class)
    result = train(run.training, x_train, x_val, y_val, out_dir=out, extra_meta=meta)
    best = result.best_epoch
    print(f"trained {run.training.epochs} epochs on {len(x_train)} images; best epoch: {best}; "
          f"chosen variant: {result.chosen_variant}")
    print(f"checkpoint: {out / 'best.ckpt'}")
    return EXIT_OK


# ------------------------------------------------------------------- eval


def _find_test_files(path: Path, labels: str | None) -> tuple[Path, Path]:
    if path.is_file():
        if labels is None:
            raise ConfigError("--labels is required when --data is an image file")
        return path, Path(labels)
    for images_name, labels_name in TEST_FILE_PAIRS:
        if (path / images_name).exists() and (path / labels_name).exists():
            return path / images_name, path / labels_name
    raise IngestionError(f"no test IDX pair found in {path} (looked for {', '.join(p[0] for p in TEST_FILE_PAIRS)})")


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    chosen = ckpt.meta.get("chosen_variant", ckpt.config.selection_variant)
    data_path = Path(args.data)
    if args.protocol == "class-vs-rest":
        inlier = args.inlier_class
        if inlier is None:
            if "inlier_class" not in ckpt.meta:
                raise ConfigError("--inlier-class is required (checkpoint does not record one)")
            inlier = int(ckpt.meta["inlier_class"])
        images_path, labels_path = _find_test_files(data_path, args.labels)
        test = D.load_idx(images_path, labels_path)
        report = run_class_vs_rest(ckpt.networks, test.images, test.labels, inlier, chosen)
    else:
        frames = D.load_frame_dir(data_path)
        rows, cols = D.patch_grid(frames.frames.shape[1:], args.patch_size)
        log.info("%d frames, %d patches/frame (%dx%d)", len(frames), rows * cols, rows, cols)
        report, _ = run_frame_protocol(ckpt.networks, frames.frames, frames.labels, args.patch_size,
                                       args.aggregation, chosen, frames.names)
    if args.out:
        report.write(args.out)
    sys.stdout.write(report.summary())
    return EXIT_OK


# ------------------------------------------------------------------ score


def _model_input(images: list[np.ndarray], resolution: int, resize: bool, names) -> np.ndarray:
    """Stack grayscale images as model input; without ``resize`` they must already match."""
    for image, name in zip(images, names):
        if not resize and image.shape != (resolution, resolution):
            raise DataError(f"{name}: image is {image.shape[0]}x{image.shape[1]}, checkpoint expects "
                            f"{resolution}x{resolution} (pass --resize to resample bilinearly)")
    return np.concatenate([D.to_model_input(im[None], resolution) for im in images])


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    x = _model_input([D.read_pgm(args.input)], ckpt.config.resolution, args.resize, [args.input])
    triple = score_sample(ckpt.networks, x)
    print(f"plain: {triple.plain!r}")
    print(f"perturbed: {triple.perturbed!r}")
    print(f"mean: {triple.mean!r}")
    return EXIT_OK


def reconstruction_grid(networks, images: np.ndarray) -> np.ndarray:
    """Rows of [input | reconstruction from the perturbed latent], values in [0, 1]."""
    from alps import tensor as T

    with T.no_grad():
        rec = networks.reconstruct(T.Tensor(images), perturbed=True).data
    return np.concatenate([np.concatenate([x[0], r[0]], axis=1) for x, r in zip(images, rec)], axis=0)


def cmd_reconstruct(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    src = Path(args.input)
    if src.is_dir():
        images, names = D.load_image_dir(src)
    else:
        images, names = [D.read_pgm(src)], [str(src)]
    x = _model_input(list(images), ckpt.config.resolution, args.resize, names)
    grid = reconstruction_grid(ckpt.networks, x)
    D.write_pgm(args.out, grid)
    print(f"wrote {len(images)}-row grid ({grid.shape[1]}x{grid.shape[0]}) to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------- data tools


def cmd_gen_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "blobs":
        train_set = D.blob_corpus(args.seed, args.inliers, args.outliers)
        test_set = D.blob_corpus(args.seed + 1, args.test_inliers, args.test_outliers)
        D.save_idx(out / "train-images.idx", out / "train-labels.idx", train_set)
        D.save_idx(out / "test-images.idx", out / "test-labels.idx", test_set)
        print(f"wrote {len(train_set)} training and {len(test_set)} test images to {out}")
    else:
        train_frames = D.gen_video(args.seed, args.train_frames, 0)
        test_frames = D.gen_video(args.seed + 1, args.normal_frames, args.abnormal_frames)
        D.save_frame_dir(out / "train", train_frames)
        D.save_frame_dir(out / "test", test_frames)
        print(f"wrote {len(train_frames)} training and {len(test_frames)} test frames to {out}")
    return EXIT_OK


def cmd_extract_patches(args) -> int:
    frame = D.read_pgm(args.input)
    patches = D.extract_patches(frame, args.patch_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for i, p in enumerate(patches):
        D.write_pgm(out / f"{stem}_patch_{i:03d}.pgm", p)
    print(f"wrote {len(patches)} patches to {out}")
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="alps", description="Adversarially perturbed autoencoders for "
                                     "one-class anomaly detection.", formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a key=value run config", formatter_class=fmt)
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides $ALPS_SEED and the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under a protocol", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="IDX test directory/file, or frame directory")
    p.add_argument("--protocol", choices=["class-vs-rest", "frames"], default="class-vs-rest")
    p.add_argument("--inlier-class", type=int, default=None, help="normal class (default: from checkpoint)")
    p.add_argument("--labels", default=None, help="label IDX file when --data is an image IDX file")
    p.add_argument("--aggregation", choices=["max", "mean"], default="max", help="frame score from patch scores")
    p.add_argument("--patch-size", type=int, default=D.PATCH)
    p.add_argument("--out", default=None, help="directory for report.csv, scores.csv, summary.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="print the raw score triple of one image", formatter_class=fmt)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="grayscale PGM image")
    p.add_argument("--resize", action="store_true", help="resample inputs of another size to the model resolution")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("reconstruct", help="write an input|reconstruction grid", formatter_class=fmt)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="PGM image or directory of PGM images")
    p.add_argument("--out", required=True, help="output PGM")
    p.add_argument("--resize", action="store_true", help="resample inputs of another size to the model resolution")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset", formatter_class=fmt)
    p.add_argument("--kind", choices=["blobs", "video"], default="blobs")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--inliers", type=int, default=2150, help="blobs: class-0 training images")
    p.add_argument("--outliers", type=int, default=300, help="blobs: class-1/2 training images")
    p.add_argument("--test-inliers", type=int, default=500)
    p.add_argument("--test-outliers", type=int, default=500)
    p.add_argument("--train-frames", type=int, default=8, help="video: normal training frames")
    p.add_argument("--normal-frames", type=int, default=10, help="video: normal test frames")
    p.add_argument("--abnormal-frames", type=int, default=10, help="video: abnormal test frames")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("extract-patches", help="tile a PGM frame into square patches", formatter_class=fmt)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=D.PATCH)
    p.set_defaults(func=cmd_extract_patches)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AlpsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
