"""Command line front end.

Exit codes: 0 success, 1 bad invocation, 2 unusable input data, 3 numerical
failure. Diagnostics go to stderr; data goes to the named output files or to
stdout. Every file-producing run leaves a run-manifest next to its outputs so
results stay attributable to a command, seed, and config.

Heavy imports happen inside the command handlers: thread caps for the BLAS
pools must be in the environment before numpy loads.
"""

import argparse
import os
import sys
from pathlib import Path

from .errors import (
    CleaningError,
    ConfigError,
    DataError,
    DegenerateGeometryError,
    DetectionError,
    NumericalError,
    ShapeError,
    SynthesisError,
    TrainingDivergedError,
)

_VARIANT_CHOICES = ("default", "v_concate", "v_skip", "v_c32", "v_b123", "v_b135", "v_b15")

# invocation problems -> 1, unusable inputs -> 2, numerical failures -> 3
_USAGE_ERRORS = (ConfigError,)
_DATA_ERRORS = (DataError, ShapeError, DetectionError, CleaningError, SynthesisError, OSError)
_NUMERICAL_ERRORS = (NumericalError, DegenerateGeometryError, TrainingDivergedError)

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_thread_cap(argv) -> None:
    value = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
    if value is not None and not value.isdigit():
        return  # argparse reports it properly later
    for var in _THREAD_VARS:
        if value is not None:
            os.environ[var] = value
        else:
            os.environ.setdefault(var, "1")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _diag(message: str) -> None:
    print(message, file=sys.stderr)


def _sibling_manifest(out_path: Path) -> Path:
    return out_path.with_name(out_path.stem + ".run-manifest.txt")


def _write_run_manifest(path: Path, subcommand, seed=None, config_path=None, inputs=(), outputs=()):
    from . import __version__
    from .datafiles import RunManifest

    manifest = RunManifest(
        subcommand=subcommand,
        version=__version__,
        seed=seed,
        config_path=str(config_path) if config_path else None,
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs],
    )
    path.write_text(manifest.render())


def _network_options(sub):
    sub.add_argument("--variant", choices=_VARIANT_CHOICES, default="default")
    sub.add_argument("--grayscale", action="store_true", help="single-channel network")
    sub.add_argument("--cascade-channels", type=int, default=64)


def build_parser() -> _Parser:
    parser = _Parser(prog="demoire", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def sub(name, help_text):
        s = subs.add_parser(name, help=help_text)
        s.add_argument("--threads", type=int, default=1, help="BLAS thread cap (1 = reproducible)")
        return s

    s = sub("synth-dataset", "generate aligned moire/reference training pairs")
    s.add_argument("--out", required=True, help="dataset directory")
    s.add_argument("--pairs", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--reference-dir", default=None, help="use these images instead of generated ones")
    s.add_argument("--size", type=int, default=64, help="generated reference side length")

    s = sub("align", "register one screen photo against its reference")
    s.add_argument("--photo", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--out", required=True, help="aligned photo destination")
    s.add_argument("--eta", type=float, default=12.0, help="acceptance PSNR threshold, dB")
    s.add_argument("--threshold", type=float, default=None, help="binarization level, default Otsu")
    s.add_argument("--min-dist", type=float, default=10.0, help="corner dedup radius, px")

    s = sub("verify", "PSNR-gate every pair in a manifest")
    s.add_argument("--pairs", required=True, help="TSV manifest: photo<TAB>reference")
    s.add_argument("--eta", type=float, default=12.0)

    s = sub("train", "fit the restoration network on a pair manifest")
    s.add_argument("--train", required=True, dest="train_manifest")
    s.add_argument("--val", required=True, dest="val_manifest")
    s.add_argument("--out", required=True, help="checkpoint destination")
    s.add_argument("--config", default=None, help="key=value training config file")
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.add_argument("--epochs", type=int, default=None, help="overrides the config max_epochs")
    s.add_argument(
        "--init",
        choices=("gaussian", "he"),
        default="gaussian",
        help="weight init: fixed-scale gaussian, or he scaling for short runs",
    )
    _network_options(s)

    s = sub("infer", "restore one image with a trained checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)

    s = sub("eval", "score a checkpoint over a test manifest")
    s.add_argument("--model", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True, help="per-image TSV report")

    s = sub("inspect-branches", "export per-branch contribution maps")
    s.add_argument("--model", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--amplification", type=float, default=1.0)

    s = sub("param-count", "print the parameter count of a network variant")
    _network_options(s)

    return parser


# ---------------------------------------------------------------------------
# handlers


def _cmd_synth_dataset(args) -> int:
    from .synth import make_dataset

    out_dir = Path(args.out)
    manifests = make_dataset(
        out_dir, args.pairs, args.seed, reference_dir=args.reference_dir, size=args.size
    )
    _write_run_manifest(
        out_dir / "run-manifest.txt",
        "synth-dataset",
        seed=args.seed,
        inputs=[args.reference_dir] if args.reference_dir else [],
        outputs=[manifests[k].name for k in ("train", "val", "test")],
    )
    _diag(f"wrote {args.pairs} pairs under {out_dir}")
    return 0


def _cmd_align(args) -> int:
    from .image_io import read_image, write_image
    from .registration import align_pair

    photo = read_image(args.photo)
    reference = read_image(args.reference)
    result = align_pair(
        photo,
        reference,
        eta=args.eta,
        threshold=args.threshold,
        min_dist=args.min_dist,
    )
    if not result.accepted:
        _diag(
            f"verification rejected: psnr {result.psnr:.2f} dB is below eta {args.eta:.2f}; "
            "no output written"
        )
        return 2
    out = Path(args.out)
    write_image(out, result.aligned)
    _write_run_manifest(
        _sibling_manifest(out),
        "align",
        inputs=[args.photo, args.reference],
        outputs=[out],
    )
    _diag(
        f"aligned: psnr {result.psnr:.2f} dB, residual {result.residual:.3f} px, "
        f"{result.candidate_count} corner candidates"
    )
    return 0


def _cmd_verify(args) -> int:
    from .datafiles import read_manifest
    from .image_io import read_image
    from .registration import verify_pair

    manifest = Path(args.pairs)
    base = manifest.parent
    rows = read_manifest(manifest)
    if rows and len(rows[0]) < 2:
        raise DataError(f"{manifest}: rows need (photo, reference) columns")
    accepted = 0
    for row in rows:
        ok, value = verify_pair(read_image(base / row[0]), read_image(base / row[1]), eta=args.eta)
        accepted += ok
        print(f"{row[0]}\t{'accept' if ok else 'reject'}\t{value:.2f}")
    _diag(f"{accepted}/{len(rows)} pairs accepted at eta {args.eta:.2f}")
    return 0


def _cmd_train(args) -> int:
    import numpy as np

    from .network import build_network, save_checkpoint, variant_config
    from .synth import load_pairs
    from .training import TrainConfig, train

    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.epochs is not None:
        config.max_epochs = args.epochs

    net_config = variant_config(
        args.variant, grayscale=args.grayscale, cascade_channels=args.cascade_channels
    )
    net = build_network(net_config, seed=config.seed, dtype=np.float32, init=args.init)
    out = Path(args.out)
    result = train(
        net,
        load_pairs(args.train_manifest),
        load_pairs(args.val_manifest),
        config,
        log=_diag,
        dump_path=out.with_suffix(out.suffix + ".diverged"),
    )
    save_checkpoint(result.network, out)
    _write_run_manifest(
        _sibling_manifest(out),
        "train",
        seed=config.seed,
        config_path=args.config,
        inputs=[args.train_manifest, args.val_manifest],
        outputs=[out],
    )
    _diag(
        f"best val {result.best_val_loss:.6f} after {len(result.history)} epochs "
        f"({result.stopped}); checkpoint at {out}"
    )
    return 0


def _adapt_channels(image, channels: int):
    import numpy as np

    from .image_io import to_grayscale

    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[2] == channels:
        return image
    if channels == 1:
        return to_grayscale(image)
    return np.repeat(image[:, :, :1], channels, axis=2)


def _cmd_infer(args) -> int:
    from .image_io import read_image, write_image
    from .network import load_checkpoint, restore_image

    net = load_checkpoint(args.model)
    image = _adapt_channels(read_image(args.image), net.config.input_channels)
    restored = restore_image(net, image)
    out = Path(args.out)
    write_image(out, restored)
    _write_run_manifest(
        _sibling_manifest(out), "infer", inputs=[args.model, args.image], outputs=[out]
    )
    _diag(f"restored {args.image} -> {out}")
    return 0


def _cmd_eval(args) -> int:
    import numpy as np

    from .datafiles import read_manifest
    from .image_io import read_image
    from .metrics import mean_error, psnr, ssim
    from .network import load_checkpoint, restore_image

    net = load_checkpoint(args.model)
    manifest = Path(args.pairs)
    base = manifest.parent
    rows = read_manifest(manifest)
    if rows and len(rows[0]) < 2:
        raise DataError(f"{manifest}: rows need (photo, reference) columns")

    lines = ["#image\tinput_psnr\tpsnr\tgain\tave_error\tssim"]
    in_psnrs, out_psnrs, errors, ssims = [], [], [], []
    for row in rows:
        photo = _adapt_channels(read_image(base / row[0]), net.config.input_channels)
        reference = _adapt_channels(read_image(base / row[1]), net.config.input_channels)
        restored = restore_image(net, photo)
        pin = psnr(photo, reference)
        pout = psnr(restored, reference)
        err = mean_error(restored, reference)
        sim = ssim(restored, reference)
        in_psnrs.append(pin)
        out_psnrs.append(pout)
        errors.append(err)
        ssims.append(sim)
        lines.append(f"{row[0]}\t{pin:.4f}\t{pout:.4f}\t{pout - pin:+.4f}\t{err:.6f}\t{sim:.4f}")

    summary = [
        f"PSNR Mean\t{np.mean(out_psnrs):.4f}",
        f"PSNR Gain\t{np.mean(out_psnrs) - np.mean(in_psnrs):+.4f}",
        f"Ave Error\t{np.mean(errors):.6f}",
        f"SSIM\t{np.mean(ssims):.4f}",
    ]
    out = Path(args.out)
    out.write_text("\n".join(lines) + "\n\n" + "\n".join(summary) + "\n")
    _write_run_manifest(
        _sibling_manifest(out), "eval", inputs=[args.model, args.pairs], outputs=[out]
    )
    for line in summary:
        print(line)
    return 0


def _cmd_inspect_branches(args) -> int:
    from .image_io import read_image, write_image
    from .network import inspect_branches, load_checkpoint

    net = load_checkpoint(args.model)
    image = _adapt_channels(read_image(args.image), net.config.input_channels)
    report = inspect_branches(net, image, amplification=args.amplification)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for branch, maps in sorted(report.items()):
        path = out_dir / f"branch_{branch}.png"
        write_image(path, maps["amplified"])
        written.append(path.name)
    _write_run_manifest(
        out_dir / "run-manifest.txt",
        "inspect-branches",
        inputs=[args.model, args.image],
        outputs=written,
    )
    _diag(f"wrote {len(written)} branch maps under {out_dir}")
    return 0


def _cmd_param_count(args) -> int:
    from .network import param_count, variant_config

    config = variant_config(
        args.variant, grayscale=args.grayscale, cascade_channels=args.cascade_channels
    )
    print(param_count(config))
    return 0


_HANDLERS = {
    "synth-dataset": _cmd_synth_dataset,
    "align": _cmd_align,
    "verify": _cmd_verify,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "inspect-branches": _cmd_inspect_branches,
    "param-count": _cmd_param_count,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return _HANDLERS[args.command](args)
    except _USAGE_ERRORS as exc:
        _diag(f"error: {exc}")
        return 1
    except _DATA_ERRORS as exc:
        _diag(f"error: {exc}")
        return 2
    except _NUMERICAL_ERRORS as exc:
        _diag(f"error: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
