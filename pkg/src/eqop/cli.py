"""Command-line entry point: gen-data, train, eval, verify.

Only the standard library is imported at module scope so the EQOP_THREADS
cap can be applied to the BLAS thread-count environment variables before
numpy ever loads. Exit codes are a stable contract: 0 success, 1 I/O,
2 usage or configuration, 3 verification failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

from .errors import EqopError, ParseError

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_VERIFY = 3

_THREAD_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _configure_threads() -> None:
    """Apply the EQOP_THREADS cap before any numerical library loads."""
    value = os.environ.get("EQOP_THREADS")
    if value is None or value == "":
        return
    try:
        count = int(value)
    except ValueError:
        raise EqopError(f"EQOP_THREADS must be an integer, got {value!r}")
    if count < 1:
        raise EqopError(f"EQOP_THREADS must be >= 1, got {count}")
    for var in _THREAD_VARS:
        os.environ[var] = str(count)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_json_atomic(payload, path) -> None:
    blob = (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode()
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _write_text_atomic(text: str, path) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _tool_version() -> str:
    from . import __version__

    return __version__


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    from .imaging import (
        build_pairs,
        build_pairs_augmented,
        dataset_spec,
        gen_shapes,
        load_idx,
        save_dataset,
        split,
    )

    orders = (args.rot, args.tx, args.ty)
    if args.kind == "shapes":
        base = gen_shapes(args.count, args.seed, size=args.size)
        source = {"kind": "shapes", "size": args.size}
    else:
        if not args.idx_images:
            raise EqopError("--kind mnist requires --idx-images")
        images, _ = load_idx(args.idx_images, args.idx_labels)
        if args.count > len(images):
            raise EqopError(
                f"requested {args.count} images, the file holds {len(images)}"
            )
        base = images[: args.count]
        source = {"kind": "mnist", "idx_images": os.fspath(args.idx_images)}
    builder = build_pairs_augmented if args.pairing == "augmented" else build_pairs
    samples = builder(
        base, orders, cap=args.cap, seed=args.seed, rot_method=args.rot_method
    )
    provenance = dict(source)
    provenance.update(
        {
            "count": args.count,
            "seed": args.seed,
            "orders": {"rot": args.rot, "tx": args.tx, "ty": args.ty},
            "cap": args.cap,
            "rot_method": args.rot_method,
            "pairing": args.pairing,
        }
    )
    bundle = split(samples, dataset_spec(orders), args.seed, provenance)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "dataset.eqds")
    save_dataset(bundle, out_path)
    print(
        f"wrote {out_path}: {len(bundle.train)} train / {len(bundle.val)} val / "
        f"{len(bundle.test)} test pairs"
    )
    return EXIT_OK


def _load_train_config(args):
    from .models import TrainConfig

    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    config = TrainConfig.from_dict(raw)
    overrides = {}
    for flag, field in (
        ("seed", "seed"),
        ("epochs", "epochs"),
        ("lr", "lr"),
        ("batch", "batch_size"),
        ("latent_dim", "latent_dim"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[field] = value
    if overrides:
        import dataclasses

        config = dataclasses.replace(config, **overrides)
    return config


def cmd_train(args) -> int:
    from .imaging import load_dataset
    from .models import save_model, train

    started = time.monotonic()
    config = _load_train_config(args)
    data = load_dataset(args.data)
    model, history = train(data, config)
    os.makedirs(args.out, exist_ok=True)
    checkpoint = os.path.join(args.out, "model.eqck")
    save_model(model, checkpoint)
    history_path = os.path.join(args.out, "history.jsonl")
    lines = "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in history)
    _write_text_atomic(lines, history_path)
    manifest = {
        "command": "train",
        "config": config.to_dict(),
        "dataset": os.fspath(args.data),
        "dataset_hash": _sha256(args.data),
        "checkpoint": checkpoint,
        "history": history_path,
        "tool_version": _tool_version(),
        "wall_clock_seconds": round(time.monotonic() - started, 3),
        "final_val_loss": history[-1]["val_loss"],
        "best_val_loss": min(h["val_loss"] for h in history),
    }
    _write_json_atomic(manifest, os.path.join(args.out, "manifest.json"))
    print(f"final val loss {history[-1]['val_loss']:.6g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .errors import DimensionError
    from .evaluate import evaluate, export_grid
    from .imaging import load_dataset
    from .models import apply_latent_transform, load_model, validate_config

    started = time.monotonic()
    model = load_model(args.checkpoint)
    data = load_dataset(args.data)
    if model.pixel_dim != data.pixel_dim:
        raise DimensionError(
            f"checkpoint expects {model.pixel_dim} pixels per image, the "
            f"dataset provides {data.pixel_dim}"
        )
    validate_config(model.config, data.spec.factors)
    report = evaluate(model, data)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    _write_json_atomic(report.to_dict(), report_path)
    if args.grids:
        grid_dir = os.path.join(args.out, "grids")
        os.makedirs(grid_dir, exist_ok=True)
        first_order = (
            model.config.k_latent
            if model.variant == "weak"
            else model.config.orders[0]
        )
        n_factors = 1 if model.variant == "weak" else len(model.config.orders)
        seen = set()
        picks = []
        for sample in data.test:
            if sample.shape_index not in seen:
                seen.add(sample.shape_index)
                picks.append(sample)
            if len(picks) >= args.grids:
                break
        for i, sample in enumerate(picks):
            strip = [
                apply_latent_transform(
                    model, sample.x1, (k,) + (0,) * (n_factors - 1)
                )
                for k in range(first_order)
            ]
            export_grid(
                strip, (1, first_order),
                os.path.join(grid_dir, f"orbit_{i:02d}.pgm"),
            )
    manifest = {
        "command": "eval",
        "config": model.config.to_dict(),
        "dataset": os.fspath(args.data),
        "dataset_hash": _sha256(args.data),
        "checkpoint": os.fspath(args.checkpoint),
        "checkpoint_hash": _sha256(args.checkpoint),
        "report": report_path,
        "tool_version": _tool_version(),
        "wall_clock_seconds": round(time.monotonic() - started, 3),
    }
    _write_json_atomic(manifest, os.path.join(args.out, "manifest.json"))
    print(
        f"test mse {report.test_mse:.6g}, equivariance residual "
        f"{report.equivariance_residual:.6g}"
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    from .evaluate import theory_report, topology_demo

    checks = theory_report(max_order=args.max_order)
    failures = []
    for check in checks:
        status = "PASS" if check["pass"] else "FAIL"
        print(f"{status} {check['name']} (max deviation {check['max_deviation']:.3g})")
        if not check["pass"]:
            failures.append(check)
    print()
    print(topology_demo()["text"])
    if failures:
        print()
        print(f"{len(failures)} check(s) failed:")
        for check in failures:
            print(f"  {check['name']}: deviation {check['max_deviation']:.6g}")
        return EXIT_VERIFY
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqop",
        description=(
            "Latent group operators: dataset generation, equivariant "
            "autoencoder training, evaluation, and theory verification."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a paired transformation dataset")
    gen.add_argument("--kind", choices=("shapes", "mnist"), default="shapes")
    gen.add_argument("--count", type=int, required=True,
                     help="number of base images")
    gen.add_argument("--rot", type=int, default=1, help="rotation steps (1 = none)")
    gen.add_argument("--tx", type=int, default=1, help="x-translation steps")
    gen.add_argument("--ty", type=int, default=1, help="y-translation steps")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--size", type=int, default=28, help="canvas size for shapes")
    gen.add_argument("--cap", type=int, default=None,
                     help="subsample to this many pairs")
    gen.add_argument("--pairing", choices=("orbit", "augmented"), default="orbit",
                     help="anchor x1 at the base image, or at every grid pose")
    gen.add_argument("--rot-method", choices=("auto", "exact90", "bilinear"),
                     default="auto")
    gen.add_argument("--idx-images", default=None, help="IDX image file (mnist)")
    gen.add_argument("--idx-labels", default=None, help="IDX label file (mnist)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_gen_data)

    train = sub.add_parser("train", help="train a model from a JSON config")
    train.add_argument("--config", required=True, help="JSON config path")
    train.add_argument("--data", required=True, help="dataset container path")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--seed", type=int, default=None, help="override config seed")
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--batch", type=int, default=None)
    train.add_argument("--latent-dim", type=int, default=None, dest="latent_dim")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--grids", type=int, default=0, nargs="?", const=4,
                    help="export orbit strips for up to N test images")
    ev.set_defaults(func=cmd_eval)

    ver = sub.add_parser("verify", help="run the operator-theory check suite")
    ver.add_argument("--max-order", type=int, default=60, dest="max_order")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _configure_threads()
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EqopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
