"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 diverged training.

Training commands read hyperparameters from an optional ``--config``
file (``key=value`` lines, ``#`` comments) and then apply explicit
flags on top, so a config file never silences a flag.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import DataError, DivergedLoss, PspoolError
from .manifest import DatasetManifest, make_label_subsets
from .mesh import load_mesh, validate_mesh
from .containers import load_psph
from .precompute import run_precompute
from .synth import synth_dataset
from .training import (
    TrainConfig,
    checkpoint_config,
    evaluate_classifier,
    export_embeddings,
    load_checkpoint,
    load_split_bundles,
    run_pretrain,
    run_probe,
    run_supervised,
)

log = logging.getLogger("pspool")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

POOLING_FLAG = {"ps-mean": "ps_mean", "ps-max": "ps_max", "sag": "sag"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the contract here reserves 2 for
    # data errors, so route usage problems through exit code 1
    def error(self, message):
        raise _UsageError(message)


def parse_config_file(path) -> dict:
    """Read ``key=value`` lines into TrainConfig-typed values."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    casts = {"pooling": str, "size": str, "seed": int, "lr": float,
             "batch_size": int, "max_epochs": int, "patience": int,
             "k_S": int}
    out = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise DataError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = casts[key](value)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


def build_train_config(args) -> TrainConfig:
    settings = {}
    if args.config:
        settings.update(parse_config_file(args.config))
    for flag, key in (("seed", "seed"), ("lr", "lr"),
                      ("batch_size", "batch_size"),
                      ("max_epochs", "max_epochs"),
                      ("patience", "patience"), ("size", "size")):
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = value
    if getattr(args, "pooling", None) is not None:
        settings["pooling"] = POOLING_FLAG[args.pooling]
    try:
        return TrainConfig(**settings)
    except TypeError as exc:
        raise DataError(f"bad configuration: {exc}") from exc


def _load_manifest(args) -> tuple:
    data_dir = Path(args.data)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{manifest_path} not found")
    manifest = DatasetManifest.load(manifest_path)
    fraction = getattr(args, "label_fraction", None)
    if fraction is not None and fraction != 1.0:
        seed = args.seed if args.seed is not None else 0
        manifest = make_label_subsets(manifest, [fraction], seed)[fraction]
    return data_dir, manifest


def _add_train_flags(p: _Parser):
    p.add_argument("--data", required=True,
                   help="dataset directory containing manifest.json")
    p.add_argument("--pre", required=True, help="precompute output directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="key=value hyperparameter file")
    p.add_argument("--seed", type=int)
    p.add_argument("--pooling", choices=sorted(POOLING_FLAG))
    p.add_argument("--size", choices=["S", "M", "L"])
    p.add_argument("--label-fraction", dest="label_fraction", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)


def make_parser() -> _Parser:
    parser = _Parser(prog="pspool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic mesh corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", dest="per_class", type=int, default=50)

    p = sub.add_parser("validate", help="accept/reject meshes")
    p.add_argument("meshes", nargs="+", help="mesh files to check")

    p = sub.add_parser("precompute",
                       help="build hierarchy/operator containers")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--k-s", dest="k_S", type=int, default=8)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("train-ae", help="pretrain an autoencoder")
    _add_train_flags(p)

    p = sub.add_parser("probe", help="linear probe on a frozen encoder")
    _add_train_flags(p)
    p.add_argument("--encoder", help="autoencoder checkpoint to probe "
                                     "(default: random encoder)")

    p = sub.add_parser("train-clf", help="train a supervised classifier")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a classifier checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pre", required=True)
    p.add_argument("--split", choices=["train", "val", "test"],
                   default="test")

    p = sub.add_parser("export-embeddings",
                       help="write one latent row per mesh as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pre", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dump-op",
                       help="print an operator as COO triplets")
    p.add_argument("container", help="precompute (.psph) file")
    p.add_argument("--stage", type=int, default=0,
                   help="level pair index (0 = finest)")
    p.add_argument("--which", choices=["pool", "pool-raw", "unpool"],
                   default="pool")
    return parser


# ---------------------------------------------------------------------------
# Subcommand bodies


def cmd_synth(args) -> int:
    manifest = synth_dataset(args.out, seed=args.seed, classes=args.classes,
                             per_class=args.per_class)
    print(f"wrote {len(manifest.entries)} meshes and manifest.json "
          f"to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    any_rejected = False
    for path in args.meshes:
        try:
            report = validate_mesh(load_mesh(path))
        except PspoolError as exc:
            print(f"{path}: error  {exc}")
            any_rejected = True
            continue
        status = "accept" if report.accepted else "reject"
        why = f"  ({'; '.join(report.reasons)})" if report.reasons else ""
        print(f"{path}: {status}  faces={report.face_count} "
              f"manifold={report.is_manifold}{why}")
        any_rejected |= not report.accepted
    return EXIT_DATA if any_rejected else EXIT_OK


def cmd_precompute(args) -> int:
    data_dir, manifest = _load_manifest(args)
    result = run_precompute(manifest, data_dir, args.out, depth=args.depth,
                            k_S=args.k_S, jobs=args.jobs)
    print(f"precompute: {len(result.written)} written, "
          f"{len(result.cached)} cached, {len(result.failed)} failed")
    for path, err in result.failed:
        print(f"  failed {path}: {err}")
    return EXIT_OK if result.ok else EXIT_DATA


def cmd_train_ae(args) -> int:
    data_dir, manifest = _load_manifest(args)
    config = build_train_config(args)
    record, _ = run_pretrain(config, manifest, args.pre, out_dir=args.out)
    best = min(e[2] for e in record.epochs)
    print(f"{record.run_id}: {len(record.epochs)} epochs, "
          f"best val loss {best:.6f}, artifacts in {args.out}")
    return EXIT_OK


def cmd_probe(args) -> int:
    data_dir, manifest = _load_manifest(args)
    config = build_train_config(args)
    enc_params = None
    if args.encoder:
        enc_params, meta = load_checkpoint(args.encoder)
        ckpt_cfg = checkpoint_config(meta)
        if (ckpt_cfg.pooling, ckpt_cfg.size) != (config.pooling, config.size):
            raise DataError(
                f"checkpoint is {ckpt_cfg.pooling}/{ckpt_cfg.size}, "
                f"run asks for {config.pooling}/{config.size}")
    record, _ = run_probe(config, manifest, args.pre, enc_params=enc_params,
                          out_dir=args.out)
    print(f"{record.run_id}: test accuracy {record.test_accuracy:.4f}")
    return EXIT_OK


def cmd_train_clf(args) -> int:
    data_dir, manifest = _load_manifest(args)
    config = build_train_config(args)
    record, _ = run_supervised(config, manifest, args.pre, out_dir=args.out)
    print(f"{record.run_id}: test accuracy {record.test_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data_dir, manifest = _load_manifest(args)
    params, meta = load_checkpoint(args.checkpoint)
    if meta.get("kind") != "classifier":
        raise DataError(f"{args.checkpoint} is not a classifier checkpoint")
    config = checkpoint_config(meta)
    enc = {k: v for k, v in params.items() if not k.startswith("head_")}
    head = {k: v for k, v in params.items() if k.startswith("head_")}
    bundles = load_split_bundles(manifest, args.pre, (args.split,))
    loss, acc = evaluate_classifier(enc, head, config.model_config(),
                                    bundles[args.split])
    print(f"{args.split}: loss {loss:.6f}, accuracy {acc:.4f}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    data_dir, manifest = _load_manifest(args)
    out = export_embeddings(args.checkpoint, manifest, args.pre, args.out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_dump_op(args) -> int:
    psph = load_psph(args.container)
    if not 0 <= args.stage < len(psph.pool_norm):
        raise DataError(f"stage {args.stage} out of range "
                        f"(container has {len(psph.pool_norm)})")
    op = {"pool": psph.pool_norm, "pool-raw": psph.pool_raw,
          "unpool": psph.unpool}[args.which][args.stage]
    for row in range(op.shape[0]):
        for k in range(op.indptr[row], op.indptr[row + 1]):
            print(f"{row} {op.indices[k]} {op.values[k]:.17g}")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "validate": cmd_validate,
    "precompute": cmd_precompute,
    "train-ae": cmd_train_ae,
    "probe": cmd_probe,
    "train-clf": cmd_train_clf,
    "eval": cmd_eval,
    "export-embeddings": cmd_export_embeddings,
    "dump-op": cmd_dump_op,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedLoss as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except BrokenPipeError:
        # reader (e.g. `| head`) went away; not an error
        sys.stderr.close()
        return EXIT_OK
    except (PspoolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
