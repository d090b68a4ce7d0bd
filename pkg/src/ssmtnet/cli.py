"""Command-line entry point: ``ssmtnet <subcommand> ...``.

Exit codes: 0 success, 1 invalid input (bad flags, config, data or
checkpoint), 2 runtime fault.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig
from .errors import (
    ConfigError, CorruptCheckpointError, DatasetError, DimensionError, FormatError,
    GenerationError, ManifestError, SSMTError,
)

VALIDATION_ERRORS = (ConfigError, DatasetError, ManifestError, FormatError, CorruptCheckpointError,
                     DimensionError, GenerationError, FileNotFoundError, NotADirectoryError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; unknown flags are validation errors here
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssmtnet", description="Semi-supervised multi-task nodule segmentation")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("synth-gen", help="write a synthetic phantom dataset")
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--unlabeled", type=int, default=0, help="how many of them to write without masks")
    g.add_argument("--config", help="optional run config (data.phantom settings)")
    g.add_argument("--seed", type=int)

    for name in ("pretrain", "train"):
        t = sub.add_parser(name, help=f"run the {'reconstruction pretraining' if name == 'pretrain' else 'supervised'} phase")
        t.add_argument("--config", required=True)
        t.add_argument("--seed", type=int, help="overrides train.seed")
        t.add_argument("--data", help="dataset directory (overrides data.root)")
        t.add_argument("--out", help="output directory (overrides train.out_dir)")
        t.add_argument("--resume", help="checkpoint of this phase to continue from")
        if name == "train":
            t.add_argument("--init", help="checkpoint whose parameters initialize the model (e.g. pretrained)")

    e = sub.add_parser("eval", help="IoU/DSC of checkpoint(s) on a dataset, printed as CSV")
    e.add_argument("--checkpoint", required=True, action="append",
                   help="checkpoint path; repeat once per seed")
    e.add_argument("--data", required=True)
    e.add_argument("--seeds", type=int, nargs="+", help="seed label per checkpoint")
    e.add_argument("--aggregate", choices=("seeds", "images"), default="seeds")
    e.add_argument("--split", default=None, help="restrict to one manifest split")

    i = sub.add_parser("infer", help="predict masks for one image and write PGM/PPM outputs")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--gt", help="ground-truth nodule mask for the overlay")

    c = sub.add_parser("grad-check", help="run the finite-difference gradient suite")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--primitives-only", action="store_true")
    return p


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def _phantoms(cfg: RunConfig, seed: int):
    from dataclasses import replace

    from .data import phantom_set

    h, w = cfg.model.image_size
    pc = replace(cfg.data.phantom, height=h, width=w, seed=seed)
    return phantom_set(pc, cfg.data.num_phantoms, seed=seed)


def _load_config(args) -> tuple[RunConfig, int]:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    seed = args.seed if getattr(args, "seed", None) is not None else cfg.train.seed
    return cfg, seed


def cmd_synth_gen(args) -> int:
    from .data import write_dataset

    if args.count < 1 or not 0 <= args.unlabeled <= args.count:
        raise ConfigError("--count must be >= 1 and 0 <= --unlabeled <= --count")
    cfg, seed = _load_config(args)
    cfg.data.num_phantoms = args.count
    samples = _phantoms(cfg, seed)
    samples = [s.unlabeled() if i >= args.count - args.unlabeled else s for i, s in enumerate(samples)]
    manifest = write_dataset(args.out, samples)
    print(f"wrote {len(manifest)} images to {args.out}")
    return 0


def _training_data(cfg: RunConfig, args, seed: int, labeled_only: bool):
    from .data import load_dataset, load_samples, split_by_stem_hash

    root = args.data or cfg.data.root
    if root:
        if not Path(root).is_dir():
            raise FileNotFoundError(f"dataset directory not found: {root}")
        records = list(load_dataset(root))
        samples = load_samples(records, cfg.model.image_size, with_masks=labeled_only)
    else:
        samples = _phantoms(cfg, seed)
    if not labeled_only:
        return samples, None
    labeled = [s for s in samples if s.labeled]
    if not labeled:
        raise DatasetError("supervised training needs images with nodule masks")
    return split_by_stem_hash(labeled, cfg.data.val_percent)


def cmd_train(args, phase: str) -> int:
    from .model import SSMTNet
    from .training import run_pretrain, run_supervised
    from .training.loop import load_model

    cfg, seed = _load_config(args)
    out = args.out or cfg.train.out_dir
    pc = cfg.train.phase("pretrain" if phase == "pretrain" else "supervised", seed=seed, out_dir=out,
                         augmentation=cfg.data.augmentation)
    model = SSMTNet(cfg.model, seed=seed)
    if phase == "pretrain":
        samples, _ = _training_data(cfg, args, seed, labeled_only=False)
        state = run_pretrain(model, samples, pc, resume=args.resume)
    else:
        if args.init:
            init = load_model(args.init)
            if init.config != cfg.model:
                raise ConfigError("--init checkpoint was trained with a different model config")
            model.load_state_dict(init.state_dict())
        train, val = _training_data(cfg, args, seed, labeled_only=True)
        state = run_supervised(model, train, pc, cfg.train.weights, cfg.ablation,
                               val_data=val or None, resume=args.resume)
    print(f"{phase}: {state.epoch} epochs, {state.step} steps; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .evaluation import evaluate

    manifest = load_dataset(args.data)
    if args.split:
        manifest = manifest.by_split(args.split)
    seeds = args.seeds if args.seeds else list(range(len(args.checkpoint)))
    if len(seeds) != len(args.checkpoint):
        raise ConfigError(f"{len(args.checkpoint)} checkpoint(s) but {len(seeds)} seed label(s)")
    report = evaluate(dict(zip(seeds, args.checkpoint)), manifest, seeds=seeds, aggregate=args.aggregate)
    sys.stdout.write(report.to_csv())
    return 0


def cmd_infer(args) -> int:
    from .evaluation import infer

    res = infer(args.checkpoint, args.image, args.out, gt_path=args.gt)
    for kind, path in res.paths.items():
        print(f"{kind},{path}")
    return 0


def cmd_grad_check(args) -> int:
    from .gradsuite import run_suite

    report = run_suite(args.seed, end_to_end=not args.primitives_only, log=print)
    print(f"{'PASS' if report.passed else 'FAIL'}: {sum(r.passed for r in report.results)}/"
          f"{len(report.results)} checks in {report.seconds:.1f}s")
    return 0 if report.passed else 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "synth-gen": cmd_synth_gen,
        "pretrain": lambda a: cmd_train(a, "pretrain"),
        "train": lambda a: cmd_train(a, "train"),
        "eval": cmd_eval,
        "infer": cmd_infer,
        "grad-check": cmd_grad_check,
    }
    try:
        return handlers[args.command](args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SSMTError, ArithmeticError, MemoryError, OSError, RuntimeError) as exc:
        print(f"fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
