"""Command-line entry point.

Settings come from built-in defaults, then an optional config file (``--config``
or the DEGLASS_CONFIG environment variable), then ``--set key=value`` overrides
and the per-command shorthand flags, later sources winning.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

ENV_CONFIG = "DEGLASS_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("deglass")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- config handling -------------------------------------------------------

def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines (``#`` comments) or a JSON object."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise UsageError(f"{path}: expected a JSON object")
        return _flatten(obj)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _flatten(obj: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(value, default, key: str):
    if not isinstance(value, str):
        if isinstance(default, tuple):
            return tuple(value)
        return value
    try:
        if isinstance(default, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(float(x) for x in value.strip("()[] ").split(","))
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None
    return value


def build_config(cls, section: str, *sources: dict):
    """Merge flat dicts into a ``cls`` instance; ``section.key`` and bare ``key`` both address a field.

    Keys for the other known section are ignored so one file can hold both.
    """
    names = {f.name: f for f in fields(cls)}
    defaults = cls()
    values = {}
    for src in sources:
        for key, raw in src.items():
            name = key
            if "." in key:
                head, name = key.split(".", 1)
                if head in _SECTIONS and head != section:
                    continue
                if head != section:
                    raise UsageError(f"unknown config key: {key}")
            if name not in names:
                if "." not in key and any(name in _section_fields(s) for s in _SECTIONS if s != section):
                    continue
                raise UsageError(f"unknown config key: {key}")
            values[name] = _coerce(raw, getattr(defaults, name), key)
    try:
        return replace(defaults, **values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {section} config: {exc}") from None


def _section_fields(section: str) -> set[str]:
    from deglass.synth.dataset import SynthConfig
    from deglass.trainer import TrainConfig

    return {f.name for f in fields({"synth": SynthConfig, "train": TrainConfig}[section])}


_SECTIONS = ("synth", "train")


def _sources(args) -> list[dict]:
    path = args.config or os.environ.get(ENV_CONFIG)
    file_values = read_config_file(path) if path else {}
    return [file_values, parse_overrides(args.set)]


def _variant(name: str):
    from deglass.variants import AblationVariant

    try:
        return AblationVariant.parse(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _flag_overrides(args, mapping: dict[str, str]) -> dict:
    return {key: getattr(args, attr) for attr, key in mapping.items() if getattr(args, attr, None) is not None}


# --- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    from deglass.synth.dataset import SynthConfig, synth_dataset

    flags = _flag_overrides(args, {"n": "n", "size": "image_size", "seed": "seed", "workers": "workers"})
    cfg = build_config(SynthConfig, "synth", *_sources(args), flags)
    manifest = synth_dataset(cfg, args.out, overwrite=args.overwrite)
    counts = {s: sum(1 for x in manifest["samples"] if x["split"] == s) for s in ("train", "val", "test")}
    print(f"wrote {cfg.n} samples to {args.out} {counts}")
    return EXIT_OK


def _train_config(args, extra: dict):
    from deglass.trainer import TrainConfig

    flags = _flag_overrides(args, {"data": "data", "seed": "seed", "real_dir": "real_dir", "out": "out_dir"})
    flags.update(extra)
    return build_config(TrainConfig, "train", *_sources(args), flags)


def cmd_train_mask(args) -> int:
    from deglass.trainer import train_mask_stage

    cfg = _train_config(args, {"epochs_mask": args.epochs} if args.epochs is not None else {})
    ckpt = train_mask_stage(cfg, _variant(args.variant), cfg.out_dir, resume_from=args.resume)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"mask stage done: epoch {ckpt.epoch}, val IoU glass {last.get('val_iou_g', float('nan')):.3f} "
          f"shadow {last.get('val_iou_s', float('nan')):.3f}; checkpoint {Path(cfg.out_dir) / 'mask_last.pt'}")
    return EXIT_OK


def cmd_train_removal(args) -> int:
    from deglass.trainer import train_removal_stage

    if not Path(args.mask_checkpoint).exists():
        raise FileNotFoundError(f"mask checkpoint not found: {args.mask_checkpoint}")
    cfg = _train_config(args, {"epochs_removal": args.epochs} if args.epochs is not None else {})
    ckpt = train_removal_stage(cfg, args.mask_checkpoint, _variant(args.variant), cfg.out_dir,
                               resume_from=args.resume)
    last = ckpt.history[-1] if ckpt.history else {}
    print(f"removal stage done: epoch {ckpt.epoch}, val L1 {last.get('val_l1', float('nan')):.4f}; "
          f"checkpoint {Path(cfg.out_dir) / 'removal_last.pt'}")
    return EXIT_OK


def _load_image(path, size: int):
    from PIL import Image
    import torch

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input image not found: {path}")
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def _save_image(arr: np.ndarray, path) -> None:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    u8 = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(u8, mode="RGB" if u8.ndim == 3 else "L").save(path)


def cmd_infer(args) -> int:
    from deglass.removal import remove_pipeline
    from deglass.trainer import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.stage != "removal":
        raise ValueError(f"{args.checkpoint} is a {ckpt.stage} checkpoint; infer needs a removal checkpoint")
    size = ckpt.train_config().image_size
    image = _load_image(args.image, size)
    out = remove_pipeline(ckpt.mask_model(), ckpt.removal_model(), image)

    def hwc(t):
        a = t[0].detach().numpy().transpose(1, 2, 0)
        return np.repeat(a, 3, axis=2) if a.shape[2] == 1 else a

    _save_image(hwc(out.final), args.out)
    print(f"wrote {args.out}")
    if args.debug_grid:
        grid = np.concatenate([hwc(image[None]), hwc(out.glass_mask), hwc(out.shadow_mask),
                               hwc(out.shadow_free), hwc(out.final)], axis=1)
        _save_image(grid, args.debug_grid)
        print(f"wrote {args.debug_grid}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from deglass.data import load_split
    from deglass.evalkit import EvalReport, eval_removal
    from deglass.synth.dataset import load_manifest
    from deglass.trainer import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.stage != "removal":
        raise ValueError(f"{args.checkpoint} is a {ckpt.stage} checkpoint; eval needs a removal checkpoint")
    split = load_split(load_manifest(args.data), args.split)
    if len(split["ids"]) == 0:
        raise ValueError(f"split {args.split!r} of {args.data} is empty")
    metrics = eval_removal(ckpt.mask_model(), ckpt.removal_model(), split)
    report = EvalReport()
    report.add(ckpt.variant, ckpt.train_config().seed, metrics, {"removal": ckpt.config_hash})
    csv_path, json_path = report.save(args.out, stem=f"eval_{args.split}")
    print(" ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from deglass.evalkit import EvalReport, run_ablation
    from deglass.variants import AblationVariant

    cfg = _train_config(args, {})
    names = [v.value for v in AblationVariant] if args.variant.lower() == "all" else args.variant.split(",")
    variants = [_variant(n) for n in names]
    report, cache = EvalReport(), {}
    for v in variants:
        report.extend(run_ablation(v, cfg, args.seeds, out_dir=cfg.out_dir, with_removal=not args.mask_only,
                                   mask_cache=cache, resume=args.resume))
    csv_path, json_path = report.save(cfg.out_dir, stem="ablation")
    for v, m in report.summary().items():
        print(f"{v:22s} iou_g={m['iou_g']:.3f} iou_s={m['iou_s']:.3f} l1_f={m['l1_f']:.4f} seeds={m['seeds']}")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deglass", description="Eyeglasses and cast-shadow removal toolkit.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, out_required=False, out_help="output directory"):
        sp.add_argument("--config", help=f"config file (key = value lines or JSON); default ${ENV_CONFIG}")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. --set lr=2e-4 or --set train.batch_size=4")
        sp.add_argument("--out", required=out_required, help=out_help)

    sp = sub.add_parser("synth", help="render a paired dataset")
    common(sp, True, "dataset directory to create")
    sp.add_argument("--n", type=int, help="number of samples")
    sp.add_argument("--size", type=int, help="image size in pixels")
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--workers", type=int, help="worker processes")
    sp.add_argument("--overwrite", action="store_true", help="replace an existing dataset directory")
    sp.set_defaults(func=cmd_synth)

    for name, func, helptext in (("train-mask", cmd_train_mask, "train the mask stage"),
                                 ("train-removal", cmd_train_removal, "train the removal stage")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, False, "run directory for checkpoints and loss logs")
        sp.add_argument("--data", help="dataset directory (with manifest.json)")
        sp.add_argument("--real-dir", dest="real_dir", help="directory of real-domain images")
        sp.add_argument("--seed", type=int, help="training seed")
        sp.add_argument("--epochs", type=int, help="number of epochs for this stage")
        sp.add_argument("--variant", default="FULL", help="ablation variant (default FULL)")
        sp.add_argument("--resume", help="checkpoint to resume from")
        if name == "train-removal":
            sp.add_argument("--mask-checkpoint", dest="mask_checkpoint", required=True,
                            help="trained mask-stage checkpoint")
        sp.set_defaults(func=func)

    sp = sub.add_parser("infer", help="remove glasses and shadows from one image")
    sp.add_argument("--checkpoint", required=True, help="removal-stage checkpoint")
    sp.add_argument("--image", required=True, help="input image")
    sp.add_argument("--out", default="output.png", help="output image path")
    sp.add_argument("--debug-grid", dest="debug_grid",
                    help="also write input | glass mask | shadow mask | shadow-free | final")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="evaluate a trained pipeline on a dataset split")
    sp.add_argument("--checkpoint", required=True, help="removal-stage checkpoint")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"), help="split to evaluate")
    sp.add_argument("--out", default=".", help="directory for the report CSV/JSON")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and evaluate ablation variants over several seeds")
    common(sp, False, "directory for runs and the ablation table")
    sp.add_argument("--data", help="dataset directory")
    sp.add_argument("--real-dir", dest="real_dir", help="directory of real-domain images")
    sp.add_argument("--seed", type=int, help="first seed")
    sp.add_argument("--variant", default="all", help="variant name, comma-separated list, or 'all'")
    sp.add_argument("--seeds", type=int, default=3, help="number of seeds per variant")
    sp.add_argument("--mask-only", dest="mask_only", action="store_true",
                    help="skip removal training for mask-stage variants")
    sp.add_argument("--resume", action="store_true", help="continue runs already present under --out")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"deglass {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, KeyError, FloatingPointError) as exc:
        print(f"deglass {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
