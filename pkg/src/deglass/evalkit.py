"""Metrics over dataset splits and the ablation runner."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from deglass.data import TrainData
from deglass.metrics import iou, iou_per_sample, l1, psnr
from deglass.trainer import Checkpoint, TrainConfig, predict_masks, train_mask_stage, train_removal_stage
from deglass.variants import MASK_VARIANTS, REMOVAL_VARIANTS, AblationVariant

__all__ = [
    "AblationVariant", "EvalReport", "eval_masks", "eval_removal", "iou", "l1", "psnr", "run_ablation",
]

log = logging.getLogger(__name__)

METRIC_KEYS = ("iou_g", "iou_s", "l1_g", "l1_f", "psnr_f", "l1_input")


def eval_masks(mask_model, split: dict) -> tuple[float, float]:
    """Mean per-sample IoU of the glass and shadow masks."""
    if len(split["ids"]) == 0:
        raise ValueError("cannot evaluate on an empty split")
    g, s = predict_masks(mask_model, split["I"])
    return float(iou_per_sample(g, split["M_g"]).mean()), float(iou_per_sample(s, split["M_s"]).mean())


@torch.no_grad()
def eval_removal(mask_model, removal_model, split: dict, batch_size: int = 32) -> dict:
    """One report row: mask IoUs, L1 of both removal outputs, PSNR of the final image."""
    if len(split["ids"]) == 0:
        raise ValueError("cannot evaluate on an empty split")
    g, s = predict_masks(mask_model, split["I"])
    removal_model.eval()
    firsts, finals = [], []
    for i in range(0, len(g), batch_size):
        sl = slice(i, i + batch_size)
        out = removal_model(split["I"][sl], g[sl], s[sl])
        firsts.append(out.shadow_free)
        finals.append(out.final)
    removal_model.train()
    first, final = torch.cat(firsts), torch.cat(finals)
    step1 = getattr(removal_model, "step1_target", "I_g")
    return {
        "iou_g": float(iou_per_sample(g, split["M_g"]).mean()),
        "iou_s": float(iou_per_sample(s, split["M_s"]).mean()),
        # Only meaningful when the first step is trained toward the shadow-free image.
        "l1_g": l1(first, split["I_g"]) if step1 == "I_g" else math.nan,
        "l1_f": l1(final, split["I_f"]),
        "psnr_f": psnr(final, split["I_f"]),
        "l1_input": l1(split["I"], split["I_f"]),
    }


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, variant, seed: int, metrics: dict, config_hashes: dict) -> None:
        v = variant.value if isinstance(variant, AblationVariant) else str(variant)
        self.rows.append({"variant": v, "seed": seed, **{k: metrics.get(k, math.nan) for k in METRIC_KEYS},
                          **{f"hash_{k}": h for k, h in sorted(config_hashes.items())}})

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.rows.extend(other.rows)
        return self

    def seeds(self, variant) -> list[int]:
        v = variant.value if isinstance(variant, AblationVariant) else str(variant)
        return [r["seed"] for r in self.rows if r["variant"] == v]

    def metric(self, variant, key: str) -> dict[int, float]:
        v = variant.value if isinstance(variant, AblationVariant) else str(variant)
        return {r["seed"]: r[key] for r in self.rows if r["variant"] == v}

    def summary(self) -> dict[str, dict]:
        """Per-variant mean of every metric, plus the seeds it was computed over."""
        out: dict[str, dict] = {}
        for v in dict.fromkeys(r["variant"] for r in self.rows):
            rows = [r for r in self.rows if r["variant"] == v]
            out[v] = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_KEYS}
            out[v]["seeds"] = [r["seed"] for r in rows]
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        keys = list(dict.fromkeys(k for r in self.rows for k in r))
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, restval="")
            w.writeheader()
            w.writerows(self.rows)
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        def clean(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        payload = {
            "rows": [{k: clean(v) for k, v in r.items()} for r in self.rows],
            "summary": {v: {k: clean(x) for k, x in m.items()} for v, m in self.summary().items()},
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True))
        return path

    def save(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        return self.to_csv(out_dir / f"{stem}.csv"), self.to_json(out_dir / f"{stem}.json")

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        rows = json.loads(Path(path).read_text())["rows"]
        return cls([{k: (math.nan if v is None else v) for k, v in r.items()} for r in rows])


def _eval_split(data: TrainData, split: dict | None) -> dict:
    if split is not None:
        return split
    if len(data.val["ids"]) == 0:
        raise ValueError("dataset has no validation samples to evaluate on")
    return data.val


def _existing(run_dir: Path | None, stage: str, resume: bool) -> Path | None:
    if not resume or run_dir is None:
        return None
    path = run_dir / f"{stage}_last.pt"
    return path if path.exists() else None


def run_ablation(variant, cfg: TrainConfig, n_seeds: int = 3, data: TrainData | None = None, out_dir=None,
                 with_removal: bool = True, eval_split: dict | None = None,
                 mask_cache: dict | None = None, resume: bool = False) -> EvalReport:
    """Train the rewired pipeline once per seed (cfg.seed, cfg.seed + 1, ...) and evaluate it.

    Mask-stage variants get the default removal stage on top (when ``with_removal``);
    removal-stage variants sit on a default mask stage. ``mask_cache`` maps seed to a
    trained default mask checkpoint and is filled in as a side effect, so several
    removal variants can share one mask stage per seed. With ``resume`` set, runs whose
    last checkpoint already sits in ``out_dir`` continue from it instead of restarting.
    """
    variant = AblationVariant.parse(variant) if isinstance(variant, str) else variant
    data = data if data is not None else TrainData.load(cfg.data, cfg.real_dir or None, cfg.val_split)
    split = _eval_split(data, eval_split)
    mask_cache = {} if mask_cache is None else mask_cache
    out = Path(out_dir) if out_dir is not None else None
    mask_variant = variant if variant in MASK_VARIANTS else AblationVariant.FULL
    removal_variant = variant if variant in REMOVAL_VARIANTS else AblationVariant.FULL
    needs_removal = with_removal or variant in REMOVAL_VARIANTS
    report = EvalReport()
    for k in range(n_seeds):
        seed_cfg = replace(cfg, seed=cfg.seed + k)
        run_dir = out / variant.value / f"seed{seed_cfg.seed}" if out is not None else None
        if mask_variant is AblationVariant.FULL and seed_cfg.seed in mask_cache:
            mask_ckpt: Checkpoint = mask_cache[seed_cfg.seed]
        else:
            mask_ckpt = train_mask_stage(seed_cfg, mask_variant, run_dir, _existing(run_dir, "mask", resume),
                                         data=data)
            if mask_variant is AblationVariant.FULL:
                mask_cache[seed_cfg.seed] = mask_ckpt
        mask_model = mask_ckpt.mask_model()
        hashes = {"mask": mask_ckpt.config_hash}
        if needs_removal:
            rem_ckpt = train_removal_stage(seed_cfg, mask_ckpt, removal_variant, run_dir,
                                           _existing(run_dir, "removal", resume), data=data)
            metrics = eval_removal(mask_model, rem_ckpt.removal_model(), split)
            hashes["removal"] = rem_ckpt.config_hash
        else:
            metrics = dict(zip(("iou_g", "iou_s"), eval_masks(mask_model, split)))
            metrics["l1_input"] = l1(split["I"], split["I_f"])
        report.add(variant, seed_cfg.seed, metrics, hashes)
        log.info("%s seed %d: %s", variant.value, seed_cfg.seed, metrics)
    if out is not None:
        report.save(out / variant.value)
    return report
