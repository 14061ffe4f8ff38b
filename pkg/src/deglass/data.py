"""In-memory tensors for training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from deglass.synth.dataset import load_manifest, read_sample, split_ids
from deglass.synth.domain import StylizeConfig, stylize_real_domain

IMAGE_KEYS = ("I", "I_g", "I_s", "I_f")
MASK_KEYS = ("M_g", "M_s")
REAL_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _chw(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1))).float()


def load_split(manifest: dict, split: str) -> dict:
    """Stack one split into N x C x H x W float32 tensors; ``ids`` and ``seeds`` ride along."""
    ids = split_ids(manifest, split)
    seeds = {s["id"]: s["seed"] for s in manifest["samples"]}
    root = Path(manifest["root"])
    out: dict = {k: [] for k in IMAGE_KEYS + MASK_KEYS}
    for sid in ids:
        s = read_sample(root / sid)
        for k in IMAGE_KEYS:
            out[k].append(_chw(getattr(s, k)))
        for k in MASK_KEYS:
            out[k].append(torch.from_numpy(getattr(s, k).astype(np.float32))[None])
    size = manifest["image_size"]
    for k in IMAGE_KEYS + MASK_KEYS:
        ch = 3 if k in IMAGE_KEYS else 1
        out[k] = torch.stack(out[k]) if out[k] else torch.zeros(0, ch, size, size)
    out["ids"] = ids
    out["seeds"] = [seeds[i] for i in ids]
    return out


def stylized_pool(images: torch.Tensor, seeds, config: StylizeConfig = StylizeConfig()) -> torch.Tensor:
    """Real-domain proxies: each synthetic image pushed through the stylizer with its own seed."""
    out = []
    for img, seed in zip(images, seeds):
        hwc = img.permute(1, 2, 0).double().numpy()
        out.append(_chw(stylize_real_domain(hwc, int(seed) ^ 0x5EA1, config)))
    return torch.stack(out) if out else images.clone()


def load_real_dir(path, image_size: int) -> torch.Tensor:
    """All images in ``path`` (sorted by name), RGB, resized to a square of ``image_size``."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"real-domain directory not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in REAL_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images in real-domain directory {path}")
    out = []
    for f in files:
        with Image.open(f) as im:
            im = im.convert("RGB").resize((image_size, image_size), Image.BILINEAR)
            out.append(_chw(np.asarray(im, dtype=np.float64) / 255.0))
    return torch.stack(out)


@dataclass
class TrainData:
    train: dict
    val: dict
    real: torch.Tensor
    dataset_hash: str
    image_size: int

    @classmethod
    def load(cls, data_path, real_dir=None, val_split: str = "val") -> "TrainData":
        manifest = load_manifest(data_path)
        train = load_split(manifest, "train")
        if len(train["ids"]) == 0:
            raise ValueError(f"dataset {data_path} has no training samples")
        val = load_split(manifest, val_split)
        size = manifest["image_size"]
        real = load_real_dir(real_dir, size) if real_dir else stylized_pool(train["I"], train["seeds"])
        return cls(train, val, real, manifest["config_hash"], size)
