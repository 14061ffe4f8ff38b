from __future__ import annotations

import hashlib
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from deglass.align import sample_wearing_style
from deglass.synth.face import make_face_proxy
from deglass.synth.glasses import STROKE_RANGE, make_glasses
from deglass.synth.render import RenderSample, config_hash, render_sample, sample_scene

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
IMAGE_FILES = {"I": "I.png", "I_g": "Ig.png", "I_s": "Is.png", "I_f": "If.png"}
MASK_FILES = {"M_g": "Mg.png", "M_s": "Ms.png"}
SPLITS = ("train", "val", "test")


class SampleFormatError(IOError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n: int = 2000
    image_size: int = 64
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    n_pad_pairs: int = 3
    stroke_range: tuple[float, float] = STROKE_RANGE
    shadow_intensity_range: tuple[float, float] = (0.35, 0.75)
    color_jitter: float = 0.08
    max_yaw_deg: float = 20.0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if len(self.split) != 3 or any(f < 0 for f in self.split) or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError(f"split fractions must be 3 non-negative numbers summing to 1, got {self.split}")
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        object.__setattr__(self, "stroke_range", tuple(float(f) for f in self.stroke_range))
        object.__setattr__(self, "shadow_intensity_range", tuple(float(f) for f in self.shadow_intensity_range))

    def content_hash(self) -> str:
        d = asdict(self)
        d.pop("workers")
        return config_hash(d)


def sample_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def _sub_seeds(seed: int, k: int = 5) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(k)]


def generate_sample(config: SynthConfig, index: int) -> RenderSample:
    seed = sample_seed(config.seed, index)
    face_seed, glasses_seed, style_seed, scene_seed, noise_seed = _sub_seeds(seed)
    face = make_face_proxy(face_seed, config.n_pad_pairs)
    glasses = make_glasses(glasses_seed, config.stroke_range)
    style = sample_wearing_style(face, style_seed, config.color_jitter)
    scene = sample_scene(scene_seed, config.image_size, config.shadow_intensity_range, config.max_yaw_deg)
    sample = render_sample(face, glasses, style, scene, noise_seed)
    sample.meta.update(
        seed=seed, index=index, face_seed=face_seed, glasses_seed=glasses_seed,
        config_hash=config.content_hash(),
    )
    return sample


def assign_splits(seeds: list[int], fractions) -> list[str]:
    """Order samples by a hash of their seed, then cut at the split fractions."""
    n = len(seeds)
    order = sorted(range(n), key=lambda i: hashlib.sha256(str(seeds[i]).encode()).hexdigest())
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    labels = [""] * n
    for rank, i in enumerate(order):
        labels[i] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return labels


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_sample(sample: RenderSample, path) -> Path:
    """Store the six channels as 8-bit PNG plus meta.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for key, fname in IMAGE_FILES.items():
        Image.fromarray(_to_u8(getattr(sample, key)), mode="RGB").save(path / fname)
    for key, fname in MASK_FILES.items():
        m = (np.asarray(getattr(sample, key)) > 0).astype(np.uint8) * 255
        Image.fromarray(m, mode="L").save(path / fname)
    meta = json.dumps(sample.meta, sort_keys=True, indent=1)
    (path / "meta.json").write_text(meta)
    return path


def read_sample(path) -> RenderSample:
    path = Path(path)
    if not path.is_dir():
        raise SampleFormatError(f"sample directory not found: {path}")
    arrays = {}
    for key, fname in {**IMAGE_FILES, **MASK_FILES}.items():
        f = path / fname
        if not f.exists():
            raise SampleFormatError(f"missing channel {key} ({f})")
        try:
            with Image.open(f) as im:
                im.load()
                arr = np.asarray(im)
        except Exception as exc:
            raise SampleFormatError(f"corrupt image {f}: {exc}") from exc
        if key in IMAGE_FILES:
            if arr.ndim != 3 or arr.shape[-1] != 3:
                raise SampleFormatError(f"{f} is not an RGB image")
            arrays[key] = arr.astype(np.float64) / 255.0
        else:
            if arr.ndim != 2:
                raise SampleFormatError(f"{f} is not a single-channel mask")
            arrays[key] = (arr > 127).astype(np.uint8)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise SampleFormatError(f"missing meta.json in {path}") from exc
    except json.JSONDecodeError as exc:
        raise SampleFormatError(f"corrupt meta.json in {path}: {exc}") from exc
    shapes = {a.shape[:2] for a in arrays.values()}
    if len(shapes) != 1:
        raise SampleFormatError(f"channel sizes disagree in {path}: {shapes}")
    return RenderSample(meta=meta, **arrays)


def _generate_and_write(args) -> str:
    config, index, out_dir = args
    sample = generate_sample(config, index)
    sid = f"{index:06d}"
    write_sample(sample, Path(out_dir) / sid)
    return sid


def synth_dataset(config: SynthConfig, out_dir, overwrite: bool = False) -> dict:
    """Render ``config.n`` samples into ``out_dir`` and write the manifest."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise FileExistsError(f"{out} is not empty; pass overwrite=True to replace it")
        if not (out / MANIFEST_NAME).exists():
            raise FileExistsError(f"refusing to overwrite {out}: it does not contain a dataset manifest")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)

    jobs = [(config, i, str(out)) for i in range(config.n)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            ids = list(pool.map(_generate_and_write, jobs, chunksize=8))
    else:
        ids = [_generate_and_write(j) for j in jobs]

    seeds = [sample_seed(config.seed, i) for i in range(config.n)]
    splits = assign_splits(seeds, config.split)
    manifest = {
        "version": 1,
        "config": asdict(config),
        "config_hash": config.content_hash(),
        "image_size": config.image_size,
        "samples": [
            {"id": sid, "seed": seed, "split": split} for sid, seed, split in zip(ids, seeds, splits)
        ],
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=1))
    log.info("wrote %d samples to %s", config.n, out)
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    manifest = json.loads(path.read_text())
    manifest["root"] = str(path.parent)
    return manifest


def split_ids(manifest: dict, split: str) -> list[str]:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return [s["id"] for s in manifest["samples"] if s["split"] == split]
