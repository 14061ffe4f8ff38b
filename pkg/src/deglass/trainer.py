"""Two-phase training: mask stage first, then the removal stage on frozen masks."""

from __future__ import annotations

import copy
import csv
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from deglass.data import TrainData
from deglass.mask_stage import PredictComponents, adv_loss_D, adv_loss_G, mask_loss, predict_loss
from deglass.metrics import iou_per_sample
from deglass.nets import NetConfig, ParameterStore
from deglass.synth.render import config_hash
from deglass.variants import AblationVariant, build_mask_model, build_removal_model

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "deglass-checkpoint"
CHECKPOINT_VERSION = 1
# Fields that may change between a run and its resumption.
_RESUMABLE_FIELDS = ("epochs_mask", "epochs_removal", "data", "real_dir", "out_dir")
_STAGE_TAG = {"mask": 1, "removal": 2}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 8
    epochs_mask: int = 30
    epochs_removal: int = 80
    lambda_adv: float = 0.1
    lambda_mask: float = 1.0
    lambda_de_s: float = 1.0
    lambda_de_g: float = 1.0
    image_size: int = 64
    seed: int = 0
    base_channels: int = 16
    n_residual_blocks: int = 4
    feature_channels: int = 32
    n_da_blocks: int = 6
    residual_output: bool = True
    data: str = ""
    real_dir: str = ""
    val_split: str = "val"
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        for name in ("lr", "beta1", "beta2", "batch_size", "epochs_mask", "epochs_removal", "image_size",
                     "base_channels", "n_residual_blocks", "feature_channels", "n_da_blocks"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be positive, got {getattr(self, name)}")
        if not (self.beta1 < 1 and self.beta2 < 1):
            raise ValueError("Adam betas must be < 1")
        for name in ("lambda_adv", "lambda_mask", "lambda_de_s", "lambda_de_g"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"TrainConfig.{name} must be finite and non-negative, got {v}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def net_config(self) -> NetConfig:
        return NetConfig(base_channels=self.base_channels, n_residual_blocks=self.n_residual_blocks,
                         feature_channels=self.feature_channels, n_da_blocks=self.n_da_blocks,
                         residual_output=self.residual_output)

    def hash(self, **extra) -> str:
        d = {k: v for k, v in asdict(self).items() if k not in _RESUMABLE_FIELDS}
        d.update(extra)
        return config_hash(d)


@dataclass
class Checkpoint:
    stage: str
    variant: str
    params: dict[str, ParameterStore]
    optimizer: dict
    epoch: int
    config: dict
    config_hash: str
    history: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_payload(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "stage": self.stage,
            "variant": self.variant,
            "params": {k: v.to_payload() for k, v in self.params.items()},
            "optimizer": self.optimizer,
            "epoch": self.epoch,
            "config": self.config,
            "config_hash": self.config_hash,
            "history": self.history,
            "extra": self.extra,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "Checkpoint":
        if p.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a deglass checkpoint")
        if p.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {p.get('version')}")
        params = {k: ParameterStore.from_payload(v) for k, v in p["params"].items()}
        return cls(p["stage"], p["variant"], params, p["optimizer"], p["epoch"], p["config"],
                   p["config_hash"], p["history"], p["extra"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.config)

    def mask_model(self):
        model = build_mask_model(self.extra.get("mask_variant", self.variant), self.train_config().net_config())
        self.params["mask"].apply_to(model)
        return model

    def removal_model(self):
        if "removal" not in self.params:
            raise ValueError(f"{self.stage} checkpoint holds no removal networks")
        model = build_removal_model(self.variant, self.train_config().net_config())
        self.params["removal"].apply_to(model)
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(ckpt.to_payload(), tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return Checkpoint.from_payload(torch.load(path, map_location="cpu", weights_only=True))


def parameter_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def set_deterministic(seed: int) -> None:
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(seed)


def epoch_order(seed: int, epoch: int, stage: str, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, _STAGE_TAG[stage]]).permutation(n)


def _batches(order: np.ndarray, batch_size: int):
    for i in range(0, len(order), batch_size):
        yield torch.as_tensor(order[i:i + batch_size])


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))


def _guard(value: torch.Tensor, stage: str, epoch: int, step: int, parts: dict) -> None:
    if not torch.isfinite(value):
        detail = ", ".join(f"{k}={float(torch.as_tensor(v).detach()):.4g}" for k, v in parts.items())
        raise FloatingPointError(f"non-finite {stage} loss at epoch {epoch + 1}, step {step}: {detail}")


def _write_csv(history: list[dict], path: Path) -> None:
    if not history:
        return
    keys = list(history[0])
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(history)


def _load_data(cfg: TrainConfig, data: TrainData | None) -> TrainData:
    if data is not None:
        return data
    if not cfg.data:
        raise ValueError("no training dataset configured (set data=<dataset dir>)")
    return TrainData.load(cfg.data, cfg.real_dir or None, cfg.val_split)


def _check_resume(ckpt: Checkpoint, stage: str, variant: str, expected_hash: str) -> None:
    if ckpt.stage != stage:
        raise ValueError(f"cannot resume {stage} training from a {ckpt.stage} checkpoint")
    if ckpt.variant != variant:
        raise ValueError(f"checkpoint variant {ckpt.variant} does not match {variant}")
    if ckpt.config_hash != expected_hash:
        raise ValueError(f"config hash mismatch on resume: checkpoint {ckpt.config_hash}, current {expected_hash}")


@torch.no_grad()
def predict_masks(model, images: torch.Tensor, batch_size: int = 32):
    model.eval()
    gs, ss = [], []
    for i in range(0, len(images), batch_size):
        g, s = model(images[i:i + batch_size])
        gs.append(g)
        ss.append(s)
    model.train()
    if not gs:
        empty = images.new_zeros((0, 1) + tuple(images.shape[-2:]))
        return empty, empty.clone()
    return torch.cat(gs), torch.cat(ss)


@torch.no_grad()
def _mask_bce(model, split: dict, limit: int = 64) -> float:
    if len(split["ids"]) == 0:
        return float("nan")
    g, s = predict_masks(model, split["I"][:limit])
    return float(mask_loss(split["M_g"][:limit], g) + mask_loss(split["M_s"][:limit], s))


def mask_val_iou(model, split: dict) -> tuple[float, float]:
    if len(split["ids"]) == 0:
        return float("nan"), float("nan")
    g, s = predict_masks(model, split["I"])
    return float(iou_per_sample(g, split["M_g"]).mean()), float(iou_per_sample(s, split["M_s"]).mean())


def train_mask_stage(cfg: TrainConfig, variant=AblationVariant.FULL, out_dir=None, resume_from=None,
                     data: TrainData | None = None) -> Checkpoint:
    """Alternate discriminator and generator updates; synthetic and real-proxy batches pair up 1:1."""
    variant = AblationVariant.parse(variant) if isinstance(variant, str) else variant
    data = _load_data(cfg, data)
    chash = cfg.hash(stage="mask", variant=variant.value, dataset=data.dataset_hash)
    set_deterministic(cfg.seed)
    model = build_mask_model(variant, cfg.net_config())
    opt_g = _adam(model.generator_parameters(), cfg)
    opt_d = _adam(model.discriminator_parameters(), cfg) if model.uses_da else None

    history: list[dict] = []
    start = 0
    initial_bce = None
    if resume_from is not None:
        ckpt = resume_from if isinstance(resume_from, Checkpoint) else load_checkpoint(resume_from)
        _check_resume(ckpt, "mask", variant.value, chash)
        ckpt.params["mask"].apply_to(model)
        opt_g.load_state_dict(ckpt.optimizer["g"])
        if opt_d is not None:
            opt_d.load_state_dict(ckpt.optimizer["d"])
        history = list(ckpt.history)
        start = ckpt.epoch
        initial_bce = ckpt.extra.get("initial_train_bce")
    if initial_bce is None:
        initial_bce = _mask_bce(model, data.train)

    out = Path(out_dir) if out_dir is not None else None
    train, real = data.train, data.real
    n = len(train["ids"])
    best = max((h["val_iou_mean"] for h in history if not math.isnan(h["val_iou_mean"])), default=-1.0)
    ckpt = None
    for epoch in range(start, cfg.epochs_mask):
        order = epoch_order(cfg.seed, epoch, "mask", n)
        real_order = np.resize(np.random.default_rng([cfg.seed, epoch, 9]).permutation(len(real)), n)
        sums = dict(loss=0.0, adv_d=0.0, adv_g=0.0, mask_g=0.0, mask_s=0.0)
        steps = 0
        for step, idx in enumerate(_batches(order, cfg.batch_size)):
            img = train["I"][idx]
            f_syn = model.features(img)
            l_d = l_g = torch.zeros(())
            if model.uses_da:
                with torch.no_grad():
                    pos = real_order[step * cfg.batch_size: step * cfg.batch_size + len(idx)]
                    f_real = model.features(real[torch.as_tensor(pos)])
                opt_d.zero_grad()
                l_d = adv_loss_D(model.disc, f_syn.detach(), f_real)
                (cfg.lambda_adv * l_d).backward()
                opt_d.step()
            opt_g.zero_grad()
            m_g, m_s = model.predict_masks(f_syn)
            if model.uses_da:
                l_g = adv_loss_G(model.disc, f_syn)
            l_mg = mask_loss(train["M_g"][idx], m_g)
            l_ms = mask_loss(train["M_s"][idx], m_s)
            gen = cfg.lambda_adv * l_g + cfg.lambda_mask * (l_mg + l_ms)
            parts = dict(adv_d=l_d, adv_g=l_g, mask_g=l_mg, mask_s=l_ms)
            _guard(gen + cfg.lambda_adv * l_d, "mask", epoch, step, parts)
            gen.backward()
            opt_g.step()
            total = predict_loss(PredictComponents(l_d, l_g, l_mg, l_ms), cfg.lambda_adv, cfg.lambda_mask)
            sums["loss"] += total.item()
            for k, v in parts.items():
                sums[k] += v.item()
            steps += 1
        iou_g, iou_s = mask_val_iou(model, data.val)
        row = {"epoch": epoch + 1, **{k: v / steps for k, v in sums.items()},
               "val_iou_g": iou_g, "val_iou_s": iou_s, "val_iou_mean": (iou_g + iou_s) / 2}
        history.append(row)
        log.info("mask epoch %d: loss %.4f  val IoU g %.3f s %.3f", epoch + 1, row["loss"], iou_g, iou_s)

        ckpt = Checkpoint(
            "mask", variant.value, {"mask": ParameterStore.from_module(model)},
            {"g": copy.deepcopy(opt_g.state_dict()), **({"d": copy.deepcopy(opt_d.state_dict())} if opt_d else {})},
            epoch + 1, asdict(cfg), chash, list(history),
            {"initial_train_bce": initial_bce, "mask_variant": variant.value},
        )
        if out is not None:
            save_checkpoint(ckpt, out / "mask_last.pt")
            if not math.isnan(row["val_iou_mean"]) and row["val_iou_mean"] > best:
                best = row["val_iou_mean"]
                save_checkpoint(ckpt, out / "mask_best.pt")
            _write_csv(history, out / "mask_losses.csv")

    if ckpt is None:
        ckpt = Checkpoint(
            "mask", variant.value, {"mask": ParameterStore.from_module(model)},
            {"g": opt_g.state_dict(), **({"d": opt_d.state_dict()} if opt_d else {})},
            start, asdict(cfg), chash, history, {"initial_train_bce": initial_bce, "mask_variant": variant.value},
        )
    ckpt.extra["final_train_bce"] = _mask_bce(model, data.train)
    return ckpt


def _removal_batch(split: dict, masks, idx) -> tuple[dict, torch.Tensor, torch.Tensor]:
    batch = {k: split[k][idx] for k in ("I", "I_g", "I_s", "I_f")}
    return batch, masks[0][idx], masks[1][idx]


@torch.no_grad()
def removal_val_l1(model, split: dict, masks, batch_size: int = 32) -> float:
    n = len(split["ids"])
    if n == 0:
        return float("nan")
    model.eval()
    total = 0.0
    for i in range(0, n, batch_size):
        sl = slice(i, i + batch_size)
        out = model(split["I"][sl], masks[0][sl], masks[1][sl])
        total += float((out.final - split["I_f"][sl]).abs().mean()) * len(split["I"][sl])
    model.train()
    return total / n


def train_removal_stage(cfg: TrainConfig, mask_checkpoint, variant=AblationVariant.FULL, out_dir=None,
                        resume_from=None, data: TrainData | None = None) -> Checkpoint:
    """Train De-Shadow / De-Glass on masks predicted by a frozen mask stage."""
    variant = AblationVariant.parse(variant) if isinstance(variant, str) else variant
    if not isinstance(mask_checkpoint, Checkpoint):
        mask_checkpoint = load_checkpoint(mask_checkpoint)
    if "mask" not in mask_checkpoint.params:
        raise ValueError("mask checkpoint holds no mask-stage parameters")
    data = _load_data(cfg, data)
    mask_variant = mask_checkpoint.extra.get("mask_variant", mask_checkpoint.variant)
    mask_model = mask_checkpoint.mask_model()
    mask_model.requires_grad_(False)
    mask_hash = parameter_hash(mask_model)
    chash = cfg.hash(stage="removal", variant=variant.value, dataset=data.dataset_hash, mask=mask_hash)

    set_deterministic(cfg.seed)
    model = build_removal_model(variant, cfg.net_config())
    opt = _adam(model.parameters(), cfg)
    history: list[dict] = []
    start = 0
    if resume_from is not None:
        ckpt = resume_from if isinstance(resume_from, Checkpoint) else load_checkpoint(resume_from)
        _check_resume(ckpt, "removal", variant.value, chash)
        ckpt.params["removal"].apply_to(model)
        opt.load_state_dict(ckpt.optimizer["removal"])
        history = list(ckpt.history)
        start = ckpt.epoch

    train_masks = predict_masks(mask_model, data.train["I"])
    val_masks = predict_masks(mask_model, data.val["I"])
    out = Path(out_dir) if out_dir is not None else None
    n = len(data.train["ids"])
    best = min((h["val_l1"] for h in history if not math.isnan(h["val_l1"])), default=math.inf)
    frozen_store = ParameterStore.from_module(mask_model)

    def make_ckpt(epoch):
        return Checkpoint(
            "removal", variant.value, {"mask": frozen_store, "removal": ParameterStore.from_module(model)},
            {"removal": copy.deepcopy(opt.state_dict())}, epoch, asdict(cfg), chash, list(history),
            {"mask_variant": mask_variant, "mask_param_hash": mask_hash},
        )

    ckpt = None
    for epoch in range(start, cfg.epochs_removal):
        order = epoch_order(cfg.seed, epoch, "removal", n)
        sums: dict[str, float] = {}
        steps = 0
        for step, idx in enumerate(_batches(order, cfg.batch_size)):
            batch, g, s = _removal_batch(data.train, train_masks, idx)
            opt.zero_grad()
            bundle = model(batch["I"], g, s)
            total, parts = model.losses(bundle, batch, cfg.lambda_de_s, cfg.lambda_de_g)
            _guard(total, "removal", epoch, step, parts)
            total.backward()
            opt.step()
            for k, v in {"loss": total, **parts}.items():
                sums[k] = sums.get(k, 0.0) + v.item()
            steps += 1
        val = removal_val_l1(model, data.val, val_masks)
        row = {"epoch": epoch + 1, **{k: v / steps for k, v in sums.items()}, "val_l1": val}
        history.append(row)
        log.info("removal epoch %d: loss %.4f  val L1 %.4f", epoch + 1, row["loss"], val)
        ckpt = make_ckpt(epoch + 1)
        if out is not None:
            save_checkpoint(ckpt, out / "removal_last.pt")
            if not math.isnan(val) and val < best:
                best = val
                save_checkpoint(ckpt, out / "removal_best.pt")
            _write_csv(history, out / "removal_losses.csv")

    if parameter_hash(mask_model) != mask_hash:
        raise RuntimeError("mask-stage parameters changed during removal training")
    return ckpt if ckpt is not None else make_ckpt(start)
