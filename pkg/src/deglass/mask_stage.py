"""Cross-domain segmentation: uniform feature map, glass mask, then shadow mask
guided by the glass mask; adversarial and mask losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn
import torch.nn.functional as F

from deglass.nets import NetConfig, build_da_net, build_discriminator, build_mask_net

BCE_EPS = 1e-7


@dataclass
class UniformFeatureMap:
    features: torch.Tensor
    domain: str = "synthetic"

    def __post_init__(self) -> None:
        if self.domain not in ("synthetic", "real"):
            raise ValueError(f"unknown domain tag {self.domain!r}")


class MaskPair(NamedTuple):
    glass: torch.Tensor
    shadow: torch.Tensor


class MaskStageModel(nn.Module):
    """DA network + discriminator + glass-mask net + shadow-mask net.

    Data flow is fixed: the shadow-mask net sees the feature map concatenated
    with the (soft) glass mask pooled down to feature resolution.
    """

    uses_da = True
    wiring = "gm_then_sm"

    def __init__(self, cfg: NetConfig = NetConfig()):
        super().__init__()
        self.cfg = cfg
        c_f = cfg.feature_channels
        self.da = build_da_net(cfg)
        self.disc = build_discriminator(cfg)
        self.glass_net = build_mask_net(cfg.with_(input_channels=c_f, output_channels=1, extra_upsampling=1))
        self.shadow_net = build_mask_net(cfg.with_(input_channels=c_f + 1, output_channels=1, extra_upsampling=1))

    def features(self, image: torch.Tensor) -> torch.Tensor:
        return self.da(image)

    def predict_masks(self, feats: torch.Tensor) -> MaskPair:
        m_g = glass_mask_forward(self, feats)
        m_s = shadow_mask_forward(self, feats, m_g)
        return MaskPair(m_g, m_s)

    def forward(self, image: torch.Tensor) -> MaskPair:
        return self.predict_masks(self.features(image))

    def generator_parameters(self):
        """Everything optimised by the mask/adversarial-generator step."""
        return [p for n, p in self.named_parameters() if p.requires_grad and not n.startswith("disc.")]

    def discriminator_parameters(self):
        return [p for p in self.disc.parameters() if p.requires_grad]


def da_forward(model: MaskStageModel, image: torch.Tensor, domain: str = "synthetic") -> UniformFeatureMap:
    return UniformFeatureMap(model.features(image), domain)


def _feature_tensor(f) -> torch.Tensor:
    return f.features if isinstance(f, UniformFeatureMap) else f


def glass_mask_forward(model: MaskStageModel, feats) -> torch.Tensor:
    return model.glass_net(_feature_tensor(feats))


def pool_to(mask: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Area-downsample a guidance mask to the spatial size of ``ref``."""
    if mask.dim() != 4 or mask.shape[0] != ref.shape[0]:
        raise ValueError(f"guidance mask shape {tuple(mask.shape)} incompatible with {tuple(ref.shape)}")
    if mask.shape[-2:] == ref.shape[-2:]:
        return mask
    return F.adaptive_avg_pool2d(mask, ref.shape[-2:])


def shadow_mask_forward(model: MaskStageModel, feats, glass_mask: torch.Tensor) -> torch.Tensor:
    f = _feature_tensor(feats)
    if glass_mask.shape[-2] % f.shape[-2] or glass_mask.shape[-1] % f.shape[-1]:
        raise ValueError(
            f"glass mask {tuple(glass_mask.shape[-2:])} is not a multiple of feature size {tuple(f.shape[-2:])}"
        )
    return model.shadow_net(torch.cat([f, pool_to(glass_mask, f)], dim=1))


def adv_loss_D(D: nn.Module, f_syn, f_real) -> torch.Tensor:
    """Least-squares discriminator loss, patch-mean: synthetic -> 0, real -> 1."""
    s = D(_feature_tensor(f_syn))
    r = D(_feature_tensor(f_real))
    return (s**2).mean() + ((r - 1.0) ** 2).mean()


def adv_loss_G(D: nn.Module, f_syn) -> torch.Tensor:
    """Least-squares generator loss: push synthetic features toward the real label."""
    return ((D(_feature_tensor(f_syn)) - 1.0) ** 2).mean()


def mask_loss(target: torch.Tensor, pred: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """Pixel-mean binary cross entropy with predictions clamped to [eps, 1 - eps]."""
    if target.shape != pred.shape:
        raise ValueError(f"mask shapes differ: {tuple(target.shape)} vs {tuple(pred.shape)}")
    p = pred.clamp(eps, 1.0 - eps)
    t = target.to(p.dtype)
    return -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).mean()


class PredictComponents(NamedTuple):
    adv_d: torch.Tensor | float
    adv_g: torch.Tensor | float
    mask_g: torch.Tensor | float
    mask_s: torch.Tensor | float


def predict_loss(components: PredictComponents, lambda_adv: float = 0.1, lambda_mask: float = 1.0):
    c = components
    return lambda_adv * c.adv_d + lambda_adv * c.adv_g + lambda_mask * c.mask_g + lambda_mask * c.mask_s
