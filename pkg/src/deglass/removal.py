"""Item removal: De-Shadow, mask operation, De-Glass, and the inference pipeline."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from deglass.nets import NetConfig, build_transform_net

MASK_THRESHOLD = 0.5


class RemovalBundle(NamedTuple):
    shadow_free: torch.Tensor
    masked: torch.Tensor
    final: torch.Tensor


class PipelineOutput(NamedTuple):
    final: torch.Tensor
    glass_mask: torch.Tensor
    shadow_mask: torch.Tensor
    shadow_free: torch.Tensor


def _check_spatial(image: torch.Tensor, *masks: torch.Tensor) -> None:
    for m in masks:
        if m.shape[0] != image.shape[0] or m.shape[-2:] != image.shape[-2:]:
            raise ValueError(f"mask shape {tuple(m.shape)} does not match image {tuple(image.shape)}")


def binarize(mask: torch.Tensor, threshold: float = MASK_THRESHOLD) -> torch.Tensor:
    return mask > threshold


def mask_operation(image: torch.Tensor, glass_mask: torch.Tensor, threshold: float = MASK_THRESHOLD) -> torch.Tensor:
    """Zero every pixel whose glass-mask value exceeds ``threshold``; keep the rest untouched."""
    _check_spatial(image, glass_mask)
    hard = binarize(glass_mask, threshold).expand_as(image)
    return torch.where(hard, torch.zeros_like(image), image)


class RemovalStageModel(nn.Module):
    """De-Shadow takes image + both masks (5 ch); De-Glass takes the masked
    shadow-free image + soft glass mask (4 ch)."""

    order = "deshadow_first"

    def __init__(self, cfg: NetConfig = NetConfig()):
        super().__init__()
        self.cfg = cfg
        self.de_shadow_net = build_transform_net(cfg.with_(input_channels=5, output_channels=3))
        self.de_glass_net = build_transform_net(cfg.with_(input_channels=4, output_channels=3))

    def forward(self, image, glass_mask, shadow_mask) -> RemovalBundle:
        shadow_free = de_shadow(self, image, glass_mask, shadow_mask)
        masked = mask_operation(shadow_free, glass_mask)
        final = de_glass(self, masked, glass_mask)
        return RemovalBundle(shadow_free, masked, final)

    def losses(self, bundle: RemovalBundle, batch: dict, lambda_de_s: float = 1.0, lambda_de_g: float = 1.0):
        total = removal_losses(bundle.shadow_free, batch["I_g"], bundle.final, batch["I_f"], lambda_de_s, lambda_de_g)
        return total, {"de_s": l1(bundle.shadow_free, batch["I_g"]), "de_g": l1(bundle.final, batch["I_f"])}


def de_shadow(model: RemovalStageModel, image, glass_mask, shadow_mask) -> torch.Tensor:
    _check_spatial(image, glass_mask, shadow_mask)
    return model.de_shadow_net(torch.cat([image, glass_mask, shadow_mask], dim=1))


def de_glass(model: RemovalStageModel, masked, glass_mask) -> torch.Tensor:
    _check_spatial(masked, glass_mask)
    return model.de_glass_net(torch.cat([masked, glass_mask], dim=1))


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def removal_losses(shadow_free, target_g, final, target_f, lambda_de_s: float = 1.0, lambda_de_g: float = 1.0):
    """Weighted pixel-mean L1 of the shadow-free and the final images."""
    return lambda_de_s * l1(shadow_free, target_g) + lambda_de_g * l1(final, target_f)


@torch.no_grad()
def remove_pipeline(mask_model, removal_model, image: torch.Tensor) -> PipelineOutput:
    """DA -> glass mask -> shadow mask -> De-Shadow -> mask operation -> De-Glass."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.shape[1] != 3:
        raise ValueError(f"expected an N x 3 x H x W image batch, got {tuple(image.shape)}")
    was_training = mask_model.training, removal_model.training
    mask_model.eval()
    removal_model.eval()
    try:
        m_g, m_s = mask_model(image)
        bundle = removal_model(image, m_g, m_s)
    finally:
        mask_model.train(was_training[0])
        removal_model.train(was_training[1])
    return PipelineOutput(bundle.final, m_g, m_s, bundle.shadow_free)
