"""Pipeline rewirings used by the ablation harness.

Mask-stage variants change how the two masks are predicted; removal-stage
variants change how the removal networks are chained. Each variant keeps the
interface of the default models so the trainer handles all of them alike.
"""

from __future__ import annotations

import enum

import torch
from torch import nn

from deglass.mask_stage import MaskPair, MaskStageModel, pool_to
from deglass.nets import NetConfig, build_da_net, build_discriminator, build_mask_net, build_transform_net
from deglass.removal import RemovalBundle, RemovalStageModel, l1, mask_operation


class AblationVariant(str, enum.Enum):
    FULL = "FULL"
    WO_DA = "WO_DA"
    WO_MULTISTEP_MASK = "WO_MULTISTEP_MASK"
    SM_GUIDED_GM = "SM_GUIDED_GM"
    WO_SM = "WO_SM"
    WO_GM = "WO_GM"
    WO_MULTISTEP_REMOVAL = "WO_MULTISTEP_REMOVAL"
    DEGLASS_FIRST = "DEGLASS_FIRST"
    WO_MO = "WO_MO"

    @classmethod
    def parse(cls, name: str) -> "AblationVariant":
        key = name.strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown ablation variant {name!r}; choose from {[v.value for v in cls]}") from None

    @property
    def stage(self) -> str:
        if self in MASK_VARIANTS:
            return "mask"
        if self in REMOVAL_VARIANTS:
            return "removal"
        return "both"


MASK_VARIANTS = frozenset(
    {AblationVariant.WO_DA, AblationVariant.WO_MULTISTEP_MASK, AblationVariant.SM_GUIDED_GM}
)
REMOVAL_VARIANTS = frozenset(
    {
        AblationVariant.WO_SM,
        AblationVariant.WO_GM,
        AblationVariant.WO_MULTISTEP_REMOVAL,
        AblationVariant.DEGLASS_FIRST,
        AblationVariant.WO_MO,
    }
)


class NoDAMaskModel(MaskStageModel):
    """Two segmentation nets straight on the raw image; no adaptation, no discriminator."""

    uses_da = False
    wiring = "raw_gm_then_sm"

    def __init__(self, cfg: NetConfig = NetConfig()):
        nn.Module.__init__(self)
        self.cfg = cfg
        self.glass_net = build_mask_net(cfg.with_(input_channels=3, output_channels=1, extra_upsampling=0))
        self.shadow_net = build_mask_net(cfg.with_(input_channels=4, output_channels=1, extra_upsampling=0))

    def features(self, image):
        return image

    def discriminator_parameters(self):
        return []


class SingleNetMaskModel(MaskStageModel):
    """One net with a two-channel sigmoid output (glass, shadow)."""

    wiring = "joint"

    def __init__(self, cfg: NetConfig = NetConfig()):
        nn.Module.__init__(self)
        self.cfg = cfg
        self.da = build_da_net(cfg)
        self.disc = build_discriminator(cfg)
        self.joint_net = build_mask_net(
            cfg.with_(input_channels=cfg.feature_channels, output_channels=2, extra_upsampling=1)
        )

    def predict_masks(self, feats):
        out = self.joint_net(feats)
        return MaskPair(out[:, :1], out[:, 1:])


class ShadowFirstMaskModel(MaskStageModel):
    """Shadow mask predicted first, then used to guide the glass mask."""

    wiring = "sm_then_gm"

    def __init__(self, cfg: NetConfig = NetConfig()):
        nn.Module.__init__(self)
        self.cfg = cfg
        c_f = cfg.feature_channels
        self.da = build_da_net(cfg)
        self.disc = build_discriminator(cfg)
        self.shadow_net = build_mask_net(cfg.with_(input_channels=c_f, output_channels=1, extra_upsampling=1))
        self.glass_net = build_mask_net(cfg.with_(input_channels=c_f + 1, output_channels=1, extra_upsampling=1))

    def predict_masks(self, feats):
        m_s = self.shadow_net(feats)
        m_g = self.glass_net(torch.cat([feats, pool_to(m_s, feats)], dim=1))
        return MaskPair(m_g, m_s)


class _RemovalVariant(RemovalStageModel):
    step1_target = "I_g"

    def losses(self, bundle, batch, lambda_de_s=1.0, lambda_de_g=1.0):
        de_s = l1(bundle.shadow_free, batch[self.step1_target])
        de_g = l1(bundle.final, batch["I_f"])
        return lambda_de_s * de_s + lambda_de_g * de_g, {"de_s": de_s, "de_g": de_g}


class NoShadowMaskRemoval(_RemovalVariant):
    def __init__(self, cfg: NetConfig = NetConfig()):
        nn.Module.__init__(self)
        self.cfg = cfg
        self.de_shadow_net = build_transform_net(cfg.with_(input_channels=4, output_channels=3))
        self.de_glass_net = build_transform_net(cfg.with_(input_channels=4, output_channels=3))

    def forward(self, image, glass_mask, shadow_mask):
        shadow_free = self.de_shadow_net(torch.cat([image, glass_mask], 1))
        masked = mask_operation(shadow_free, glass_mask)
        return RemovalBundle(shadow_free, masked, self.de_glass_net(torch.cat([masked, glass_mask], 1)))


class NoGlassMaskRemoval(_RemovalVariant):
    """Without the glass mask there is nothing to drive the mask operation, so it is skipped."""

    def __init__(self, cfg: NetConfig = NetConfig()):
        nn.Module.__init__(self)
        self.cfg = cfg
        self.de_shadow_net = build_transform_net(cfg.with_(input_channels=4, output_channels=3))
        self.de_glass_net = build_transform_net(cfg.with_(input_channels=3, output_channels=3))

    def forward(self, image, glass_mask, shadow_mask):
        shadow_free = self.de_shadow_net(torch.cat([image, shadow_mask], 1))
        return RemovalBundle(shadow_free, shadow_free, self.de_glass_net(shadow_free))


class SingleStepRemoval(_RemovalVariant):
    step1_target = None

    def __init__(self, cfg: NetConfig = NetConfig()):
        nn.Module.__init__(self)
        self.cfg = cfg
        self.joint_net = build_transform_net(cfg.with_(input_channels=5, output_channels=3))

    def forward(self, image, glass_mask, shadow_mask):
        final = self.joint_net(torch.cat([image, glass_mask, shadow_mask], 1))
        return RemovalBundle(final, image, final)

    def losses(self, bundle, batch, lambda_de_s=1.0, lambda_de_g=1.0):
        de_g = l1(bundle.final, batch["I_f"])
        return lambda_de_g * de_g, {"de_g": de_g}


class DeglassFirstRemoval(_RemovalVariant):
    """Glasses removed first (target I_s), shadow second (target I_f).

    The bundle's first field carries the step-1 output here, i.e. the
    glasses-free image that still has the shadow.
    """

    step1_target = "I_s"

    def __init__(self, cfg: NetConfig = NetConfig()):
        nn.Module.__init__(self)
        self.cfg = cfg
        self.de_glass_net = build_transform_net(cfg.with_(input_channels=4, output_channels=3))
        self.de_shadow_net = build_transform_net(cfg.with_(input_channels=5, output_channels=3))

    def forward(self, image, glass_mask, shadow_mask):
        masked = mask_operation(image, glass_mask)
        glass_free = self.de_glass_net(torch.cat([masked, glass_mask], 1))
        final = self.de_shadow_net(torch.cat([glass_free, glass_mask, shadow_mask], 1))
        return RemovalBundle(glass_free, masked, final)

    def losses(self, bundle, batch, lambda_de_s=1.0, lambda_de_g=1.0):
        de_g = l1(bundle.shadow_free, batch["I_s"])
        de_s = l1(bundle.final, batch["I_f"])
        return lambda_de_g * de_g + lambda_de_s * de_s, {"de_s": de_s, "de_g": de_g}


class NoMaskOpRemoval(_RemovalVariant):
    """De-Glass sees the shadow-free image with the frame texture intact."""

    def forward(self, image, glass_mask, shadow_mask):
        shadow_free = self.de_shadow_net(torch.cat([image, glass_mask, shadow_mask], 1))
        return RemovalBundle(shadow_free, shadow_free, self.de_glass_net(torch.cat([shadow_free, glass_mask], 1)))


_MASK_BUILDERS = {
    AblationVariant.WO_DA: NoDAMaskModel,
    AblationVariant.WO_MULTISTEP_MASK: SingleNetMaskModel,
    AblationVariant.SM_GUIDED_GM: ShadowFirstMaskModel,
}
_REMOVAL_BUILDERS = {
    AblationVariant.WO_SM: NoShadowMaskRemoval,
    AblationVariant.WO_GM: NoGlassMaskRemoval,
    AblationVariant.WO_MULTISTEP_REMOVAL: SingleStepRemoval,
    AblationVariant.DEGLASS_FIRST: DeglassFirstRemoval,
    AblationVariant.WO_MO: NoMaskOpRemoval,
}


def build_mask_model(variant=AblationVariant.FULL, cfg: NetConfig = NetConfig()) -> MaskStageModel:
    variant = AblationVariant.parse(variant) if isinstance(variant, str) else variant
    return _MASK_BUILDERS.get(variant, MaskStageModel)(cfg)


def build_removal_model(variant=AblationVariant.FULL, cfg: NetConfig = NetConfig()) -> RemovalStageModel:
    variant = AblationVariant.parse(variant) if isinstance(variant, str) else variant
    return _REMOVAL_BUILDERS.get(variant, RemovalStageModel)(cfg)
