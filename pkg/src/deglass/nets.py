"""Network families: image transform nets, mask nets, the domain-adaptation
encoder and the patch discriminator, plus parameter file I/O."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import torch
from torch import nn
import torch.nn.functional as F

PARAMS_FORMAT = "deglass-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    base_channels: int = 16
    n_residual_blocks: int = 4
    input_channels: int = 3
    output_channels: int = 3
    n_downsampling: int = 2
    extra_upsampling: int = 0
    feature_channels: int = 32
    fixed_channels: int = 32
    n_da_blocks: int = 6
    fixed_seed: int = 0
    residual_output: bool = True

    def __post_init__(self) -> None:
        for name in ("base_channels", "n_residual_blocks", "input_channels", "output_channels",
                     "feature_channels", "fixed_channels", "n_da_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"NetConfig.{name} must be >= 1")
        if self.n_downsampling < 0 or self.extra_upsampling < 0:
            raise ValueError("NetConfig up/down sampling counts must be >= 0")

    def with_(self, **kw) -> "NetConfig":
        return replace(self, **kw)


def instance_norm(channels: int) -> nn.InstanceNorm2d:
    return nn.InstanceNorm2d(channels, affine=True)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            instance_norm(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            instance_norm(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class ResnetGenerator(nn.Module):
    """Encoder (7x7 stem, strided downsampling) -> residual blocks -> decoder
    (nearest upsampling + conv) -> 7x7 head.

    ``extra_upsampling`` adds decoder stages beyond the encoder's downsampling,
    so a half-resolution feature map can be decoded to full image size.

    With the "residual" activation the head predicts a correction in [-1, 1] that
    is added to the first ``out_ch`` input channels, then clipped to [0, 1]; its
    last conv starts at zero.
    """

    def __init__(self, in_ch: int, out_ch: int, base: int, n_blocks: int,
                 n_down: int = 2, extra_up: int = 0, activation: str = "unit_tanh"):
        super().__init__()
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3), nn.Conv2d(in_ch, base, 7), instance_norm(base), nn.ReLU(inplace=True),
        ]
        ch = base
        for _ in range(n_down):
            layers += [nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1), instance_norm(ch * 2), nn.ReLU(inplace=True)]
            ch *= 2
        layers += [ResidualBlock(ch) for _ in range(n_blocks)]
        for _ in range(n_down):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"), nn.ReflectionPad2d(1),
                nn.Conv2d(ch, ch // 2, 3), instance_norm(ch // 2), nn.ReLU(inplace=True),
            ]
            ch //= 2
        for _ in range(extra_up):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"), nn.ReflectionPad2d(1),
                nn.Conv2d(ch, ch, 3), instance_norm(ch), nn.ReLU(inplace=True),
            ]
        self.body = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(ch, out_ch, 7))
        if activation not in ("unit_tanh", "sigmoid", "residual"):
            raise ValueError(f"unknown output activation {activation!r}")
        if activation == "residual":
            if in_ch < out_ch:
                raise ValueError("residual output needs at least as many input as output channels")
            # Start as the identity map; pixels the net never learns to touch stay exact.
            nn.init.zeros_(self.head[1].weight)
            nn.init.zeros_(self.head[1].bias)
        self.activation = activation

    def forward(self, x):
        y = self.head(self.body(x))
        if self.activation == "sigmoid":
            return torch.sigmoid(y)
        if self.activation == "residual":
            return (x[:, : y.shape[1]] + torch.tanh(y)).clamp(0.0, 1.0)
        return 0.5 * (torch.tanh(y) + 1.0)


def build_transform_net(cfg: NetConfig) -> ResnetGenerator:
    """Image-to-image net with outputs in [0, 1]; spatial size is preserved.

    The image to be corrected must occupy the leading input channels when
    ``cfg.residual_output`` is on.
    """
    return ResnetGenerator(cfg.input_channels, cfg.output_channels, cfg.base_channels,
                           cfg.n_residual_blocks, cfg.n_downsampling, 0,
                           "residual" if cfg.residual_output else "unit_tanh")


def build_mask_net(cfg: NetConfig) -> ResnetGenerator:
    """Mask predictor with sigmoid outputs; ``extra_upsampling`` lifts the
    feature resolution to image resolution."""
    return ResnetGenerator(cfg.input_channels, cfg.output_channels, cfg.base_channels,
                           cfg.n_residual_blocks, cfg.n_downsampling, cfg.extra_upsampling, "sigmoid")


# Normalisation applied before the frozen front-end.
_INPUT_MEAN = 0.45
_INPUT_STD = 0.25


class DANet(nn.Module):
    """Frozen full-resolution 3x3 convolution + ReLU, then a trainable strided
    convolution and residual blocks producing a half-resolution feature map."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.fixed = nn.Conv2d(3, cfg.fixed_channels, 3, padding=1)
        gen = torch.Generator().manual_seed(cfg.fixed_seed)
        with torch.no_grad():
            fan_in = 3 * 9
            self.fixed.weight.copy_(torch.randn(self.fixed.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
            self.fixed.bias.zero_()
        self.fixed.requires_grad_(False)
        ch = cfg.feature_channels
        self.down = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(cfg.fixed_channels, ch, 3, stride=2),
            instance_norm(ch), nn.ReLU(inplace=True),
        )
        self.blocks = nn.Sequential(*[ResidualBlock(ch) for _ in range(cfg.n_da_blocks)])
        self.out_channels = ch

    def load_fixed_weights(self, path) -> None:
        """Replace the frozen layer with weights from a file holding ``weight``/``bias``."""
        state = torch.load(path, map_location="cpu", weights_only=True)
        with torch.no_grad():
            self.fixed.weight.copy_(state["weight"])
            self.fixed.bias.copy_(state["bias"])

    def forward(self, x):
        x = (x - _INPUT_MEAN) / _INPUT_STD
        x = F.relu(self.fixed(x))
        return self.blocks(self.down(x))


def build_da_net(cfg: NetConfig) -> DANet:
    return DANet(cfg)


class PatchDiscriminator(nn.Module):
    """Three conv layers over the feature map; raw (unbounded) patch scores."""

    def __init__(self, in_ch: int, ndf: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, ndf, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(ndf, ndf * 2, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(ndf * 2, 1, 3, padding=1),
        )

    def forward(self, f):
        return self.net(f)


def build_discriminator(cfg: NetConfig) -> PatchDiscriminator:
    return PatchDiscriminator(cfg.feature_channels, 2 * cfg.base_channels)


def trainable_parameters(module: nn.Module):
    return [p for p in module.parameters() if p.requires_grad]


@dataclass
class ParameterStore:
    """Named tensors with a frozen flag each."""

    tensors: dict[str, torch.Tensor]
    frozen: dict[str, bool]

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParameterStore":
        tensors, frozen = {}, {}
        for name, p in module.named_parameters():
            tensors[name] = p.detach().clone()
            frozen[name] = not p.requires_grad
        for name, b in module.named_buffers():
            tensors[name] = b.detach().clone()
            frozen[name] = True
        return cls(tensors, frozen)

    def apply_to(self, module: nn.Module) -> nn.Module:
        own = dict(module.named_parameters())
        own.update(dict(module.named_buffers()))
        missing = sorted(set(own) - set(self.tensors))
        extra = sorted(set(self.tensors) - set(own))
        if missing or extra:
            raise KeyError(f"parameter mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        with torch.no_grad():
            for name, t in self.tensors.items():
                if own[name].shape != t.shape:
                    raise ValueError(f"shape mismatch for {name}: {tuple(own[name].shape)} vs {tuple(t.shape)}")
                own[name].copy_(t)
                if isinstance(own[name], nn.Parameter):
                    own[name].requires_grad_(not self.frozen[name])
        return module

    def to_payload(self) -> dict:
        return {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "arrays": {
                name: {
                    "data": t,
                    "shape": list(t.shape),
                    "dtype": str(t.dtype).replace("torch.", ""),
                    "frozen": bool(self.frozen[name]),
                }
                for name, t in self.tensors.items()
            },
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ParameterStore":
        if payload.get("format") != PARAMS_FORMAT:
            raise ValueError("not a deglass parameter file")
        if payload.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported parameter file version {payload.get('version')}")
        tensors, frozen = {}, {}
        for name, entry in payload["arrays"].items():
            t = entry["data"]
            if list(t.shape) != list(entry["shape"]):
                raise ValueError(f"corrupt entry {name}: stored shape {entry['shape']} != {list(t.shape)}")
            tensors[name] = t
            frozen[name] = bool(entry["frozen"])
        return cls(tensors, frozen)


def save_params(store, path) -> Path:
    if isinstance(store, nn.Module):
        store = ParameterStore.from_module(store)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(store.to_payload(), path)
    return path


def load_params(path) -> ParameterStore:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    return ParameterStore.from_payload(payload)
