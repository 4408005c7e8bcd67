"""Residual CNN trunks and GeM pooling for the appearance and shape streams.

Two presets: `toy` (basic blocks, trains on CPU in minutes) and
`resnet50-like` (bottleneck blocks, stage widths 256/512/1024/2048, final
stage at stride 1 so the last feature map keeps 1/16 resolution).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn


@dataclass
class BackboneConfig:
    preset: str = "toy"
    stem_channels: int = 32
    stem_kernel: int = 3
    stem_pool: bool = True
    block: str = "basic"                       # basic | bottleneck
    stage_blocks: tuple[int, ...] = (1, 1, 1, 1)
    stage_widths: tuple[int, ...] = (32, 64, 128, 256)   # output widths after expansion
    stage_strides: tuple[int, ...] = (1, 2, 2, 1)
    gem_p: float = 3.0
    gem_learnable: bool = False
    input_size: tuple[int, int] = (128, 64)    # (H, W)

    def validate(self) -> None:
        if len(self.stage_blocks) != 4 or len(self.stage_widths) != 4 \
                or len(self.stage_strides) != 4:
            raise ValueError("exactly 4 stages required")
        if self.block not in ("basic", "bottleneck"):
            raise ValueError(f"unknown block type {self.block!r}")
        if self.gem_p <= 0:
            raise ValueError("gem_p must be > 0")
        exp = 4 if self.block == "bottleneck" else 1
        for w in self.stage_widths:
            if w % exp:
                raise ValueError(f"stage width {w} not divisible by expansion {exp}")

    @property
    def final_channels(self) -> int:
        return self.stage_widths[-1]


def make_backbone_config(preset: str, **overrides) -> BackboneConfig:
    if preset == "toy":
        cfg = BackboneConfig()
    elif preset == "resnet50-like":
        cfg = BackboneConfig(
            preset="resnet50-like", stem_channels=64, stem_kernel=7, stem_pool=True,
            block="bottleneck", stage_blocks=(3, 4, 6, 3),
            stage_widths=(256, 512, 1024, 2048), stage_strides=(1, 2, 2, 1),
            input_size=(384, 144))
    else:
        raise ValueError(f"unknown preset {preset!r}")
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ValueError(f"unknown backbone field {k!r}")
        setattr(cfg, k, v)
    cfg.preset = preset
    cfg.validate()
    return cfg


class GeM(nn.Module):
    """Generalized-mean pooling: (mean x^p)^(1/p), clamped at eps.

    p=1 is average pooling; p grows toward per-channel max.
    """

    def __init__(self, p: float = 3.0, learnable: bool = False, eps: float = 1e-6):
        super().__init__()
        if p <= 0:
            raise ValueError("p must be > 0")
        self.eps = eps
        if learnable:
            self.p = nn.Parameter(torch.tensor(float(p)))
        else:
            self.register_buffer("p", torch.tensor(float(p)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.clamp(min=self.eps).pow(self.p).mean(dim=(-2, -1)).pow(1.0 / self.p)


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_ch: int, width: int, stride: int = 1,
                 downsample: nn.Module | None = None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, width, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, width: int, stride: int = 1,
                 downsample: nn.Module | None = None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, width * 4, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(width * 4)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class Stem(nn.Module):
    def __init__(self, cfg: BackboneConfig, in_channels: int = 3):
        super().__init__()
        k = cfg.stem_kernel
        self.conv = nn.Conv2d(in_channels, cfg.stem_channels, k, stride=2,
                              padding=k // 2, bias=False)
        self.bn = nn.BatchNorm2d(cfg.stem_channels)
        self.relu = nn.ReLU(inplace=True)
        self.pool = nn.MaxPool2d(3, 2, 1) if cfg.stem_pool else nn.Identity()

    def forward(self, x):
        return self.pool(self.relu(self.bn(self.conv(x))))


def _make_stage(block_cls, in_ch: int, out_width: int, num_blocks: int,
                stride: int) -> nn.Sequential:
    width = out_width // block_cls.expansion
    downsample = None
    if stride != 1 or in_ch != out_width:
        downsample = nn.Sequential(
            nn.Conv2d(in_ch, out_width, 1, stride, bias=False),
            nn.BatchNorm2d(out_width))
    blocks = [block_cls(in_ch, width, stride, downsample)]
    blocks += [block_cls(out_width, width) for _ in range(num_blocks - 1)]
    return nn.Sequential(*blocks)


class Trunk(nn.Module):
    """The four shared stages; stems live outside so they can be unshared."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        block_cls = Bottleneck if cfg.block == "bottleneck" else BasicBlock
        stages = []
        in_ch = cfg.stem_channels
        for width, blocks, stride in zip(cfg.stage_widths, cfg.stage_blocks,
                                         cfg.stage_strides):
            stages.append(_make_stage(block_cls, in_ch, width, blocks, stride))
            in_ch = width
        self.stages = nn.ModuleList(stages)

    def forward_stages(self, x: torch.Tensor) -> list[torch.Tensor]:
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps

    def forward(self, x):
        return self.forward_stages(x)[-1]


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
