"""Analytic parameter and FLOP accounting.

FLOPs follow the multiply-add convention: conv/linear/matmul MACs only,
normalization and activations free. Parameters count conv weights, affine
norm parameters, and attention projections; classifiers are reported
separately since they scale with the identity count.
"""
from __future__ import annotations

from dataclasses import dataclass

from .backbone import BackboneConfig


@dataclass
class Cost:
    params: int = 0
    macs: int = 0

    def __add__(self, other: "Cost") -> "Cost":
        return Cost(self.params + other.params, self.macs + other.macs)


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _conv(cin: int, cout: int, k: int, h_out: int, w_out: int,
          bias: bool = False) -> Cost:
    params = k * k * cin * cout + (cout if bias else 0)
    return Cost(params, k * k * cin * cout * h_out * w_out)


def _bn(c: int) -> Cost:
    return Cost(2 * c, 0)


def stem_cost(cfg: BackboneConfig, h: int, w: int) -> tuple[Cost, int, int]:
    k = cfg.stem_kernel
    h, w = _conv_out(h, k, 2, k // 2), _conv_out(w, k, 2, k // 2)
    cost = _conv(3, cfg.stem_channels, k, h, w) + _bn(cfg.stem_channels)
    if cfg.stem_pool:
        h, w = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)
    return cost, h, w


def _block_cost(block: str, in_ch: int, out_width: int, stride: int,
                h_in: int, w_in: int) -> tuple[Cost, int, int]:
    h, w = _conv_out(h_in, 3, stride, 1), _conv_out(w_in, 3, stride, 1)
    if block == "bottleneck":
        mid = out_width // 4
        cost = (_conv(in_ch, mid, 1, h_in, w_in) + _bn(mid)
                + _conv(mid, mid, 3, h, w) + _bn(mid)
                + _conv(mid, out_width, 1, h, w) + _bn(out_width))
    else:
        cost = (_conv(in_ch, out_width, 3, h, w) + _bn(out_width)
                + _conv(out_width, out_width, 3, h, w) + _bn(out_width))
    if stride != 1 or in_ch != out_width:
        cost = cost + _conv(in_ch, out_width, 1, h, w) + _bn(out_width)
    return cost, h, w


def stage_cost(cfg: BackboneConfig, stage: int, in_ch: int, h: int,
               w: int) -> tuple[Cost, int, int]:
    width = cfg.stage_widths[stage]
    total = Cost()
    stride = cfg.stage_strides[stage]
    for b in range(cfg.stage_blocks[stage]):
        cost, h, w = _block_cost(cfg.block, in_ch if b == 0 else width, width,
                                 stride if b == 0 else 1, h, w)
        total = total + cost
        in_ch = width
    return total, h, w


def trunk_cost(cfg: BackboneConfig, h: int, w: int) -> tuple[Cost, int, int]:
    total = Cost()
    in_ch = cfg.stem_channels
    for stage in range(4):
        cost, h, w = stage_cost(cfg, stage, in_ch, h, w)
        total = total + cost
        in_ch = cfg.stage_widths[stage]
    return total, h, w


def stage3_output_size(cfg: BackboneConfig,
                       input_size: tuple[int, int] | None = None) -> tuple[int, int]:
    h, w = input_size or cfg.input_size
    _, h, w = stem_cost(cfg, h, w)
    for stage in range(3):
        _, h, w = stage_cost(cfg, stage, 1, h, w)   # channels irrelevant here
    return h, w


def count_appearance(cfg: BackboneConfig,
                     input_size: tuple[int, int] | None = None) -> Cost:
    """Dual-stem trunk: both stems' parameters, one stem's compute per image."""
    h, w = input_size or cfg.input_size
    stem, h, w = stem_cost(cfg, h, w)
    trunk, _, _ = trunk_cost(cfg, h, w)
    return Cost(2 * stem.params, stem.macs) + trunk


def count_shape_stream(cfg: BackboneConfig,
                       input_size: tuple[int, int] | None = None) -> Cost:
    h, w = input_size or cfg.input_size
    stem, h, w = stem_cost(cfg, h, w)
    trunk, _, _ = trunk_cost(cfg, h, w)
    return stem + trunk


def count_subnet(cfg: BackboneConfig,
                 input_size: tuple[int, int] | None = None) -> Cost:
    h, w = stage3_output_size(cfg, input_size)
    cost, _, _ = stage_cost(cfg, 3, cfg.stage_widths[2], h, w)
    return cost


def count_attention(channels: int, h: int, w: int,
                    inner: int | None = None) -> Cost:
    inner = inner if inner is not None else channels // 2
    n = h * w
    proj = Cost(3 * (channels * inner + inner), 3 * channels * inner * n)
    out = Cost(inner * channels + channels, inner * channels * n)
    attn_matmuls = Cost(0, 2 * n * n * inner)
    return proj + out + attn_matmuls + _bn(inner)


def final_map_size(cfg: BackboneConfig,
                   input_size: tuple[int, int] | None = None) -> tuple[int, int]:
    h, w = input_size or cfg.input_size
    _, h, w = stem_cost(cfg, h, w)
    _, h, w = trunk_cost(cfg, h, w)
    return h, w


@dataclass
class AuditRow:
    label: str
    components: str
    params: int
    macs: int


def audit(cfg: BackboneConfig,
          input_size: tuple[int, int] | None = None) -> list[AuditRow]:
    """Inference-path cost of the four deployment settings plus the attention
    overhead, at the given input size."""
    app = count_appearance(cfg, input_size)
    shape_net = count_shape_stream(cfg, input_size)
    subnet = count_subnet(cfg, input_size)
    h, w = final_map_size(cfg, input_size)
    afe = count_attention(cfg.final_channels, h, w)
    deployed = app + subnet
    rows = [
        AuditRow("setting-1", "appearance trunk", app.params, app.macs),
        AuditRow("setting-2", "appearance + separate shape net",
                 (app + shape_net).params, (app + shape_net).macs),
        AuditRow("setting-3", "appearance + shape subnet",
                 deployed.params, deployed.macs),
        AuditRow("setting-4", "appearance + shape subnet + enhancement x2",
                 (deployed + afe + afe).params, (deployed + afe + afe).macs),
        AuditRow("afe-pair", "enhancement attention (both stages)",
                 2 * afe.params, 2 * afe.macs),
    ]
    return rows


def format_audit(rows: list[AuditRow]) -> str:
    lines = [f"{'setting':<10} {'params/M':>10} {'flops/G':>10}  components"]
    for r in rows:
        lines.append(f"{r.label:<10} {r.params / 1e6:>10.4f} "
                     f"{r.macs / 1e9:>10.4f}  {r.components}")
    return "\n".join(lines)
