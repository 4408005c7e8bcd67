"""Full model: dual-stream appearance trunk, shape stream with infrared
restitution, the distilled shape subnet, and the two-stage appearance
enhancement cascade, wired per ablation setting.

Setting tokens:
  B        appearance baseline only
  B+S      + shape stream and distilled shape subnet
  B+S+I    + infrared shape restitution in the shape stream
  full     + two-stage appearance enhancement (baseline supervision moves to
             the enhanced features)
  full-S1  full with enhancement stage 1 removed; the shape map queries
             stage 2 directly
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import (ResidualCrossAttention, enhance_stage1, enhance_stage2,
                        restitute_infrared_shape)
from .backbone import BackboneConfig, GeM, Stem, Trunk, init_weights
from .losses import (IdentityClassifier, ce_loss, kd_instance, kd_prototype,
                     total_loss, wrt_loss)


@dataclass(frozen=True)
class SettingSpec:
    shape_stream: bool
    isr: bool
    subnet: bool
    afe: bool
    afe_stage1: bool
    baseline_supervision: bool


SETTINGS: dict[str, SettingSpec] = {
    "B":       SettingSpec(False, False, False, False, False, True),
    "B+S":     SettingSpec(True,  False, True,  False, False, True),
    "B+S+I":   SettingSpec(True,  True,  True,  False, False, True),
    "full":    SettingSpec(True,  True,  True,  True,  True,  False),
    "full-S1": SettingSpec(True,  True,  True,  True,  False, False),
}

COMPOSITIONS = ("app", "app+shape", "app+shape+fuse")


def setting_spec(name: str) -> SettingSpec:
    try:
        return SETTINGS[name]
    except KeyError:
        raise ValueError(f"unknown setting {name!r}; choose from {sorted(SETTINGS)}")


def resolve_composition(requested: str | None, setting: str) -> str:
    """Default composition per setting; explicit requests are validated."""
    spec = setting_spec(setting)
    if requested is None:
        return "app+shape" if spec.subnet else "app"
    if requested not in COMPOSITIONS:
        raise ValueError(f"unknown composition {requested!r}")
    if "shape" in requested and not spec.subnet:
        raise ValueError(f"composition {requested!r} needs the shape subnet, "
                         f"absent under setting {setting!r}")
    if "fuse" in requested and not (spec.afe and spec.afe_stage1):
        raise ValueError(f"composition {requested!r} needs enhancement stage 1, "
                         f"absent under setting {setting!r}")
    return requested


class ShapeCenteredNet(nn.Module):
    def __init__(self, backbone_cfg: BackboneConfig, num_identities: int,
                 setting: str = "full"):
        super().__init__()
        backbone_cfg.validate()
        self.cfg = backbone_cfg
        self.setting = setting
        self.spec = setting_spec(setting)
        self.num_identities = num_identities
        widths = backbone_cfg.stage_widths
        c_final = backbone_cfg.final_channels

        self.stem_vis = Stem(backbone_cfg)
        self.stem_ir = Stem(backbone_cfg)
        self.trunk = Trunk(backbone_cfg)
        self.pool = GeM(backbone_cfg.gem_p, backbone_cfg.gem_learnable)
        init_weights(self.stem_vis)
        init_weights(self.stem_ir)
        init_weights(self.trunk)
        # both stems start identical so modality routing is the only difference
        self.stem_ir.load_state_dict(self.stem_vis.state_dict())

        self.classifier_app = IdentityClassifier(c_final, num_identities)
        self.shape_stem = self.shape_trunk = None
        self.isr1 = self.isr2 = None
        self.subnet = None
        self.afe1 = self.afe2 = None
        self.classifier_shape = self.classifier_query = None

        if self.spec.shape_stream:
            self.shape_stem = Stem(backbone_cfg)
            self.shape_trunk = Trunk(backbone_cfg)
            init_weights(self.shape_stem)
            init_weights(self.shape_trunk)
            self.classifier_shape = IdentityClassifier(c_final, num_identities)
        if self.spec.isr:
            self.isr1 = ResidualCrossAttention(widths[0])
            self.isr2 = ResidualCrossAttention(widths[1])
        if self.spec.subnet:
            # starts as an exact copy of the final appearance stage, then
            # trains independently
            self.subnet = copy.deepcopy(self.trunk.stages[3])
        if self.spec.afe:
            self.afe2 = ResidualCrossAttention(c_final)
            if self.spec.afe_stage1:
                self.afe1 = ResidualCrossAttention(c_final)
                self.classifier_query = IdentityClassifier(c_final, num_identities)

    # ---- forward pieces -------------------------------------------------

    def appearance_forward(self, images: torch.Tensor,
                           num_vis: int) -> list[torch.Tensor]:
        """Route rows through the modality stems, then the shared stages."""
        if num_vis < 0 or num_vis > images.shape[0]:
            raise ValueError("num_vis out of range")
        parts = []
        if num_vis > 0:
            parts.append(self.stem_vis(images[:num_vis]))
        if num_vis < images.shape[0]:
            parts.append(self.stem_ir(images[num_vis:]))
        x = torch.cat(parts) if len(parts) > 1 else parts[0]
        return self.trunk.forward_stages(x)

    def shape_forward(self, shape_images: torch.Tensor, num_vis: int,
                      app_maps: list[torch.Tensor]) -> torch.Tensor:
        """Teacher stream; IR rows get restituted after stages 1 and 2."""
        if self.shape_trunk is None:
            raise RuntimeError(f"setting {self.setting!r} has no shape stream")
        x = self.shape_stem(shape_images)
        for j, stage in enumerate(self.shape_trunk.stages):
            x = stage(x)
            isr = (self.isr1, self.isr2)[j] if j < 2 else None
            if isr is not None and num_vis < x.shape[0]:
                fixed = restitute_infrared_shape(
                    isr, x[num_vis:], app_maps[j][num_vis:])
                x = fixed if num_vis == 0 else torch.cat([x[:num_vis], fixed])
        return x

    def forward(self, images: torch.Tensor, num_vis: int,
                shape_images: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
        """Returns the named intermediate and pooled tensors of one pass.

        The inference path passes shape_images=None: only the appearance
        trunk, the shape subnet, and the enhancement cascade run.
        """
        bundle: dict[str, torch.Tensor] = {}
        app_maps = self.appearance_forward(images, num_vis)
        f = app_maps[3]
        bundle["app_map"] = f
        bundle["app_pooled"] = self.pool(f)

        if self.spec.shape_stream and shape_images is not None:
            teacher_map = self.shape_forward(shape_images, num_vis, app_maps)
            bundle["teacher_map"] = teacher_map
            bundle["teacher_pooled"] = self.pool(teacher_map)

        if self.spec.subnet:
            student_map = self.subnet(app_maps[2])
            bundle["student_map"] = student_map
            bundle["student_pooled"] = self.pool(student_map)

        if self.spec.afe:
            query_map = bundle["student_map"]
            if self.afe1 is not None:
                fuse_map = enhance_stage1(self.afe1, query_map, f)
                bundle["fuse_map"] = fuse_map
                bundle["fuse_pooled"] = self.pool(fuse_map)
                query_map = fuse_map
            enhanced = enhance_stage2(self.afe2, query_map, f)
            bundle["enhanced_map"] = enhanced
            bundle["enhanced_pooled"] = self.pool(enhanced)

        return bundle

    # ---- losses ----------------------------------------------------------

    def compute_losses(self, bundle: dict[str, torch.Tensor],
                       labels: torch.Tensor,
                       weights: dict[str, float] | None = None):
        terms: dict[str, torch.Tensor] = {}
        if self.spec.baseline_supervision:
            terms["l_id"] = ce_loss(bundle["app_pooled"], labels, self.classifier_app)
            terms["l_wrt"] = wrt_loss(bundle["app_pooled"], labels)
        if self.spec.shape_stream:
            teacher = bundle["teacher_pooled"]
            terms["l_id_s"] = ce_loss(teacher, labels, self.classifier_shape)
            terms["l_wrt_s"] = wrt_loss(teacher, labels)
            if self.spec.subnet:
                student = bundle["student_pooled"]
                terms["l_kd"] = kd_instance(student, teacher)
                terms["l_kd_ce"] = kd_prototype(
                    student, labels, self.classifier_shape.prototypes)
        if self.spec.afe and self.afe1 is not None:
            terms["l_id_q"] = ce_loss(bundle["fuse_pooled"], labels,
                                      self.classifier_query)
            terms["l_wrt_q"] = wrt_loss(bundle["fuse_pooled"], labels)
        if self.spec.afe:
            terms["l_id_a"] = ce_loss(bundle["enhanced_pooled"], labels,
                                      self.classifier_app)
            terms["l_wrt_a"] = wrt_loss(bundle["enhanced_pooled"], labels)
        return total_loss(terms, weights)

    # ---- inference descriptors -------------------------------------------

    def descriptor_parts(self, bundle: dict[str, torch.Tensor],
                         composition: str) -> list[torch.Tensor]:
        parts = []
        for token in composition.split("+"):
            if token == "app":
                parts.append(bundle["enhanced_pooled"] if self.spec.afe
                             else bundle["app_pooled"])
            elif token == "shape":
                if "student_pooled" not in bundle:
                    raise ValueError("composition needs the shape subnet, absent "
                                     f"under setting {self.setting!r}")
                parts.append(bundle["student_pooled"])
            elif token == "fuse":
                if "fuse_pooled" not in bundle:
                    raise ValueError("composition needs enhancement stage 1, absent "
                                     f"under setting {self.setting!r}")
                parts.append(bundle["fuse_pooled"])
            else:
                raise ValueError(f"unknown composition token {token!r}")
        return parts


def build_model(backbone_cfg: BackboneConfig, num_identities: int,
                setting: str = "full", seed: int | None = None) -> ShapeCenteredNet:
    """Deterministic construction: same seed, same initial parameters."""
    if seed is not None:
        torch.manual_seed(seed)
    return ShapeCenteredNet(backbone_cfg, num_identities, setting)
