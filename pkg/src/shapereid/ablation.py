"""Train-and-evaluate sweeps over ablation settings and seeds."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig
from .backbone import BackboneConfig
from .evaluator import EvalResult, Protocol, evaluate_protocol
from .manifest import DatasetManifest
from .network import resolve_composition, setting_spec
from .trainer import TrainConfig, Trainer


@dataclass
class AblationRow:
    setting: str
    seed: int
    rank1: float
    mean_ap: float
    mean_inp: float
    result: EvalResult
    out_dir: Path | None = None


def run_single(train_manifest: DatasetManifest, query_manifest: DatasetManifest,
               gallery_manifest: DatasetManifest, backbone_cfg: BackboneConfig,
               train_cfg: TrainConfig, augment_cfg: AugmentConfig | None,
               protocol: Protocol, composition: str | None,
               out_dir: Path | None = None) -> AblationRow:
    trainer = Trainer(train_manifest, backbone_cfg, train_cfg, augment_cfg,
                      out_dir).train()
    comp = resolve_composition(composition, train_cfg.setting)
    result = evaluate_protocol(trainer.model, query_manifest, gallery_manifest,
                               protocol, composition=comp)
    return AblationRow(train_cfg.setting, train_cfg.seed, float(result.cmc[0]),
                       result.mean_ap, result.mean_inp, result, out_dir)


def ablation_run(train_manifest: DatasetManifest, query_manifest: DatasetManifest,
                 gallery_manifest: DatasetManifest, backbone_cfg: BackboneConfig,
                 base_cfg: TrainConfig, settings: list[str], seeds: list[int],
                 augment_cfg: AugmentConfig | None = None,
                 protocol: Protocol | None = None,
                 composition: str | None = None,
                 out_dir: Path | str | None = None) -> list[AblationRow]:
    """One row per (setting, seed). A requested composition must be valid for
    every setting; None picks each setting's default."""
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    for s in settings:
        setting_spec(s)
        if composition is not None:
            resolve_composition(composition, s)
    protocol = protocol or Protocol()
    rows = []
    for setting in settings:
        for seed in seeds:
            cfg = replace(base_cfg, setting=setting, seed=seed)
            run_dir = None
            if out_dir is not None:
                run_dir = Path(out_dir) / setting.replace("+", "_") / f"seed{seed}"
            rows.append(run_single(train_manifest, query_manifest,
                                   gallery_manifest, backbone_cfg, cfg,
                                   augment_cfg, protocol, composition, run_dir))
    return rows


def aggregate(rows: list[AblationRow]) -> dict[str, dict[str, float]]:
    """Per-setting mean and sd of Rank-1/mAP/mINP, insertion-ordered."""
    stats: dict[str, dict[str, float]] = {}
    for setting in dict.fromkeys(r.setting for r in rows):
        sub = [r for r in rows if r.setting == setting]
        r1 = np.array([r.rank1 for r in sub])
        ap = np.array([r.mean_ap for r in sub])
        inp = np.array([r.mean_inp for r in sub])
        stats[setting] = {
            "seeds": len(sub),
            "rank1_mean": float(r1.mean()), "rank1_sd": float(r1.std(ddof=0)),
            "map_mean": float(ap.mean()), "map_sd": float(ap.std(ddof=0)),
            "minp_mean": float(inp.mean()), "minp_sd": float(inp.std(ddof=0)),
        }
    return stats
