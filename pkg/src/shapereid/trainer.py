"""Training loop: PK batch assembly, joint forward through all streams,
loss aggregation, Adam with warmup plus step decay, checkpointing, and
deterministic resume.

Every random draw comes from numpy generators keyed by (seed, epoch, stream),
so epoch k's batches and augmentations are identical whether the run started
from scratch or resumed from an epoch-aligned checkpoint.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, augment_sample
from .backbone import BackboneConfig
from .manifest import (DatasetManifest, Modality, encode_shape_input,
                       load_sample)
from .network import ShapeCenteredNet, build_model, setting_spec
from .sampler import CrossModalitySampler

STREAM_BATCHES = 0
STREAM_AUGMENT = 1


@dataclass
class TrainConfig:
    epochs: int = 120
    base_lr: float = 3.5e-4
    classifier_lr: float = 7e-4
    weight_decay: float = 5e-4
    warmup_epochs: int = 10
    milestones: tuple[int, ...] = (40, 60)
    decay: float = 0.1
    num_identities_per_batch: int = 8
    num_vis: int = 4
    num_ir: int = 4
    setting: str = "full"
    seed: int = 0
    checkpoint_every: int = 20        # epochs; 0 disables periodic checkpoints

    def validate(self) -> None:
        setting_spec(self.setting)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if list(self.milestones) != sorted(self.milestones):
            raise ValueError("milestones must be ascending")
        if self.milestones and self.warmup_epochs >= self.milestones[0]:
            raise ValueError("warmup must end before the first milestone")
        # milestones at or past the final epoch are permitted and simply inert,
        # so short smoke runs work without reconfiguring the schedule


def lr_at(epoch: int, cfg: TrainConfig, role: str = "network") -> float:
    """Linear warmup from base/10 over the warmup epochs, then step decay."""
    if role not in ("network", "classifier"):
        raise ValueError(f"unknown role {role!r}")
    base = cfg.classifier_lr if role == "classifier" else cfg.base_lr
    lr = base
    if epoch < cfg.warmup_epochs:
        lr *= 0.1 + 0.9 * epoch / cfg.warmup_epochs
    for m in cfg.milestones:
        if epoch >= m:
            lr *= cfg.decay
    return lr


class Trainer:
    def __init__(self, manifest: DatasetManifest, backbone_cfg: BackboneConfig,
                 cfg: TrainConfig, augment_cfg: AugmentConfig | None = None,
                 out_dir: Path | str | None = None):
        cfg.validate()
        backbone_cfg.validate()
        self.cfg = cfg
        self.backbone_cfg = backbone_cfg
        self.augment_cfg = augment_cfg or AugmentConfig()
        self.manifest = manifest
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.model = build_model(backbone_cfg, manifest.num_identities,
                                 cfg.setting, seed=cfg.seed)
        self.sampler = CrossModalitySampler(
            manifest, cfg.num_identities_per_batch, cfg.num_vis, cfg.num_ir)
        self.optimizer = self._build_optimizer()
        self.epoch = 0                      # epochs completed so far
        self.log_records: list[str] = []
        self._log_fh = None
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # ---- setup -----------------------------------------------------------

    def _build_optimizer(self) -> torch.optim.Adam:
        classifier_params, network_params = [], []
        for name, p in self.model.named_parameters():
            (classifier_params if name.startswith("classifier")
             else network_params).append(p)
        groups = [
            {"params": network_params, "lr": self.cfg.base_lr,
             "weight_decay": self.cfg.weight_decay, "role": "network"},
            {"params": classifier_params, "lr": self.cfg.classifier_lr,
             "weight_decay": 0.0, "role": "classifier"},
        ]
        return torch.optim.Adam(groups)

    def _set_lr(self, epoch: int) -> float:
        for group in self.optimizer.param_groups:
            group["lr"] = lr_at(epoch, self.cfg, group["role"])
        return lr_at(epoch, self.cfg, "network")

    def _load(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        if idx not in self._cache:
            s = load_sample(self.manifest, idx,
                            target_size=self.backbone_cfg.input_size)
            self._cache[idx] = (s.image, s.shape_mask)
        return self._cache[idx]

    # ---- logging ----------------------------------------------------------

    def _open_log(self) -> None:
        if self.out_dir is None or self._log_fh is not None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "train_log.txt"
        mode = "a" if self.epoch > 0 and path.exists() else "w"
        self._log_fh = open(path, mode)
        if mode == "w":
            self._log_fh.write("# training log\n")
            self._log_fh.write(f"# config {asdict(self.cfg)}\n")
            self._log_fh.write(f"# backbone {asdict(self.backbone_cfg)}\n")
            self._log_fh.write(f"# time {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
            self._log_fh.flush()

    def _log(self, record: str) -> None:
        self.log_records.append(record)
        if self._log_fh is not None:
            self._log_fh.write(record + "\n")
            self._log_fh.flush()

    # ---- batch assembly ----------------------------------------------------

    def assemble_batch(self, batch_indices: np.ndarray,
                       rng: np.random.Generator, train: bool = True):
        needs_shape = self.model.spec.shape_stream
        images, shapes, labels = [], [], []
        for idx in batch_indices:
            image, mask = self._load(int(idx))
            if train:
                image, mask = augment_sample(image, mask, rng, self.augment_cfg)
            else:
                image = ((image - self.augment_cfg.mean)
                         / self.augment_cfg.std).astype(np.float32)
            images.append(torch.from_numpy(image.transpose(2, 0, 1).copy()))
            if needs_shape:
                enc = encode_shape_input(mask, self.manifest.num_part_labels)
                shapes.append(torch.from_numpy(enc.transpose(2, 0, 1).copy()))
            labels.append(self.manifest.records[int(idx)].identity)
        images_t = torch.stack(images)
        shapes_t = torch.stack(shapes) if needs_shape else None
        return images_t, shapes_t, torch.tensor(labels, dtype=torch.long)

    # ---- training ----------------------------------------------------------

    def train_step(self, images: torch.Tensor, shapes: torch.Tensor | None,
                   labels: torch.Tensor, num_vis: int):
        self.model.train()
        bundle = self.model(images, num_vis, shapes)
        loss, report = self.model.compute_losses(bundle, labels)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return report

    def train_epoch(self) -> float:
        epoch = self.epoch
        lr = self._set_lr(epoch)
        rng_batches = np.random.default_rng([self.cfg.seed, epoch, STREAM_BATCHES])
        rng_augment = np.random.default_rng([self.cfg.seed, epoch, STREAM_AUGMENT])
        num_vis = self.cfg.num_identities_per_batch * self.cfg.num_vis
        totals = []
        for step, batch in enumerate(self.sampler.epoch_batches(rng_batches)):
            images, shapes, labels = self.assemble_batch(batch, rng_augment)
            report = self.train_step(images, shapes, labels, num_vis)
            totals.append(report.total)
            self._log(f"epoch={epoch} step={step} lr={lr:.10g} "
                      + report.to_log_fields())
        mean_total = float(np.mean(totals))
        self._log(f"epoch_summary epoch={epoch} lr={lr:.10g} "
                  f"steps={len(totals)} mean_total={mean_total:.6f}")
        self.epoch += 1
        return mean_total

    def train(self) -> "Trainer":
        self._open_log()
        while self.epoch < self.cfg.epochs:
            self.train_epoch()
            ck = self.cfg.checkpoint_every
            if self.out_dir is not None and (
                    (ck and self.epoch % ck == 0) or self.epoch == self.cfg.epochs):
                self.save_checkpoint(self.out_dir / f"checkpoint_ep{self.epoch}.pt")
                self.save_checkpoint(self.out_dir / "checkpoint_last.pt")
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None
        return self

    # ---- checkpointing -------------------------------------------------------

    def save_checkpoint(self, path: Path | str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "format": 1,
            "epoch": self.epoch,
            "train_config": asdict(self.cfg),
            "backbone_config": asdict(self.backbone_cfg),
            "augment_config": asdict(self.augment_cfg),
            "num_identities": self.manifest.num_identities,
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
        }, path)

    @classmethod
    def resume(cls, checkpoint_path: Path | str, manifest: DatasetManifest,
               out_dir: Path | str | None = None) -> "Trainer":
        ckpt = load_checkpoint_dict(checkpoint_path)
        if ckpt["num_identities"] != manifest.num_identities:
            raise ValueError("checkpoint identity count does not match manifest")
        t_cfg = TrainConfig(**_tupled(ckpt["train_config"], "milestones"))
        b_cfg = BackboneConfig(**_tupled(ckpt["backbone_config"],
                                         "stage_blocks", "stage_widths",
                                         "stage_strides", "input_size"))
        a_cfg = AugmentConfig(**_tupled(ckpt["augment_config"],
                                        "erase_area", "erase_ratio"))
        trainer = cls(manifest, b_cfg, t_cfg, a_cfg, out_dir)
        trainer.model.load_state_dict(ckpt["model"])
        trainer.optimizer.load_state_dict(ckpt["optimizer"])
        trainer.epoch = ckpt["epoch"]
        return trainer


def _tupled(d: dict, *keys: str) -> dict:
    out = dict(d)
    for k in keys:
        if isinstance(out.get(k), list):
            out[k] = tuple(out[k])
    return out


def load_checkpoint_dict(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return torch.load(path, map_location="cpu", weights_only=False)


def load_model_from_checkpoint(path: Path | str) -> tuple[ShapeCenteredNet,
                                                          BackboneConfig, dict]:
    ckpt = load_checkpoint_dict(path)
    b_cfg = BackboneConfig(**_tupled(ckpt["backbone_config"], "stage_blocks",
                                     "stage_widths", "stage_strides",
                                     "input_size"))
    model = ShapeCenteredNet(b_cfg, ckpt["num_identities"],
                             ckpt["train_config"]["setting"])
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model, b_cfg, ckpt


def train(manifest: DatasetManifest, backbone_cfg: BackboneConfig,
          cfg: TrainConfig, augment_cfg: AugmentConfig | None = None,
          out_dir: Path | str | None = None) -> Trainer:
    return Trainer(manifest, backbone_cfg, cfg, augment_cfg, out_dir).train()
