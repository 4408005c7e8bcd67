"""Identity-balanced cross-modality batch construction."""
from __future__ import annotations

import math

import numpy as np

from .manifest import DatasetManifest, Modality


class CrossModalitySampler:
    """Builds batches of record indices with P identities, each contributing
    `num_vis` visible and `num_ir` infrared images.

    Batch layout is fixed: the visible block (P*num_vis rows, grouped by
    identity) followed by the infrared block in the same identity order.
    Within an identity, records are drawn without replacement when enough
    exist, with replacement otherwise. An epoch has
    ceil(len(manifest) / batch_size) batches so every image is seen roughly
    once per epoch.
    """

    def __init__(self, manifest: DatasetManifest, num_identities_per_batch: int = 8,
                 num_vis: int = 4, num_ir: int = 4):
        self.p = num_identities_per_batch
        self.num_vis = num_vis
        self.num_ir = num_ir
        self.batch_size = self.p * (num_vis + num_ir)
        self.num_batches = math.ceil(len(manifest) / self.batch_size)

        self.by_identity: dict[int, dict[Modality, np.ndarray]] = {}
        for idx, rec in enumerate(manifest.records):
            slot = self.by_identity.setdefault(rec.identity, {Modality.VIS: [], Modality.IR: []})
            slot[rec.modality].append(idx)
        for ident, slot in self.by_identity.items():
            for mod in (Modality.VIS, Modality.IR):
                if not slot[mod]:
                    raise ValueError(f"identity {ident} has no {mod.value} images")
                slot[mod] = np.asarray(slot[mod])
        self.identities = np.asarray(sorted(self.by_identity))
        if len(self.identities) < self.p:
            raise ValueError(
                f"need at least {self.p} identities, manifest has {len(self.identities)}")

    def _draw(self, pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(pool, size=k, replace=len(pool) < k)

    def batch_for_identities(self, identities, rng: np.random.Generator) -> np.ndarray:
        vis_rows, ir_rows = [], []
        for ident in identities:
            slot = self.by_identity[int(ident)]
            vis_rows.append(self._draw(slot[Modality.VIS], self.num_vis, rng))
            ir_rows.append(self._draw(slot[Modality.IR], self.num_ir, rng))
        return np.concatenate(vis_rows + ir_rows)

    def epoch_batches(self, rng: np.random.Generator) -> list[np.ndarray]:
        """One epoch of batches; identical rng state gives identical batches."""
        batches = []
        pool: list[int] = []
        for _ in range(self.num_batches):
            if len(pool) < self.p:
                pool = list(rng.permutation(self.identities))
            chosen = [pool.pop() for _ in range(self.p)]
            batches.append(self.batch_for_identities(chosen, rng))
        return batches


def build_pk_batch(manifest: DatasetManifest, num_identities_per_batch: int,
                   num_vis: int, num_ir: int,
                   rng: np.random.Generator) -> np.ndarray:
    """One batch of record indices: P identities drawn uniformly without
    replacement, each with its visible and infrared draws."""
    sampler = CrossModalitySampler(manifest, num_identities_per_batch,
                                   num_vis, num_ir)
    chosen = rng.choice(sampler.identities, size=sampler.p, replace=False)
    return sampler.batch_for_identities(chosen, rng)
