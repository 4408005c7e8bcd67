"""Inference-path descriptor extraction and cross-modality retrieval metrics.

Extraction consumes images only; shape masks are never read, so evaluation
works with every mask file deleted. Metrics are CMC, mAP, and mINP with
stable tie-breaking by gallery index; queries without any gallery positive
are excluded from the means and counted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .manifest import DatasetManifest, Modality, load_image
from .network import ShapeCenteredNet


def l2_normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    return x / np.maximum(norm, 1e-12)


@dataclass
class DescriptorSet:
    vectors: np.ndarray                 # N x D, rows L2-normalized
    identities: np.ndarray              # N
    cameras: np.ndarray                 # N
    modalities: list[Modality]
    tracklets: list[int | None]

    def __len__(self) -> int:
        return len(self.identities)

    def subset(self, mask: np.ndarray) -> "DescriptorSet":
        idx = np.nonzero(mask)[0]
        return DescriptorSet(self.vectors[idx], self.identities[idx],
                             self.cameras[idx],
                             [self.modalities[i] for i in idx],
                             [self.tracklets[i] for i in idx])


@dataclass
class Protocol:
    name: str = "ir->vis"
    max_rank: int = 20
    exclude_same_camera: bool = False

    def __post_init__(self):
        if self.name not in ("ir->vis", "vis->ir"):
            raise ValueError(f"unknown protocol {self.name!r}")

    @property
    def query_modality(self) -> Modality:
        return Modality.IR if self.name == "ir->vis" else Modality.VIS

    @property
    def gallery_modality(self) -> Modality:
        return Modality.VIS if self.name == "ir->vis" else Modality.IR


@dataclass
class EvalResult:
    protocol: str
    cmc: np.ndarray
    mean_ap: float
    mean_inp: float
    num_queries: int
    num_excluded: int
    per_query_ap: np.ndarray = field(default_factory=lambda: np.zeros(0))
    per_query_inp: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def rank(self, k: int) -> float:
        return float(self.cmc[k - 1])

    def to_text(self) -> str:
        lines = [
            f"protocol={self.protocol}",
            f"num_queries={self.num_queries}",
            f"num_excluded={self.num_excluded}",
            f"map={self.mean_ap!r}",
            f"minp={self.mean_inp!r}",
            "cmc=" + ",".join(repr(float(v)) for v in self.cmc),
            "per_query_ap=" + ",".join(repr(float(v)) for v in self.per_query_ap),
            "per_query_inp=" + ",".join(repr(float(v)) for v in self.per_query_inp),
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalResult":
        kv = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key] = value
        def arr(s):
            return np.array([float(v) for v in s.split(",")]) if s else np.zeros(0)
        return cls(protocol=kv["protocol"], cmc=arr(kv["cmc"]),
                   mean_ap=float(kv["map"]), mean_inp=float(kv["minp"]),
                   num_queries=int(kv["num_queries"]),
                   num_excluded=int(kv["num_excluded"]),
                   per_query_ap=arr(kv["per_query_ap"]),
                   per_query_inp=arr(kv["per_query_inp"]))


# ---- extraction ------------------------------------------------------------


def _image_tensor(manifest: DatasetManifest, idx: int,
                  image_size: tuple[int, int], mean: float, std: float) -> torch.Tensor:
    img = load_image(manifest, idx, target_size=image_size)
    img = (img - mean) / std
    return torch.from_numpy(img.transpose(2, 0, 1))


@torch.no_grad()
def extract_descriptors(model: ShapeCenteredNet, manifest: DatasetManifest,
                        composition: str | None = None,
                        image_size: tuple[int, int] | None = None,
                        batch_size: int = 64, mean: float = 0.5,
                        std: float = 0.5) -> DescriptorSet:
    """Embed every manifest record through the appearance-side path only."""
    from .network import resolve_composition
    composition = resolve_composition(composition, model.setting)
    image_size = image_size or model.cfg.input_size
    model.eval()

    vectors: list[np.ndarray | None] = [None] * len(manifest)
    by_mod: dict[Modality, list[int]] = {Modality.VIS: [], Modality.IR: []}
    for i, rec in enumerate(manifest.records):
        by_mod[rec.modality].append(i)
    for mod, indices in by_mod.items():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            imgs = torch.stack([_image_tensor(manifest, i, image_size, mean, std)
                                for i in chunk])
            num_vis = len(chunk) if mod is Modality.VIS else 0
            bundle = model(imgs, num_vis, shape_images=None)
            parts = [l2_normalize(p.numpy()) for p in
                     model.descriptor_parts(bundle, composition)]
            desc = l2_normalize(np.concatenate(parts, axis=1))
            for row, i in zip(desc, chunk):
                vectors[i] = row

    return DescriptorSet(
        vectors=np.stack(vectors).astype(np.float64),
        identities=np.array([r.identity for r in manifest.records]),
        cameras=np.array([r.camera for r in manifest.records]),
        modalities=[r.modality for r in manifest.records],
        tracklets=[r.tracklet for r in manifest.records])


def seq_pool(frame_vectors: np.ndarray) -> np.ndarray:
    """Mean over a tracklet's frame descriptors, re-normalized."""
    if frame_vectors.ndim != 2 or frame_vectors.shape[0] == 0:
        raise ValueError("need at least one frame descriptor")
    return l2_normalize(frame_vectors.mean(axis=0))


def pool_tracklets(descs: DescriptorSet) -> DescriptorSet:
    """Collapse frames with equal tracklet ids into one pooled descriptor."""
    groups: dict[int, list[int]] = {}
    order: list[int] = []
    for i, t in enumerate(descs.tracklets):
        if t is None:
            raise ValueError("record without tracklet id in video pooling")
        if t not in groups:
            order.append(t)
        groups.setdefault(t, []).append(i)
    vecs, ids, cams, mods = [], [], [], []
    for t in order:
        idx = groups[t]
        vecs.append(seq_pool(descs.vectors[idx]))
        ids.append(descs.identities[idx[0]])
        cams.append(descs.cameras[idx[0]])
        mods.append(descs.modalities[idx[0]])
    return DescriptorSet(np.stack(vecs), np.array(ids), np.array(cams),
                         mods, [t for t in order])


# ---- ranking and metrics ----------------------------------------------------


def rank_gallery(query_vectors: np.ndarray,
                 gallery_vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean distances and per-query ascending order, ties by gallery index."""
    if gallery_vectors.shape[0] == 0:
        raise ValueError("empty gallery")
    q2 = (query_vectors ** 2).sum(axis=1)[:, None]
    g2 = (gallery_vectors ** 2).sum(axis=1)[None, :]
    d2 = np.maximum(q2 + g2 - 2.0 * query_vectors @ gallery_vectors.T, 0.0)
    dist = np.sqrt(d2)
    order = np.argsort(dist, axis=1, kind="stable")
    return order, dist


def _query_match_rows(order: np.ndarray, q_ids, g_ids, q_cams, g_cams,
                      exclude_same_camera: bool):
    """Yields (query index, boolean match vector over kept gallery ranks)."""
    for i in range(order.shape[0]):
        ranked = order[i]
        if exclude_same_camera:
            junk = (g_ids[ranked] == q_ids[i]) & (g_cams[ranked] == q_cams[i])
            ranked = ranked[~junk]
        yield i, g_ids[ranked] == q_ids[i]


def evaluate_ranking(order: np.ndarray, q_ids: np.ndarray, g_ids: np.ndarray,
                     q_cams: np.ndarray | None = None,
                     g_cams: np.ndarray | None = None, max_rank: int = 20,
                     exclude_same_camera: bool = False,
                     protocol_name: str = "ir->vis") -> EvalResult:
    max_rank = min(max_rank, order.shape[1])
    cmc_acc = np.zeros(max_rank)
    aps, inps = [], []
    excluded = 0
    for i, matches in _query_match_rows(order, q_ids, g_ids, q_cams, g_cams,
                                        exclude_same_camera):
        if not matches.any():
            excluded += 1
            continue
        pos_ranks = np.nonzero(matches)[0] + 1
        first = pos_ranks[0]
        if first <= max_rank:
            cmc_acc[first - 1:] += 1.0
        precision = np.arange(1, len(pos_ranks) + 1) / pos_ranks
        aps.append(precision.mean())
        inps.append(len(pos_ranks) / pos_ranks[-1])
    if not aps:
        raise ValueError("no query has a gallery positive")
    n = len(aps)
    return EvalResult(protocol=protocol_name, cmc=cmc_acc / n,
                      mean_ap=float(np.mean(aps)), mean_inp=float(np.mean(inps)),
                      num_queries=n, num_excluded=excluded,
                      per_query_ap=np.array(aps), per_query_inp=np.array(inps))


def evaluate_descriptors(query: DescriptorSet, gallery: DescriptorSet,
                         protocol: Protocol) -> EvalResult:
    order, _ = rank_gallery(query.vectors, gallery.vectors)
    return evaluate_ranking(order, query.identities, gallery.identities,
                            query.cameras, gallery.cameras,
                            max_rank=protocol.max_rank,
                            exclude_same_camera=protocol.exclude_same_camera,
                            protocol_name=protocol.name)


def evaluate_protocol(model: ShapeCenteredNet, query_manifest: DatasetManifest,
                      gallery_manifest: DatasetManifest, protocol: Protocol,
                      composition: str | None = None,
                      image_size: tuple[int, int] | None = None) -> EvalResult:
    """Extract, filter modalities per protocol, pool tracklets if video, rank."""
    q_all = extract_descriptors(model, query_manifest, composition, image_size)
    g_all = extract_descriptors(model, gallery_manifest, composition, image_size)
    q = q_all.subset(np.array([m is protocol.query_modality
                               for m in q_all.modalities]))
    g = g_all.subset(np.array([m is protocol.gallery_modality
                               for m in g_all.modalities]))
    if len(q) == 0 or len(g) == 0:
        raise ValueError(f"protocol {protocol.name!r} finds no "
                         "query/gallery rows of the required modalities")
    if any(t is not None for t in q.tracklets):
        q, g = pool_tracklets(q), pool_tracklets(g)
    return evaluate_descriptors(q, g, protocol)


# ---- descriptor dump --------------------------------------------------------


def write_descriptors(descs: DescriptorSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"#dim\t{descs.vectors.shape[1]}\n#count\t{len(descs)}\n")
        for i in range(len(descs)):
            vec = ",".join(repr(float(v)) for v in descs.vectors[i])
            t = descs.tracklets[i]
            fh.write(f"{descs.identities[i]}\t{descs.cameras[i]}\t"
                     f"{descs.modalities[i].value}\t{'-' if t is None else t}\t{vec}\n")


def load_descriptors(path) -> DescriptorSet:
    vecs, ids, cams, mods, tracks = [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            ident, cam, mod, track, vec = line.rstrip("\n").split("\t")
            ids.append(int(ident))
            cams.append(int(cam))
            mods.append(Modality(mod))
            tracks.append(None if track == "-" else int(track))
            vecs.append(np.array([float(v) for v in vec.split(",")]))
    return DescriptorSet(np.stack(vecs), np.array(ids), np.array(cams),
                         mods, tracks)
