"""Synthetic paired visible/infrared pedestrian benchmark.

Each identity owns a latent body geometry (head/torso/limb ellipse and capsule
parameters) kept at a minimum pairwise margin, so identity is recoverable from
shape alone. Every image index renders one posed silhouette that is shared
verbatim by the VIS and IR images of that index: modality changes appearance
only. VIS gets an identity-specific color palette over cluttered color
backgrounds; IR gets a per-image grayscale body intensity (deliberately
uninformative about identity) over darker clutter. The VIS mask is the exact
rendered silhouette; the IR mask has a configurable fraction of limb pixels
relabeled as background in spatially coherent blobs, mimicking a parsing
network that loses exposed arms and legs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .manifest import DatasetManifest, ManifestRecord, Modality, write_manifest

# part labels in masks; 0 is background
HEAD, TORSO, L_ARM, R_ARM, L_LEG, R_LEG = 1, 2, 3, 4, 5, 6
NUM_PART_LABELS = 6
LIMB_LABELS = (L_ARM, R_ARM, L_LEG, R_LEG)

# latent geometry parameters, all as fractions of image height. Head and
# torso ranges are kept tight so identity evidence concentrates in the limbs,
# the regions the IR mask corruption attacks.
GEOMETRY_RANGES: dict[str, tuple[float, float]] = {
    "head_ry": (0.058, 0.075),
    "head_aspect": (0.80, 1.00),
    "torso_w": (0.105, 0.135),
    "torso_h": (0.170, 0.205),
    "arm_len": (0.16, 0.31),
    "arm_thick": (0.016, 0.040),
    "arm_angle": (0.12, 0.48),
    "leg_len": (0.22, 0.38),
    "leg_thick": (0.022, 0.050),
    "leg_sep": (0.024, 0.072),
}
GEOMETRY_KEYS = tuple(GEOMETRY_RANGES)

# minimum pairwise L2 distance between identities in range-normalized space
GEOMETRY_MARGIN = 0.22
BODY_SCALE = 0.80


@dataclass
class SynthConfig:
    num_identities: int = 16
    images_per_identity_per_modality: int = 4
    image_size: tuple[int, int] = (128, 64)       # (H, W)
    corruption_rate: float = 0.5                  # fraction of IR limb pixels erased
    vis_noise: float = 0.02
    ir_noise: float = 0.02
    clutter_blobs: int = 5
    eval_images_per_identity: int = 0             # extra held-out poses per modality
    seed: int = 0

    def validate(self) -> None:
        if self.num_identities < 1:
            raise ValueError("num_identities must be >= 1")
        if self.images_per_identity_per_modality < 1:
            raise ValueError("images_per_identity_per_modality must be >= 1")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ValueError("corruption_rate must lie in [0, 1]")
        if self.image_size[0] < 32 or self.image_size[1] < 32:
            raise ValueError("image size must be at least 32x32")
        if self.eval_images_per_identity < 0:
            raise ValueError("eval_images_per_identity must be >= 0")


@dataclass
class GeneratedDataset:
    root: Path
    train: DatasetManifest
    query: DatasetManifest | None = None
    gallery: DatasetManifest | None = None
    geometries: np.ndarray | None = field(default=None)


def _normalize_geometry(g: np.ndarray) -> np.ndarray:
    lo = np.array([GEOMETRY_RANGES[k][0] for k in GEOMETRY_KEYS])
    hi = np.array([GEOMETRY_RANGES[k][1] for k in GEOMETRY_KEYS])
    return (g - lo) / (hi - lo)


def sample_identity_geometries(num_identities: int, rng: np.random.Generator,
                               margin: float = GEOMETRY_MARGIN) -> np.ndarray:
    """Draw one geometry vector per identity, rejection-sampled to the margin."""
    lo = np.array([GEOMETRY_RANGES[k][0] for k in GEOMETRY_KEYS])
    hi = np.array([GEOMETRY_RANGES[k][1] for k in GEOMETRY_KEYS])
    out: list[np.ndarray] = []
    attempts = 0
    while len(out) < num_identities:
        attempts += 1
        if attempts > 50_000:
            raise RuntimeError(
                f"could not place {num_identities} identities at margin {margin}")
        cand = lo + (hi - lo) * rng.random(len(GEOMETRY_KEYS))
        if out:
            dists = np.linalg.norm(
                _normalize_geometry(np.stack(out)) - _normalize_geometry(cand), axis=1)
            if dists.min() < margin:
                continue
        out.append(cand)
    return np.stack(out)


def _capsule_mask(yy, xx, p0, p1, radius) -> np.ndarray:
    """Pixels within `radius` of segment p0-p1 (all in pixel units)."""
    d = np.array(p1) - np.array(p0)
    len_sq = float(d @ d)
    if len_sq == 0:
        return (yy - p0[0]) ** 2 + (xx - p0[1]) ** 2 <= radius ** 2
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / len_sq
    t = np.clip(t, 0.0, 1.0)
    cy = p0[0] + t * d[0]
    cx = p0[1] + t * d[1]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def _ellipse_mask(yy, xx, center, ry, rx) -> np.ndarray:
    return ((yy - center[0]) / ry) ** 2 + ((xx - center[1]) / rx) ** 2 <= 1.0


def render_silhouette(geometry: np.ndarray, pose: dict, size: tuple[int, int]) -> np.ndarray:
    """Rasterize one posed body as a part-label map (H x W uint8)."""
    H, W = size
    g = dict(zip(GEOMETRY_KEYS, geometry))
    s = H * BODY_SCALE * pose["scale"]
    cx = W / 2 + pose["dx"] * W
    cy_t = 0.42 * H + pose["dy"] * H   # torso center; head above, legs below

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    label = np.zeros((H, W), dtype=np.uint8)

    torso_w, torso_h = g["torso_w"] * s, g["torso_h"] * s
    hip_y = cy_t + 0.90 * torso_h
    shoulder_y = cy_t - 0.75 * torso_h

    # legs first so torso overlaps the hip joints
    for side, lab in ((-1, L_LEG), (1, R_LEG)):
        hip = (hip_y, cx + side * g["leg_sep"] * s)
        ang = side * (0.06 + pose["leg_spread"])
        tip = (hip[0] + np.cos(ang) * g["leg_len"] * s,
               hip[1] + np.sin(ang) * g["leg_len"] * s)
        label[_capsule_mask(yy, xx, hip, tip, g["leg_thick"] * s)] = lab
    for side, lab, swing in ((-1, L_ARM, pose["arm_swing"]), (1, R_ARM, -pose["arm_swing"])):
        shoulder = (shoulder_y, cx + side * 0.85 * torso_w)
        ang = side * (g["arm_angle"] + swing * side)
        tip = (shoulder[0] + np.cos(ang) * g["arm_len"] * s,
               shoulder[1] + np.sin(ang) * g["arm_len"] * s)
        label[_capsule_mask(yy, xx, shoulder, tip, g["arm_thick"] * s)] = lab
    label[_ellipse_mask(yy, xx, (cy_t, cx), torso_h, torso_w)] = TORSO
    head_ry = g["head_ry"] * s
    head_c = (cy_t - torso_h - 0.85 * head_ry, cx)
    label[_ellipse_mask(yy, xx, head_c, head_ry, head_ry * g["head_aspect"])] = HEAD
    return label


def draw_pose(rng: np.random.Generator) -> dict:
    return {
        "dx": rng.uniform(-0.04, 0.04),
        "dy": rng.uniform(-0.02, 0.02),
        "scale": rng.uniform(0.93, 1.07),
        "arm_swing": rng.uniform(-0.10, 0.10),
        "leg_spread": rng.uniform(-0.03, 0.05),
    }


def draw_palette(rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Identity-specific VIS part colors."""
    return {lab: rng.uniform(0.15, 0.95, size=3) for lab in
            (HEAD, TORSO, L_ARM, R_ARM, L_LEG, R_LEG)}


def _clutter(canvas: np.ndarray, rng: np.random.Generator, n_blobs: int,
             color: bool) -> None:
    H, W = canvas.shape[:2]
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    for _ in range(n_blobs):
        c = (rng.uniform(0, H), rng.uniform(0, W))
        ry, rx = rng.uniform(0.05, 0.25) * H, rng.uniform(0.05, 0.25) * W
        blob = _ellipse_mask(yy, xx, c, ry, rx)
        if color:
            canvas[blob] = rng.uniform(0.0, 1.0, size=3)
        else:
            canvas[blob] = rng.uniform(0.0, 0.45)


def render_vis_image(silhouette: np.ndarray, palette: dict[int, np.ndarray],
                     rng: np.random.Generator, noise: float, n_blobs: int) -> np.ndarray:
    H, W = silhouette.shape
    img = np.empty((H, W, 3), dtype=np.float64)
    img[:] = rng.uniform(0.2, 0.8, size=3)
    grad = np.linspace(-0.15, 0.15, H)[:, None, None] * rng.uniform(-1, 1, size=3)
    img = np.clip(img + grad, 0, 1)
    _clutter(img, rng, n_blobs, color=True)
    shade = 1.0 - 0.15 * (np.arange(H) / H)        # mild top light
    for lab, col in palette.items():
        sel = silhouette == lab
        img[sel] = col[None, :] * shade[np.nonzero(sel)[0], None]
    img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def render_ir_image(silhouette: np.ndarray, rng: np.random.Generator,
                    noise: float, n_blobs: int) -> np.ndarray:
    """Grayscale body-over-dark-clutter rendering; intensity is per image."""
    H, W = silhouette.shape
    plane = np.full((H, W), rng.uniform(0.05, 0.30), dtype=np.float64)
    grad = np.linspace(-0.08, 0.08, H)[:, None] * rng.uniform(-1, 1)
    plane = np.clip(plane + grad, 0, 1)
    _clutter(plane, rng, n_blobs, color=False)
    body_base = rng.uniform(0.70, 0.90)
    for lab in (HEAD, TORSO, L_ARM, R_ARM, L_LEG, R_LEG):
        plane[silhouette == lab] = np.clip(body_base + rng.uniform(-0.05, 0.05), 0, 1)
    plane += rng.normal(0.0, noise, size=plane.shape)
    plane = np.clip(plane, 0.0, 1.0)
    return np.repeat(plane[:, :, None], 3, axis=2).astype(np.float32)


def corrupt_ir_mask(silhouette: np.ndarray, rate: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Relabel an exact `rate` fraction of limb pixels as background.

    Limb pixels are ranked by a smoothed random field and the top fraction is
    erased, so the dropped pixels form coherent blobs rather than salt noise.
    """
    mask = silhouette.copy()
    if rate <= 0.0:
        return mask
    limb = np.isin(mask, LIMB_LABELS)
    n_limb = int(limb.sum())
    if n_limb == 0:
        return mask
    n_erase = int(round(rate * n_limb))
    if n_erase == 0:
        return mask
    field = ndimage.gaussian_filter(rng.random(mask.shape), sigma=mask.shape[0] / 24)
    scores = field[limb]
    order = np.argsort(scores, kind="stable")[::-1][:n_erase]
    ys, xs = np.nonzero(limb)
    mask[ys[order], xs[order]] = 0
    return mask


def _save_png(path: Path, array: np.ndarray, grayscale: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if grayscale:
        Image.fromarray(array.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray((array * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def generate_dataset(cfg: SynthConfig, out_dir: Path | str) -> GeneratedDataset:
    """Render the full dataset tree and write split manifests.

    Produces a `train` manifest always; when `eval_images_per_identity` > 0,
    also `query` (IR, held-out poses) and `gallery` (VIS twins of the same
    poses). Deterministic under `cfg.seed`: identical seeds yield
    byte-identical trees.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    geo_rng = np.random.default_rng([cfg.seed, 0])
    geometries = sample_identity_geometries(cfg.num_identities, geo_rng)
    palettes = [draw_palette(np.random.default_rng([cfg.seed, 1, k]))
                for k in range(cfg.num_identities)]

    splits: dict[str, list[ManifestRecord]] = {"train": [], "query": [], "gallery": []}
    n_train = cfg.images_per_identity_per_modality
    n_total = n_train + cfg.eval_images_per_identity
    for k in range(cfg.num_identities):
        for j in range(n_total):
            split_pair = ("train", "train") if j < n_train else ("gallery", "query")
            pose = draw_pose(np.random.default_rng([cfg.seed, 2, k, j]))
            sil = render_silhouette(geometries[k], pose, cfg.image_size)
            vis = render_vis_image(sil, palettes[k],
                                   np.random.default_rng([cfg.seed, 3, k, j]),
                                   cfg.vis_noise, cfg.clutter_blobs)
            ir = render_ir_image(sil, np.random.default_rng([cfg.seed, 4, k, j]),
                                 cfg.ir_noise, cfg.clutter_blobs)
            ir_mask = corrupt_ir_mask(sil, cfg.corruption_rate,
                                      np.random.default_rng([cfg.seed, 5, k, j]))
            stem = f"id{k:04d}_{j:03d}"
            paths = {
                ("images", "vis"): (f"images/vis/{stem}.png", vis, False),
                ("masks", "vis"): (f"masks/vis/{stem}.png", sil, True),
                ("images", "ir"): (f"images/ir/{stem}.png", ir, False),
                ("masks", "ir"): (f"masks/ir/{stem}.png", ir_mask, True),
            }
            for rel, arr, gray in paths.values():
                _save_png(out_dir / rel, arr, gray)
            vis_split, ir_split = split_pair
            splits[vis_split].append(ManifestRecord(
                image_path=f"images/vis/{stem}.png", mask_path=f"masks/vis/{stem}.png",
                identity=k, camera=0, modality=Modality.VIS))
            splits[ir_split].append(ManifestRecord(
                image_path=f"images/ir/{stem}.png", mask_path=f"masks/ir/{stem}.png",
                identity=k, camera=1, modality=Modality.IR))

    manifests: dict[str, DatasetManifest] = {}
    for split, records in splits.items():
        if not records:
            continue
        m = DatasetManifest(root=out_dir, records=records,
                            num_identities=cfg.num_identities,
                            num_part_labels=NUM_PART_LABELS, split=split)
        write_manifest(m, out_dir / f"{split}.tsv")
        manifests[split] = m

    header = "\t".join(("identity",) + GEOMETRY_KEYS)
    rows = [header] + [
        "\t".join([str(k)] + [repr(float(v)) for v in geometries[k]])
        for k in range(cfg.num_identities)]
    (out_dir / "identities.tsv").write_text("\n".join(rows) + "\n")

    return GeneratedDataset(root=out_dir, train=manifests["train"],
                            query=manifests.get("query"),
                            gallery=manifests.get("gallery"),
                            geometries=geometries)
