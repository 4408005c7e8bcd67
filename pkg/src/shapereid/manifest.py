"""Dataset model: samples, manifests, and on-disk loading.

A dataset lives in a directory with 8-bit RGB PNG images, 8-bit single-channel
PNG part-label masks (pixel value = part label, 0 = background), and one
tab-separated manifest per split. The manifest header carries the identity
count K, the part-label count L, and the split tag.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class ManifestError(Exception):
    """Raised when a manifest or one of its referenced files is invalid."""


class Modality(str, enum.Enum):
    VIS = "VIS"
    IR = "IR"


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str          # relative to the dataset root
    mask_path: str
    identity: int
    camera: int
    modality: Modality
    tracklet: int | None = None


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord]
    num_identities: int      # K; identities are contiguous 0..K-1
    num_part_labels: int     # L; mask values lie in 0..L
    split: str = "train"

    def __len__(self) -> int:
        return len(self.records)

    def identity_indices(self) -> dict[int, list[int]]:
        """Record indices grouped by identity."""
        out: dict[int, list[int]] = {}
        for i, rec in enumerate(self.records):
            out.setdefault(rec.identity, []).append(i)
        return out


@dataclass
class ModalitySample:
    """One pedestrian image with its part mask and labels."""
    image: np.ndarray        # H x W x 3 float32 in [0, 1]
    shape_mask: np.ndarray   # H x W uint8, 0 = background, 1..L = parts
    identity: int
    camera_id: int
    modality: Modality
    tracklet_id: int | None = None


_HEADER_KEYS = ("K", "L", "split")
_COLUMNS = ("image", "mask", "identity", "camera", "modality", "tracklet")


def write_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    lines = [
        f"#K\t{manifest.num_identities}",
        f"#L\t{manifest.num_part_labels}",
        f"#split\t{manifest.split}",
        "#columns\t" + "\t".join(_COLUMNS),
    ]
    for rec in manifest.records:
        tracklet = "-" if rec.tracklet is None else str(rec.tracklet)
        lines.append("\t".join([
            rec.image_path, rec.mask_path, str(rec.identity),
            str(rec.camera), rec.modality.value, tracklet,
        ]))
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path: Path | str, check_files: bool = True) -> DatasetManifest:
    """Parse a manifest and validate its invariants.

    Checks that every referenced file exists and that identities are
    contiguous 0..K-1 within the split.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    header: dict[str, str] = {}
    records: list[ManifestRecord] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("\t")
            if key in _HEADER_KEYS:
                header[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != len(_COLUMNS):
            raise ManifestError(
                f"{path}:{lineno}: expected {len(_COLUMNS)} fields, got {len(parts)}")
        try:
            modality = Modality(parts[4])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: unknown modality {parts[4]!r}") from None
        records.append(ManifestRecord(
            image_path=parts[0],
            mask_path=parts[1],
            identity=int(parts[2]),
            camera=int(parts[3]),
            modality=modality,
            tracklet=None if parts[5] == "-" else int(parts[5]),
        ))
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ManifestError(f"{path}: missing header keys {missing}")
    manifest = DatasetManifest(
        root=path.parent,
        records=records,
        num_identities=int(header["K"]),
        num_part_labels=int(header["L"]),
        split=header["split"],
    )
    _validate(manifest, check_files=check_files)
    return manifest


def _validate(manifest: DatasetManifest, check_files: bool) -> None:
    ids = sorted({rec.identity for rec in manifest.records})
    if manifest.records and ids != list(range(manifest.num_identities)):
        raise ManifestError(
            f"identities are not contiguous 0..{manifest.num_identities - 1}: got {ids[:8]}...")
    if check_files:
        for rec in manifest.records:
            for rel in (rec.image_path, rec.mask_path):
                if not (manifest.root / rel).exists():
                    raise ManifestError(f"referenced file missing: {manifest.root / rel}")


def load_image(manifest: DatasetManifest, index: int,
               target_size: tuple[int, int] | None = None) -> np.ndarray:
    """Decode one image as H x W x 3 float32 in [0, 1]. Never touches the mask."""
    rec = manifest.records[index]
    path = manifest.root / rec.image_path
    if not path.exists():
        raise ManifestError(f"image file missing: {path}")
    img = Image.open(path).convert("RGB")
    if target_size is not None and img.size != (target_size[1], target_size[0]):
        img = img.resize((target_size[1], target_size[0]), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def load_mask(manifest: DatasetManifest, index: int,
              target_size: tuple[int, int] | None = None) -> np.ndarray:
    rec = manifest.records[index]
    path = manifest.root / rec.mask_path
    if not path.exists():
        raise ManifestError(f"mask file missing: {path}")
    mask = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    if target_size is not None and mask.shape != tuple(target_size):
        mask = np.asarray(
            Image.fromarray(mask).resize((target_size[1], target_size[0]), Image.NEAREST),
            dtype=np.uint8)
    if mask.max(initial=0) > manifest.num_part_labels:
        raise ManifestError(
            f"mask {path} holds label {int(mask.max())} > L={manifest.num_part_labels}")
    return mask


def load_sample(manifest: DatasetManifest, index: int,
                target_size: tuple[int, int] | None = None) -> ModalitySample:
    rec = manifest.records[index]
    image = load_image(manifest, index, target_size)
    mask = load_mask(manifest, index, target_size)
    if mask.shape != image.shape[:2]:
        raise ManifestError(
            f"mask/image size mismatch for record {index}: "
            f"{mask.shape} vs {image.shape[:2]}")
    return ModalitySample(
        image=image, shape_mask=mask, identity=rec.identity,
        camera_id=rec.camera, modality=rec.modality, tracklet_id=rec.tracklet)


def encode_shape_input(mask: np.ndarray, num_part_labels: int,
                       mode: str = "parts") -> np.ndarray:
    """Encode a part-label mask as a 3-channel float image for the shape stream.

    "parts": labels normalized to [0, 1] by L, replicated to 3 channels.
    "silhouette": binary body mask replicated to 3 channels.
    """
    if mode == "parts":
        plane = mask.astype(np.float32) / float(num_part_labels)
    elif mode == "silhouette":
        plane = (mask > 0).astype(np.float32)
    else:
        raise ValueError(f"unknown shape encoding {mode!r}")
    return np.repeat(plane[:, :, None], 3, axis=2)
