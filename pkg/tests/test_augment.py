import numpy as np

from shapereid.augment import (AugmentConfig, adaptive_grayscale, augment_sample,
                               channel_random_erase, normalize, pad_random_crop,
                               random_flip)


class _FixedRng:
    """Minimal generator stub returning scripted draws."""

    def __init__(self, integers=(), randoms=(), uniforms=()):
        self._int = list(integers)
        self._rand = list(randoms)
        self._unif = list(uniforms)

    def integers(self, *a, **k):
        return self._int.pop(0)

    def random(self, *a, **k):
        return self._rand.pop(0)

    def uniform(self, lo=0.0, hi=1.0, **k):
        return self._unif.pop(0)


def _sample(h=16, w=8, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.random((h, w, 3)).astype(np.float32)
    mask = rng.integers(0, 7, size=(h, w)).astype(np.uint8)
    return img, mask


def test_centered_crop_is_identity():
    img, mask = _sample()
    # offset (pad, pad) recovers the original window
    rng = _FixedRng(integers=[4, 4])
    out_img, out_mask = pad_random_crop(img, mask, rng, pad=4)
    assert np.array_equal(out_img, img)
    assert np.array_equal(out_mask, mask)


def test_crop_zero_pad_is_noop():
    img, mask = _sample()
    out_img, out_mask = pad_random_crop(img, mask, np.random.default_rng(0), 0)
    assert out_img is img and out_mask is mask


def test_crop_joint_offsets():
    img, mask = _sample()
    rng = _FixedRng(integers=[0, 2])
    out_img, out_mask = pad_random_crop(img, mask, rng, pad=2)
    assert out_img.shape == img.shape and out_mask.shape == mask.shape
    # top-left offset shifts content down-right by (2, 0) relative to pad=2
    assert np.array_equal(out_img[2:, :], img[:-2, :])
    assert np.array_equal(out_mask[2:, :], mask[:-2, :])
    assert (out_img[:2] == 0).all() and (out_mask[:2] == 0).all()


def test_flip_involution():
    img, mask = _sample()
    always = _FixedRng(randoms=[0.0, 0.0])
    f_img, f_mask = random_flip(img, mask, always, p=0.5)
    ff_img, ff_mask = random_flip(f_img, f_mask, always, p=0.5)
    assert np.array_equal(ff_img, img)
    assert np.array_equal(ff_mask, mask)
    assert not np.array_equal(f_img, img)


def test_flip_not_drawn():
    img, mask = _sample()
    never = _FixedRng(randoms=[0.99])
    out_img, out_mask = random_flip(img, mask, never, p=0.5)
    assert out_img is img and out_mask is mask


def test_erase_touches_single_channel():
    img, _ = _sample(32, 16)
    out = channel_random_erase(img, np.random.default_rng(3), p=1.0,
                               area=(0.1, 0.3), ratio=(0.5, 2.0))
    changed = [not np.array_equal(out[..., c], img[..., c]) for c in range(3)]
    assert sum(changed) == 1
    c = changed.index(True)
    diff = out[..., c] != img[..., c]
    rows = np.any(diff, axis=1).nonzero()[0]
    cols = np.any(diff, axis=0).nonzero()[0]
    # changed region is one solid rectangle filled with the channel mean
    region = out[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1, c]
    assert np.allclose(region, img[..., c].mean())
    assert diff[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].all()
    assert diff.sum() == len(rows) * len(cols)


def test_erase_skipped():
    img, _ = _sample()
    out = channel_random_erase(img, _FixedRng(randoms=[0.99]), p=0.5,
                               area=(0.1, 0.3), ratio=(0.5, 2.0))
    assert out is img


def test_adaptive_grayscale_collapses_channels():
    img, _ = _sample()
    out = adaptive_grayscale(img, _FixedRng(randoms=[0.0]), p=0.5)
    assert np.allclose(out[..., 0], out[..., 1])
    assert np.allclose(out[..., 1], out[..., 2])
    luma = img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    assert np.allclose(out[..., 0], luma, atol=1e-6)


def test_normalize_arithmetic():
    img = np.full((4, 4, 3), 0.75, dtype=np.float32)
    out = normalize(img, 0.5, 0.5)
    assert out.dtype == np.float32
    assert np.allclose(out, 0.5)


def test_augment_sample_alignment(tiny_ds):
    # geometric ops move image and mask together: body-pixel luminance
    # statistics stay distinct from background after augmentation
    from shapereid.manifest import load_sample
    s = load_sample(tiny_ds.train, 0)
    cfg = AugmentConfig(crop_pad=4, flip_p=1.0, erase_p=0.0, gray_p=0.0)
    rng = np.random.default_rng(11)
    img, mask = augment_sample(s.image, s.shape_mask, rng, cfg)
    assert img.shape == s.image.shape and mask.shape == s.shape_mask.shape
    assert img.dtype == np.float32
    # undo the normalization, then flip back and locate the crop offset
    restored = (img * cfg.std + cfg.mean)[:, ::-1]
    mask_back = mask[:, ::-1]
    assert (mask_back > 0).any()
    h, w = mask.shape
    pad_mask = np.pad(s.shape_mask, cfg.crop_pad)
    pad_img = np.pad(s.image, ((cfg.crop_pad,) * 2, (cfg.crop_pad,) * 2, (0, 0)))
    found = False
    for top in range(2 * cfg.crop_pad + 1):
        for left in range(2 * cfg.crop_pad + 1):
            if np.array_equal(pad_mask[top:top + h, left:left + w], mask_back):
                found = True
                # the image crop sits at the same offset as the mask crop
                assert np.allclose(pad_img[top:top + h, left:left + w],
                                   restored, atol=1e-6)
    assert found, "mask is not a crop of the original"


def test_augment_sample_mask_unchanged_by_appearance_ops(tiny_ds):
    from shapereid.manifest import load_sample
    s = load_sample(tiny_ds.train, 1)
    cfg = AugmentConfig(crop_pad=0, flip_p=0.0, erase_p=1.0, gray_p=1.0)
    img, mask = augment_sample(s.image, s.shape_mask, np.random.default_rng(5),
                               cfg)
    assert np.array_equal(mask, s.shape_mask)
    assert not np.allclose(img * cfg.std + cfg.mean, s.image)


def test_augment_sample_deterministic(tiny_ds):
    from shapereid.manifest import load_sample
    s = load_sample(tiny_ds.train, 2)
    cfg = AugmentConfig()
    a_img, a_mask = augment_sample(s.image, s.shape_mask,
                                   np.random.default_rng([9, 1]), cfg)
    b_img, b_mask = augment_sample(s.image, s.shape_mask,
                                   np.random.default_rng([9, 1]), cfg)
    assert np.array_equal(a_img, b_img)
    assert np.array_equal(a_mask, b_mask)
