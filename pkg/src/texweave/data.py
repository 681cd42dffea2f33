"""Dataset ingestion, augmentation, and procedural texture synthesis.

Source images of arbitrary size are indexed into train/test splits and
turned into fixed-size square patches by the augmentation pipeline:
color histogram match against a random same-dataset reference, random
mirroring, random in-plane rotation, random downscale (up to x4), and a
random crop. A family of seeded procedural generators stands in for
large photo collections so that desk-scale experiments have textures
with checkable structure (period, orientation, color).
"""

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imgio import load_image, to_unit

log = logging.getLogger(__name__)

PATCH_SIZES = (32, 64, 128)
SYNTH_FAMILIES = ("stripes", "checker", "blobs", "noise-octaves", "dots")

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


class DataError(ValueError):
    pass


def validate_patch(patch, patch_size=None):
    """Check the TexturePatch contract: square float array in [-1, 1]."""
    patch = np.asarray(patch)
    if patch.ndim != 3 or patch.shape[2] != 3:
        raise DataError(f"patch must be H x W x 3, got {patch.shape}")
    h, w = patch.shape[:2]
    if h != w:
        raise DataError(f"patch must be square, got {h}x{w}")
    if patch_size is not None and h != patch_size:
        raise DataError(f"patch must be {patch_size}px, got {h}px")
    if h not in PATCH_SIZES:
        raise DataError(f"patch side must be one of {PATCH_SIZES}, got {h}")
    if np.abs(patch).max() > 1.0 + 1e-6:
        raise DataError("patch values must lie in [-1, 1]")
    return patch


@dataclass
class ImageRef:
    """One source image: either a file on disk or an in-memory array."""

    key: str
    path: str = None
    array: np.ndarray = None
    label: str = None

    def load(self):
        if self.array is not None:
            return self.array
        return load_image(self.path)


@dataclass
class Dataset:
    """An indexed split of source images plus its augmentation config."""

    items: list
    split: str
    seed: int = 0
    augmentations_per_item: int = 8

    def __len__(self):
        return len(self.items)

    def keys(self):
        return [it.key for it in self.items]


def _infer_label(path, root):
    """Family label from the subdirectory, or a filename prefix like
    'stripes-0003.png'; None when neither convention applies."""
    if path.parent != root:
        return path.parent.name
    stem = path.stem
    if "-" in stem:
        return stem.rsplit("-", 1)[0]
    return None


def _index_image(path, root, patch_size):
    try:
        img = load_image(path)
    except Exception as exc:  # unreadable or undecodable file
        warnings.warn(f"skipping unreadable image {path}: {exc}")
        return None
    h, w = img.shape[:2]
    if min(h, w) < patch_size:
        raise DataError(
            f"image {path} is {h}x{w}, smaller than patch size {patch_size}"
        )
    return ImageRef(key=str(path), path=str(path),
                    label=_infer_label(path, root))


def load_dataset(root_path, split_ratio=0.9, seed=0, patch_size=128,
                 augmentations_per_item=8):
    """Index a directory of images and split it into (train, test).

    The split is a deterministic function of `seed` and partitions the
    source images: every valid image lands in exactly one split.
    Unreadable files are skipped with a warning; an empty directory (or
    one with no decodable images) is a fatal error, as is any image
    smaller than the patch size.
    """
    from pathlib import Path

    root = Path(root_path)
    paths = sorted(
        p for p in root.rglob("*") if p.suffix.lower() in IMAGE_EXTENSIONS
    )
    items = []
    for p in paths:
        ref = _index_image(p, root, patch_size)
        if ref is not None:
            items.append(ref)
    if not items:
        raise DataError(f"no valid images found under {root_path}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    n_train = int(round(len(items) * split_ratio))
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    train = Dataset([items[i] for i in train_idx], "train", seed,
                    augmentations_per_item)
    test = Dataset([items[i] for i in test_idx], "test", seed,
                   augmentations_per_item)
    return train, test


def save_manifest(train, test, path):
    """Persist the split as a JSON manifest (paths, split labels, seeds)."""
    payload = {
        "seed": train.seed,
        "augmentations_per_item": train.augmentations_per_item,
        "splits": {
            "train": [it.key for it in train.items],
            "test": [it.key for it in test.items],
        },
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def load_manifest(path):
    with open(path) as f:
        payload = json.load(f)
    out = []
    for split in ("train", "test"):
        items = [ImageRef(key=k, path=k) for k in payload["splits"][split]]
        out.append(Dataset(items, split, payload["seed"],
                           payload["augmentations_per_item"]))
    return tuple(out)


# ---------------------------------------------------------------------------
# Histogram matching


def histogram_match(src_image, ref_image):
    """Per-channel rank mapping of src onto ref's value distribution.

    The sorted pixel values of the output equal (up to interpolation of
    quantiles) the sorted pixel values of the reference; the spatial
    arrangement of src is preserved. Idempotent for a fixed reference.
    """
    src = np.asarray(src_image, dtype=np.float32)
    ref = np.asarray(ref_image, dtype=np.float32)
    out = np.empty_like(src)
    for c in range(src.shape[2]):
        s = src[..., c].ravel()
        r = np.sort(ref[..., c].ravel())
        order = np.argsort(s, kind="stable")
        q = np.linspace(0.0, 1.0, s.size)
        matched = np.interp(q, np.linspace(0.0, 1.0, r.size), r)
        chan = np.empty_like(s)
        chan[order] = matched
        out[..., c] = chan.reshape(src.shape[:2])
    return out


# ---------------------------------------------------------------------------
# Augmentation


@dataclass
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    angle_deg: float = 0.0
    downscale: float = 1.0
    crop_rc: tuple = (0, 0)
    match_reference: np.ndarray = None


MAX_AUGMENT_RETRIES = 4


def sample_augment_params(rng, image_shape, patch_size, reference=None,
                          max_downscale=4.0):
    h, w = image_shape[:2]
    # keep the downscaled image at least patch-sized
    cap = min(max_downscale, min(h, w) / patch_size)
    if cap < 1.0:
        raise DataError(
            f"image {h}x{w} smaller than patch size {patch_size}"
        )
    down = float(rng.uniform(1.0, cap))
    dh, dw = int(h / down), int(w / down)
    params = AugmentParams(
        flip_h=bool(rng.random() < 0.5),
        flip_v=bool(rng.random() < 0.5),
        angle_deg=float(rng.uniform(0.0, 360.0)),
        downscale=down,
        crop_rc=(
            int(rng.integers(0, max(dh - patch_size, 0) + 1)),
            int(rng.integers(0, max(dw - patch_size, 0) + 1)),
        ),
        match_reference=reference,
    )
    return params


def apply_augment(image, params, patch_size):
    """Apply one sampled augmentation: match, mirror, rotate, scale, crop."""
    img = np.asarray(image, dtype=np.float32)
    if params.match_reference is not None:
        img = histogram_match(img, params.match_reference)
    if params.flip_h:
        img = img[:, ::-1]
    if params.flip_v:
        img = img[::-1]
    if params.angle_deg != 0.0:
        # reflect padding keeps the full canvas usable after rotation
        img = ndimage.rotate(img, params.angle_deg, axes=(1, 0), reshape=False,
                             order=1, mode="reflect")
    if params.downscale != 1.0:
        zoom = 1.0 / params.downscale
        img = ndimage.zoom(img, (zoom, zoom, 1.0), order=1, mode="reflect")
    r, c = params.crop_rc
    if r + patch_size > img.shape[0] or c + patch_size > img.shape[1]:
        raise DataError("crop window exceeds transformed image")
    patch = img[r:r + patch_size, c:c + patch_size]
    return np.clip(patch, -1.0, 1.0)


def augment(image, seed, patch_size, reference=None):
    """Deterministic random augmentation of one image into one patch.

    Retries with a halved rotation angle when the sampled transforms
    leave no valid crop window, and fails after a bounded retry count.
    """
    rng = np.random.default_rng(seed)
    params = sample_augment_params(rng, np.asarray(image).shape, patch_size,
                                   reference)
    for attempt in range(MAX_AUGMENT_RETRIES):
        try:
            return apply_augment(image, params, patch_size)
        except DataError:
            params.angle_deg = params.angle_deg / 2.0
            params.downscale = max(1.0, params.downscale / 2.0)
    raise DataError(
        f"no valid crop window after {MAX_AUGMENT_RETRIES} retries"
    )


def patch_stream(dataset, patch_size, seed):
    """Infinite deterministic stream of augmented patches from a split.

    Every draw picks a source image and a same-dataset histogram
    reference, then runs the augmentation pipeline with a child seed.
    """
    rng = np.random.default_rng(seed)
    n = len(dataset.items)
    while True:
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n))
        child = int(rng.integers(0, 2**63 - 1))
        ref = dataset.items[j].load()
        yield augment(dataset.items[i].load(), child, patch_size, reference=ref)


# ---------------------------------------------------------------------------
# Procedural textures


def _color_pair(rng):
    a = rng.uniform(-1.0, 1.0, size=3)
    b = rng.uniform(-1.0, 1.0, size=3)
    # keep the two colors apart so structure survives augmentation
    while np.linalg.norm(a - b) < 0.8:
        b = rng.uniform(-1.0, 1.0, size=3)
    return a.astype(np.float32), b.astype(np.float32)


def _stripes(size, rng, period=8, angle_deg=0.0, soft=False, colors=None):
    ca, cb = colors if colors is not None else _color_pair(rng)
    r, c = np.mgrid[0:size, 0:size].astype(np.float32)
    theta = np.deg2rad(angle_deg)
    coord = r * np.cos(theta) + c * np.sin(theta)
    if soft:
        t = 0.5 * (1.0 + np.sin(2.0 * np.pi * coord / period))
    else:
        t = ((coord % period) < (period / 2.0)).astype(np.float32)
    return t[..., None] * ca + (1.0 - t[..., None]) * cb


def _checker(size, rng, period=4, colors=None):
    ca, cb = colors if colors is not None else _color_pair(rng)
    r, c = np.mgrid[0:size, 0:size]
    t = (((r // period) + (c // period)) % 2).astype(np.float32)
    return t[..., None] * ca + (1.0 - t[..., None]) * cb


def _value_noise(size, rng, cell):
    """Bilinearly upsampled white noise with grid spacing `cell`."""
    n = size // cell + 2
    coarse = rng.standard_normal((n, n)).astype(np.float32)
    fine = ndimage.zoom(coarse, cell, order=1)
    return fine[:size, :size]


def _blobs(size, rng, scale=8, colors=None):
    ca, cb = colors if colors is not None else _color_pair(rng)
    field = _value_noise(size, rng, scale)
    field = ndimage.gaussian_filter(field, sigma=scale / 4.0, mode="wrap")
    lo, hi = field.min(), field.max()
    t = (field - lo) / max(hi - lo, 1e-8)
    return t[..., None] * ca + (1.0 - t[..., None]) * cb


def _noise_octaves(size, rng, octaves=4, persistence=0.55, base_cell=8,
                   colors=None):
    ca, cb = colors if colors is not None else _color_pair(rng)
    acc = np.zeros((size, size), dtype=np.float32)
    amp, total = 1.0, 0.0
    cell = base_cell
    for _ in range(octaves):
        acc += amp * _value_noise(size, rng, max(cell, 1))
        total += amp
        amp *= persistence
        cell = max(cell // 2, 1)
    acc /= total
    lo, hi = acc.min(), acc.max()
    t = (acc - lo) / max(hi - lo, 1e-8)
    return t[..., None] * ca + (1.0 - t[..., None]) * cb


def _dots(size, rng, spacing=12, radius=3.5, jitter=0.3, colors=None):
    ca, cb = colors if colors is not None else _color_pair(rng)
    img = np.tile(cb.reshape(1, 1, 3), (size, size, 1))
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float32)
    for gr in range(-1, size // spacing + 2):
        for gc in range(-1, size // spacing + 2):
            cy = gr * spacing + rng.uniform(-jitter, jitter) * spacing
            cx = gc * spacing + rng.uniform(-jitter, jitter) * spacing
            mask = (rr - cy) ** 2 + (cc - cx) ** 2 <= radius ** 2
            img[mask] = ca
    return img


_GENERATORS = {
    "stripes": _stripes,
    "checker": _checker,
    "blobs": _blobs,
    "noise-octaves": _noise_octaves,
    "dots": _dots,
}


def synth_texture(family, params, size, seed):
    """Generate one stationary procedural texture image, deterministically.

    `params` are family-specific keyword overrides (period, colors, ...).
    """
    if family not in _GENERATORS:
        raise DataError(f"unknown texture family {family!r}; "
                        f"choose from {SYNTH_FAMILIES}")
    rng = np.random.default_rng(seed)
    img = _GENERATORS[family](size, rng, **(params or {}))
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def make_synthetic_dataset(families, n_per_family, image_size, seed,
                           test_fraction=0.2, augmentations_per_item=8):
    """Build in-memory train/test datasets of procedural source images.

    Each source image gets randomized family parameters so that the
    encoder has intra-family variation to absorb. Labels carry the
    family name for classifier training.
    """
    rng = np.random.default_rng(seed)
    refs = []
    for family in families:
        if family not in _GENERATORS:
            raise DataError(f"unknown texture family {family!r}")
        for i in range(n_per_family):
            s = int(rng.integers(0, 2**63 - 1))
            params = _sample_family_params(family, np.random.default_rng(s))
            img = synth_texture(family, params, image_size, s)
            refs.append(ImageRef(key=f"{family}-{i:04d}", array=img,
                                 label=family))
    order = rng.permutation(len(refs))
    n_test = max(1, int(round(len(refs) * test_fraction)))
    test_idx = set(order[:n_test].tolist())
    train_items = [refs[i] for i in range(len(refs)) if i not in test_idx]
    test_items = [refs[i] for i in range(len(refs)) if i in test_idx]
    return (
        Dataset(train_items, "train", seed, augmentations_per_item),
        Dataset(test_items, "test", seed, augmentations_per_item),
    )


def _sample_family_params(family, rng):
    if family == "stripes":
        return {
            "period": int(rng.integers(6, 14)),
            "angle_deg": float(rng.choice([0.0, 30.0, 45.0, 60.0, 90.0])),
            "soft": bool(rng.random() < 0.5),
        }
    if family == "checker":
        return {"period": int(rng.integers(3, 9))}
    if family == "blobs":
        return {"scale": int(rng.integers(6, 14))}
    if family == "noise-octaves":
        return {"octaves": int(rng.integers(3, 5)),
                "base_cell": int(rng.integers(8, 24))}
    if family == "dots":
        return {"spacing": int(rng.integers(9, 16)),
                "radius": float(rng.uniform(2.0, 4.5))}
    return {}
