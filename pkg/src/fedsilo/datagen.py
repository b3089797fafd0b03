"""Synthetic multi-center image generator with per-center covariate shift.

Every center draws from the same class-conditional pattern (class 1 adds
a localized bright blob to background noise, class 0 is noise only), then
applies a center-specific channel-wise shift x -> clip((s*x + o)^g). The
shift acts on inputs only, so labels are invariant and all heterogeneity
is covariate shift.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CenterShift:
    scale: np.ndarray  # per-channel, > 0
    offset: np.ndarray
    gamma: np.ndarray  # per-channel exponent, > 0

    @classmethod
    def identity(cls, channels):
        return cls(np.ones(channels), np.zeros(channels), np.ones(channels))

    @classmethod
    def draw(cls, rng, channels, magnitude):
        if magnitude == 0.0:
            return cls.identity(channels)
        scale = np.exp(2.0 * magnitude * rng.uniform(-1.0, 1.0, channels))
        offset = 0.8 * magnitude * rng.uniform(-1.0, 1.0, channels)
        gamma = np.exp(1.2 * magnitude * rng.uniform(-1.0, 1.0, channels))
        return cls(scale, offset, gamma)

    def apply(self, images):
        s = self.scale[None, :, None, None]
        o = self.offset[None, :, None, None]
        g = self.gamma[None, :, None, None]
        shifted = np.clip(images * s + o, 0.0, None) ** g
        return np.clip(shifted, 0.0, 1.0)


@dataclass(frozen=True)
class SyntheticSpec:
    n_centers: int = 3
    samples_per_center: int = 1000
    image_size: int = 32
    channels: int = 3
    class_balance: float = 0.5
    shift_magnitude: float = 0.5
    blob_amplitude: float = 0.35
    blob_radius: float = 4.0
    noise_level: float = 0.15
    seed: int = 0

    def validate(self):
        if self.n_centers < 1:
            raise ValueError("n_centers must be >= 1")
        if self.samples_per_center < 10:
            raise ValueError("samples_per_center must be >= 10")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must be in (0, 1)")
        if self.image_size < 4:
            raise ValueError("image_size must be >= 4")


@dataclass
class LabeledDataset:
    images: np.ndarray  # (n, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (n,) uint8
    center_id: int = -1

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images/labels length mismatch")

    @property
    def n(self):
        return self.images.shape[0]


def _base_images(rng, n, labels, spec):
    size = spec.image_size
    imgs = np.clip(
        0.45 + spec.noise_level * rng.standard_normal((n, spec.channels, size, size)),
        0.0, 1.0,
    )
    yy, xx = np.mgrid[0:size, 0:size]
    margin = int(np.ceil(spec.blob_radius))
    for i in np.flatnonzero(labels == 1):
        cy, cx = rng.uniform(margin, size - margin, 2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * spec.blob_radius ** 2))
        imgs[i] += spec.blob_amplitude * blob[None, :, :]
    return np.clip(imgs, 0.0, 1.0)


def center_shifts(spec):
    """The per-center shifts, drawn deterministically from the spec seed."""
    shifts = []
    for k in range(spec.n_centers):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, k, 1]))
        shifts.append(CenterShift.draw(rng, spec.channels, spec.shift_magnitude))
    return shifts


def generate_synthetic(spec):
    """One LabeledDataset per center, deterministic per seed.

    Class counts are fixed to round(class_balance * n) positives so both
    classes are always present; the label order is shuffled.
    """
    spec.validate()
    shifts = center_shifts(spec)
    datasets = []
    for k in range(spec.n_centers):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, k, 0]))
        n = spec.samples_per_center
        n_pos = int(round(spec.class_balance * n))
        labels = np.zeros(n, dtype=np.uint8)
        labels[rng.permutation(n)[:n_pos]] = 1
        imgs = _base_images(rng, n, labels, spec)
        imgs = shifts[k].apply(imgs)
        datasets.append(LabeledDataset(images=imgs.astype(np.float32),
                                       labels=labels, center_id=k))
    return datasets


def split_partitions(ds, ratios=(0.6, 0.2, 0.2), seed=0):
    """Stratified deterministic train/val/test split.

    Per-class indices are shuffled and cut at cumulative-rounded
    boundaries, so each split's class ratio stays within one sample of
    the global ratio.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three values summing to 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, ds.center_id, 2]))
    parts = [[], [], []]
    for cls in (0, 1):
        idx = np.flatnonzero(ds.labels == cls)
        if idx.size == 0:
            raise ValueError(f"class {cls} absent from dataset")
        idx = rng.permutation(idx)
        bounds = np.round(np.cumsum(ratios) * idx.size).astype(int)
        parts[0].append(idx[: bounds[0]])
        parts[1].append(idx[bounds[0]:bounds[1]])
        parts[2].append(idx[bounds[1]:bounds[2]])
    out = []
    for p in parts:
        sel = rng.permutation(np.concatenate(p))
        if not (np.any(ds.labels[sel] == 0) and np.any(ds.labels[sel] == 1)):
            raise ValueError("split would leave a class empty")
        out.append(LabeledDataset(images=ds.images[sel], labels=ds.labels[sel],
                                  center_id=ds.center_id))
    return tuple(out)
