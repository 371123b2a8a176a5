"""Synthetic audio-visual mask-reconstruction data with Ideal Binary Masks.

Every sample has a latent class. The class fixes the clean spectral pattern
of the current frame and the "lip shape" drawn in the visual image. The
current frame's clean power is mixed with colored noise at an SNR drawn
from ``snr_db_set``. At low SNR the mixture alone hardly reveals where the
speech energy sits, while the image identifies the class exactly. That
dependency is what separates the unimodal baseline from the multimodal
models.

On-disk layout of a dataset directory::

    manifest.json
    audio.mbt    [N, 1, Ha, Wa]  normalized log mixture power
    visual.mbt   [N, 1, Hv, Wv]
    mask.mbt     [N, F]          IBM of the current frame
    clean.mbt    [N, F]          clean power of the current frame
    noise.mbt    [N, F]          noise power of the current frame

Tensors are stored in generation order; ``manifest["split"][i]`` names the
split of sample ``i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DimensionError, DomainError, FormatError, Tensor, as_tensor, encode_mbt1, load_mbt1, make_rng

MANIFEST_VERSION = 1
SPLITS = ("train", "test", "proxy")
TENSOR_FILES = ("audio", "visual", "mask", "clean", "noise")


@dataclass(frozen=True)
class IbmParams:
    lc_db: float = 5.0
    eps_noise: float = 1e-12


def ibm(speech_power, noise_power, params: IbmParams = IbmParams()) -> Tensor:
    """1 where ``10 log10(speech / noise) >= lc_db`` else 0 (powers, not magnitudes)."""
    s, n = as_tensor(speech_power), as_tensor(noise_power)
    if s.shape != n.shape:
        raise DimensionError(f"ibm: speech {s.shape} vs noise {n.shape}")
    if (s < 0).any() or (n < 0).any():
        raise DomainError("ibm: powers must be non-negative")
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(s / np.maximum(n, params.eps_noise))
    return (snr >= params.lc_db).astype(np.float64)


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int = 1000
    snr_db_set: tuple[float, ...] = (-12.0, -6.0, 0.0, 6.0)
    audio_shape: tuple[int, int, int] = (1, 8, 64)
    visual_shape: tuple[int, int, int] = (1, 24, 24)
    mask_bins: int = 64
    n_classes: int = 8
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.80, 0.15, 0.05)
    ibm: IbmParams = field(default_factory=IbmParams)

    def __post_init__(self):
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {self.split_fractions}")
        if self.audio_shape[0] != 1 or self.visual_shape[0] != 1:
            raise ValueError("audio and visual inputs are single-channel")
        if self.audio_shape[2] != self.mask_bins:
            raise ValueError(f"audio width {self.audio_shape[2]} must equal mask_bins {self.mask_bins}")
        if self.n_samples < 1 or self.n_classes < 2:
            raise ValueError("need n_samples >= 1 and n_classes >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        for k in ("snr_db_set", "audio_shape", "visual_shape", "split_fractions"):
            if k in d:
                d[k] = tuple(d[k])
        if "ibm" in d and isinstance(d["ibm"], dict):
            d["ibm"] = IbmParams(**d["ibm"])
        return cls(**d)


def split_counts(n: int, fractions=(0.80, 0.15, 0.05)) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_test = int(round(fractions[1] * n))
    n_test = min(n_test, n - n_train)
    return n_train, n_test, n - n_train - n_test


def assign_splits(seed: int, n: int, fractions=(0.80, 0.15, 0.05)) -> list[str]:
    counts = split_counts(n, fractions)
    perm = make_rng(seed, "split").permutation(n)
    labels = [""] * n
    start = 0
    for name, c in zip(SPLITS, counts):
        for i in perm[start : start + c]:
            labels[int(i)] = name
        start += c
    return labels


# -- generative pieces --------------------------------------------------------


def class_patterns(rng: np.random.Generator, n_classes: int, bins: int) -> Tensor:
    """Clean power spectra, one row per class: several narrow peaks on a low floor.

    Peaks are only one or two bins wide, so at low SNR a single speech peak looks
    much like a spike of the exponential noise texture.
    """
    f = np.arange(bins)
    pats = np.empty((n_classes, bins))
    for k in range(n_classes):
        n_bands = int(rng.integers(3, 7))
        centers = rng.uniform(0.05, 0.95, size=n_bands) * bins
        widths = rng.uniform(0.0105, 0.028, size=n_bands) * bins
        amps = rng.uniform(0.5, 1.0, size=n_bands)
        p = 0.02 + sum(a * np.exp(-0.5 * ((f - c) / w) ** 2) for a, c, w in zip(amps, centers, widths))
        pats[k] = p / p.mean()
    return pats


def colored_noise(rng: np.random.Generator, bins: int) -> Tensor:
    """Smooth random spectral envelope times exponential (chi-square 2) fluctuations."""
    tilt = rng.uniform(-1.0, 1.0)
    wobble = np.convolve(rng.normal(size=bins + 8), np.ones(9) / 9.0, mode="valid")
    envelope = np.exp(tilt * np.linspace(-1.0, 1.0, bins) + 1.5 * wobble)
    return envelope * rng.exponential(1.0, size=bins)


def lip_shape(cls_idx: int, n_classes: int, h: int, w: int) -> Tensor:
    """Filled ellipse whose width and opening encode the class."""
    n_open = (n_classes + 1) // 2
    opening = 0.12 + 0.30 * (cls_idx % n_open) / max(n_open - 1, 1)
    width = 0.28 if cls_idx < n_open else 0.42
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r = ((yy - cy) / (opening * h)) ** 2 + ((xx - cx) / (width * w)) ** 2
    return (r <= 1.0).astype(np.float64)


def render_visual(rng: np.random.Generator, cls_idx: int, n_classes: int, h: int, w: int) -> Tensor:
    img = lip_shape(cls_idx, n_classes, h, w)
    dy, dx = rng.integers(-1, 2, size=2)
    img = np.roll(img, (int(dy), int(dx)), axis=(0, 1))
    return img + rng.normal(0.0, 0.15, size=img.shape)


def mix_at_snr(clean: Tensor, noise: Tensor, snr_db: float) -> Tensor:
    """Rescale ``noise`` so that ``10 log10(sum clean / sum noise) == snr_db``."""
    return noise * (clean.sum() / (noise.sum() * 10.0 ** (snr_db / 10.0)))


# -- dataset ------------------------------------------------------------------


def _f32(x: Tensor) -> Tensor:
    # masks are computed from the float32 values that land on disk
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def build_arrays(cfg: SyntheticConfig) -> tuple[dict[str, Tensor], dict]:
    """Generate all tensors in memory; returns (arrays, manifest)."""
    rng = make_rng(cfg.seed, "data")
    _, ha, wa = cfg.audio_shape
    _, hv, wv = cfg.visual_shape
    n, bins = cfg.n_samples, cfg.mask_bins
    pats = class_patterns(rng, cfg.n_classes, bins)

    labels = rng.integers(0, cfg.n_classes, size=n)
    snrs = rng.choice(np.asarray(cfg.snr_db_set, dtype=np.float64), size=n)
    log_mix = np.empty((n, 1, ha, wa))
    visual = np.empty((n, 1, hv, wv))
    clean = np.empty((n, bins))
    noise = np.empty((n, bins))
    for i in range(n):
        # the current frame is the last row; prior rows are unrelated context frames
        ctx = rng.integers(0, cfg.n_classes, size=ha - 1)
        classes = [*ctx, labels[i]]
        for t, c in enumerate(classes):
            s = pats[c]
            nz = mix_at_snr(s, colored_noise(rng, bins), float(rng.choice(cfg.snr_db_set)) if t < ha - 1 else snrs[i])
            if t == ha - 1:
                s, nz = _f32(s), _f32(nz)
                clean[i], noise[i] = s, nz
            log_mix[i, 0, t] = np.log(s + nz)
        visual[i, 0] = render_visual(rng, int(labels[i]), cfg.n_classes, hv, wv)

    mask = ibm(clean, noise, cfg.ibm)
    split = assign_splits(cfg.seed, n, cfg.split_fractions)
    train = np.array([s == "train" for s in split])
    if train.any():
        mu, sd = float(log_mix[train].mean()), float(log_mix[train].std())
        pos = float(mask[train].sum())
        neg = float(mask[train].size - pos)
    else:
        mu, sd, pos, neg = 0.0, 1.0, 1.0, 1.0
    sd = sd if sd > 0 else 1.0
    audio = (log_mix - mu) / sd
    pos_weight = neg / pos if pos > 0 else 1.0

    manifest = {
        "version": MANIFEST_VERSION,
        "seed": cfg.seed,
        "n_samples": n,
        "n_classes": cfg.n_classes,
        "shapes": {
            "audio": list(cfg.audio_shape),
            "visual": list(cfg.visual_shape),
            "mask": [bins],
        },
        "lc_db": cfg.ibm.lc_db,
        "eps_noise": cfg.ibm.eps_noise,
        "split_fractions": list(cfg.split_fractions),
        "split_counts": dict(zip(SPLITS, split_counts(n, cfg.split_fractions))),
        "pos_weight": pos_weight,
        "train_positive_rate": pos / (pos + neg),
        "normalization": {"mean": mu, "std": sd},
        "files": {k: f"{k}.mbt" for k in TENSOR_FILES},
        "snr_db": [float(s) for s in snrs],
        "latent_class": [int(c) for c in labels],
        "split": split,
    }
    arrays = {"audio": audio, "visual": visual, "mask": mask, "clean": clean, "noise": noise}
    return arrays, manifest


def generate_dataset(cfg: SyntheticConfig, out_dir) -> dict:
    """Write the dataset under ``out_dir`` and return its manifest."""
    arrays, manifest = build_arrays(cfg)
    out = Path(out_dir)
    out.mkdir(exist_ok=True)
    for k in TENSOR_FILES:
        (out / manifest["files"][k]).write_bytes(encode_mbt1(arrays[k]))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


@dataclass
class SampleBatch:
    audio: Tensor
    visual: Tensor
    mask: Tensor
    clean: Tensor
    noise: Tensor

    def __len__(self) -> int:
        return self.mask.shape[0]

    def take(self, idx) -> "SampleBatch":
        return SampleBatch(*(getattr(self, k)[idx] for k in TENSOR_FILES))


class Dataset:
    """A generated dataset directory held in memory."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = json.loads((self.root / "manifest.json").read_text())
        self.arrays = {k: load_mbt1(self.root / self.manifest["files"][k]) for k in TENSOR_FILES}
        sh = self.manifest["shapes"]
        n = self.manifest["n_samples"]
        expected = {
            "audio": (n, *sh["audio"]),
            "visual": (n, *sh["visual"]),
            "mask": (n, *sh["mask"]),
            "clean": (n, *sh["mask"]),
            "noise": (n, *sh["mask"]),
        }
        for k, shape in expected.items():
            if self.arrays[k].shape != tuple(shape):
                raise FormatError(f"{k}.mbt has shape {self.arrays[k].shape}, manifest says {tuple(shape)}")
        self.split_index = {s: np.array([i for i, t in enumerate(self.manifest["split"]) if t == s], dtype=int) for s in SPLITS}

    @property
    def pos_weight(self) -> float:
        return float(self.manifest["pos_weight"])

    def split(self, name: str) -> SampleBatch:
        return self.load_batch(name, np.arange(len(self.split_index[name])))

    def load_batch(self, split: str, indices) -> SampleBatch:
        if split not in self.split_index:
            raise KeyError(f"unknown split {split!r}")
        idx = np.asarray(indices, dtype=int)
        members = self.split_index[split]
        if idx.size and (idx.min() < 0 or idx.max() >= members.size):
            raise IndexError(f"indices out of range for split {split!r} of size {members.size}")
        rows = members[idx]
        return SampleBatch(*(self.arrays[k][rows] for k in TENSOR_FILES))


def load_batch(manifest_dir, split: str, indices) -> SampleBatch:
    return Dataset(manifest_dir).load_batch(split, indices)
