"""Synthetic multi-modal phantoms, preprocessing and the ``.vol`` file format.

Phantoms are built from one shared tissue map. Each modality is a strictly
monotone logistic transform of that map plus Gaussian noise, so with zero
noise every modality carries the same information; the noise level relative
to each transform's contrast is what makes one modality more informative.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MODALITY_NAMES = ("flair", "t1", "t1ce", "t2")

BACKGROUND, EDEMA, CORE, ENHANCING = 0, 1, 2, 3

# tissue-map levels
AIR_LEVEL = 0.0
BRAIN_LEVEL = 0.30
EDEMA_LEVEL = 0.50
CORE_LEVEL = 0.65
ENHANCING_LEVEL = 0.85

HEADER_SIZE = 32
MAGIC = "MMV1"


class PhantomError(ValueError):
    """Raised when a phantom configuration cannot produce a valid sample."""


@dataclass
class MultiModalSample:
    volumes: list[np.ndarray]
    labels: np.ndarray
    sample_id: str = "sample"

    def __post_init__(self):
        if not self.volumes:
            raise ValueError("a sample needs at least one modality volume")
        shape = self.labels.shape
        for j, v in enumerate(self.volumes):
            if v.shape != shape:
                raise ValueError(f"modality {j} has shape {v.shape}, labels have {shape}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.labels.shape)

    @property
    def n_modalities(self) -> int:
        return len(self.volumes)

    def stacked(self) -> np.ndarray:
        return np.stack(self.volumes, axis=0)


@dataclass
class PhantomConfig:
    """Parameters of the synthetic phantom generator.

    ``tumor_radius_range`` bounds the whole-tumor semi-axis in voxels; the
    tumor core and enhancing core are scaled copies of it.
    """

    shape: tuple[int, int, int] = (32, 32, 32)
    n_modalities: int = 4
    informative_modality: int = 2
    noise_std: float = 0.05
    tumor_radius_range: tuple[float, float] = (5.0, 9.0)
    seed: int = 0
    core_fraction: float = 0.65
    enhancing_fraction: float = 0.4
    texture_amplitude: float = 0.04

    def validate(self) -> None:
        if len(self.shape) != 3 or any(int(s) < 1 for s in self.shape):
            raise PhantomError(f"shape must be three positive ints, got {self.shape}")
        if self.n_modalities < 1:
            raise PhantomError("n_modalities must be >= 1")
        if not 0 <= self.informative_modality < self.n_modalities:
            raise PhantomError(
                f"informative_modality {self.informative_modality} outside [0, {self.n_modalities})"
            )
        if self.noise_std < 0:
            raise PhantomError("noise_std must be nonnegative")
        lo, hi = self.tumor_radius_range
        if lo <= 0 or lo > hi:
            raise PhantomError(f"invalid tumor_radius_range {self.tumor_radius_range}")
        if not 0 < self.enhancing_fraction < self.core_fraction < 1:
            raise PhantomError("need 0 < enhancing_fraction < core_fraction < 1")
        if lo > max_tumor_radius(self.shape):
            raise PhantomError(
                f"shape {tuple(self.shape)} cannot hold a tumor of radius {lo} "
                f"(largest fitting radius is {max_tumor_radius(self.shape)})"
            )


def max_tumor_radius(shape: Sequence[int]) -> float:
    # tumor must sit inside the brain ellipsoid, which spans 0.9 of each half-axis
    return 0.9 * min(shape) / 2.0 - 1.5


@dataclass(frozen=True)
class ModalityTransform:
    """Scaled logistic ``amplitude * sigmoid(sign * slope * (s - center))``."""

    center: float
    slope: float
    amplitude: float
    sign: float = 1.0
    offset: float = field(default=0.0)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return self.offset + self.amplitude / (1.0 + np.exp(-self.sign * self.slope * (s - self.center)))

    def inverse(self, v: np.ndarray) -> np.ndarray:
        u = (np.asarray(v, dtype=np.float64) - self.offset) / self.amplitude
        return self.center + np.log(u / (1.0 - u)) / (self.sign * self.slope)


# Non-informative transforms: reveal edema and core but flatten the core/enhancing step.
_WEAK_TRANSFORMS = (
    ModalityTransform(center=0.42, slope=9.0, amplitude=0.6, offset=0.1),
    ModalityTransform(center=0.40, slope=7.0, amplitude=0.6, sign=-1.0, offset=0.2),
    ModalityTransform(center=0.55, slope=6.0, amplitude=0.6, offset=0.15),
)
_INFORMATIVE_TRANSFORM = ModalityTransform(center=0.72, slope=10.0, amplitude=1.0)


def modality_transforms(config: PhantomConfig) -> list[ModalityTransform]:
    out = []
    weak = itertools.cycle(_WEAK_TRANSFORMS)
    for j in range(config.n_modalities):
        out.append(_INFORMATIVE_TRANSFORM if j == config.informative_modality else next(weak))
    return out


def class3_contrast(transform: ModalityTransform) -> float:
    return float(abs(transform(np.float64(ENHANCING_LEVEL)) - transform(np.float64(BRAIN_LEVEL))))


def _smooth_field(rng: np.random.Generator, shape, n_waves: int = 6) -> np.ndarray:
    grids = np.meshgrid(*[np.linspace(0.0, 1.0, s) for s in shape], indexing="ij")
    out = np.zeros(shape)
    for _ in range(n_waves):
        freq = rng.uniform(0.5, 2.5, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * sum(f * g for f, g in zip(freq, grids)) + phase)
    return out / np.sqrt(n_waves)


def _ellipsoid_radius(grids, center, axes, rotation) -> np.ndarray:
    coords = np.stack([g - c for g, c in zip(grids, center)], axis=-1) @ rotation
    return np.sqrt(sum((coords[..., i] / axes[i]) ** 2 for i in range(3)))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


def tissue_map(config: PhantomConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return the shared tissue map in [0, 1] and the class-label volume."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    shape = tuple(int(s) for s in config.shape)
    grids = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij")
    mid = [(s - 1) / 2.0 for s in shape]

    brain_axes = [0.9 * s / 2.0 for s in shape]
    brain = _ellipsoid_radius(grids, mid, brain_axes, np.eye(3)) <= 1.0

    lo, hi = config.tumor_radius_range
    hi = min(hi, max_tumor_radius(shape))
    radius = rng.uniform(lo, hi)
    axes = radius * rng.uniform(0.8, 1.0, size=3)
    rotation = _random_rotation(rng)
    # keep the whole tumor inside the brain ellipsoid
    slack = np.array([b - radius - 1.0 for b in brain_axes]) * 0.5
    center = [m + rng.uniform(-max(s, 0.0), max(s, 0.0)) for m, s in zip(mid, slack)]
    rho = _ellipsoid_radius(grids, center, axes, rotation)

    labels = np.zeros(shape, dtype=np.uint8)
    labels[rho <= 1.0] = EDEMA
    labels[rho <= config.core_fraction] = CORE
    labels[rho <= config.enhancing_fraction] = ENHANCING
    labels[~brain] = BACKGROUND

    levels = np.array([BRAIN_LEVEL, EDEMA_LEVEL, CORE_LEVEL, ENHANCING_LEVEL])
    tissue = levels[labels] + config.texture_amplitude * _smooth_field(rng, shape)
    tissue[~brain] = AIR_LEVEL
    tissue = np.clip(tissue, 0.0, 1.0)
    return tissue, labels


def generate_phantom(config: PhantomConfig, sample_id: Optional[str] = None) -> MultiModalSample:
    """Deterministic synthetic sample: one volume per modality plus labels.

    Volumes are raw (unnormalized) float32 intensities; run
    :func:`normalize_intensity` before feeding a network.
    """
    tissue, labels = tissue_map(config)
    noise_rng = np.random.default_rng([config.seed, 1])
    volumes = []
    for transform in modality_transforms(config):
        v = transform(tissue)
        if config.noise_std > 0:
            v = v + noise_rng.normal(0.0, config.noise_std, size=v.shape)
        volumes.append(v.astype(np.float32))
    return MultiModalSample(volumes=volumes, labels=labels, sample_id=sample_id or f"phantom{config.seed}")


def normalize_intensity(volume: np.ndarray) -> np.ndarray:
    """Affine map of ``[min, max]`` onto ``[-1, 1]``; constant volumes map to zeros."""
    v = np.asarray(volume)
    if not np.all(np.isfinite(v)):
        raise ValueError("volume contains NaN or Inf")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    out = 2.0 * (v - lo) / (hi - lo) - 1.0
    return np.clip(out, -1.0, 1.0).astype(v.dtype, copy=False)


def normalize_sample(sample: MultiModalSample) -> MultiModalSample:
    return MultiModalSample([normalize_intensity(v) for v in sample.volumes], sample.labels, sample.sample_id)


def crop_offset(shape: Sequence[int], crop: Sequence[int], seed) -> tuple[int, int, int]:
    if len(crop) != 3 or any(c < 1 or c > s for c, s in zip(crop, shape)):
        raise ValueError(f"crop {tuple(crop)} does not fit volume of shape {tuple(shape)}")
    rng = np.random.default_rng(seed)
    return tuple(int(rng.integers(0, s - c + 1)) for s, c in zip(shape, crop))


def random_crop(sample: MultiModalSample, crop: Sequence[int], seed) -> MultiModalSample:
    """Crop every modality and the labels at one offset drawn uniformly from ``seed``."""
    off = crop_offset(sample.shape, crop, seed)
    sl = tuple(slice(o, o + c) for o, c in zip(off, crop))
    return MultiModalSample([v[sl] for v in sample.volumes], sample.labels[sl], sample.sample_id)


@dataclass(frozen=True)
class ModalityMask:
    """Sorted tuple of present modality indices out of ``n_modalities``."""

    present: tuple[int, ...]
    n_modalities: int

    def __post_init__(self):
        if not self.present:
            raise ValueError("a modality mask needs at least one present modality")
        if len(set(self.present)) != len(self.present):
            raise ValueError(f"duplicate modality in mask {self.present}")
        bad = [j for j in self.present if not 0 <= j < self.n_modalities]
        if bad:
            raise ValueError(f"modalities {bad} outside [0, {self.n_modalities})")
        object.__setattr__(self, "present", tuple(sorted(self.present)))

    @property
    def code(self) -> str:
        """``o`` for present, ``x`` for missing, in modality index order."""
        return "".join("o" if j in self.present else "x" for j in range(self.n_modalities))

    @classmethod
    def from_code(cls, code: str) -> "ModalityMask":
        if not code or set(code) - {"o", "x"}:
            raise ValueError(f"mask code must use only 'o'/'x', got {code!r}")
        return cls(tuple(i for i, c in enumerate(code) if c == "o"), len(code))

    @classmethod
    def full(cls, n_modalities: int) -> "ModalityMask":
        return cls(tuple(range(n_modalities)), n_modalities)

    def __contains__(self, j) -> bool:
        return j in self.present

    def __len__(self) -> int:
        return len(self.present)

    def __str__(self) -> str:
        return self.code


def enumerate_modality_masks(n_modalities: int) -> list[ModalityMask]:
    """All non-empty subsets, ordered by size then lexicographically."""
    if n_modalities < 1:
        raise ValueError("need at least one modality")
    return [
        ModalityMask(c, n_modalities)
        for r in range(1, n_modalities + 1)
        for c in itertools.combinations(range(n_modalities), r)
    ]


# --- .vol file format -------------------------------------------------------


def _header(shape, n_channels: int) -> bytes:
    text = f"{MAGIC} {shape[0]} {shape[1]} {shape[2]} {n_channels}"
    if len(text) > HEADER_SIZE - 1:
        raise ValueError(f"volume dimensions too large for header: {text}")
    return (text.ljust(HEADER_SIZE - 1) + "\n").encode("ascii")


def _parse_header(raw: bytes) -> tuple[tuple[int, int, int], int]:
    m = re.fullmatch(rb"MMV1 (\d+) (\d+) (\d+) (\d+) *\n", raw)
    if m is None:
        raise ValueError(f"not an MMV1 volume header: {raw!r}")
    d, h, w, j = (int(g) for g in m.groups())
    return (d, h, w), j


def write_volume(path, volume: np.ndarray) -> None:
    """Write ``(D,H,W)`` or ``(J,D,H,W)`` float32 voxels, little-endian."""
    arr = np.asarray(volume)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected a 3D or 4D array, got shape {arr.shape}")
    data = arr.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(_header(arr.shape[1:], arr.shape[0]) + data)


def write_labels(path, labels: np.ndarray) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 3:
        raise ValueError(f"labels must be 3D, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("labels must fit in uint8")
    Path(path).write_bytes(_header(arr.shape, 1) + arr.astype(np.uint8).tobytes(order="C"))


def _read(path, itemsize: int, dtype) -> np.ndarray:
    raw = Path(path).read_bytes()
    shape, j = _parse_header(raw[:HEADER_SIZE])
    n = j * shape[0] * shape[1] * shape[2]
    if len(raw) != HEADER_SIZE + n * itemsize:
        raise ValueError(f"{path}: payload size {len(raw) - HEADER_SIZE} does not match header")
    return np.frombuffer(raw, dtype=dtype, offset=HEADER_SIZE).reshape((j,) + shape).copy()


def read_volume(path) -> np.ndarray:
    """Read float32 voxels; single-channel files come back as ``(D,H,W)``."""
    arr = _read(path, 4, "<f4").astype(np.float32)
    return arr[0] if arr.shape[0] == 1 else arr


def read_labels(path) -> np.ndarray:
    return _read(path, 1, np.uint8)[0]


def save_sample(directory, sample: MultiModalSample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for j, v in enumerate(sample.volumes):
        write_volume(d / f"{sample.sample_id}_mod{j}.vol", v)
    write_labels(d / f"{sample.sample_id}_label.vol", sample.labels)


def load_directory(directory, n_modalities: Optional[int] = None) -> list[MultiModalSample]:
    """Ingest ``<id>_mod<j>.vol`` / ``<id>_label.vol`` files, sorted by id."""
    d = Path(directory)
    ids = sorted(p.name[: -len("_label.vol")] for p in d.glob("*_label.vol"))
    if not ids:
        raise FileNotFoundError(f"no '*_label.vol' files in {d}")
    samples = []
    for sid in ids:
        mods = sorted(d.glob(f"{sid}_mod*.vol"), key=lambda p: int(p.stem.rsplit("_mod", 1)[1]))
        if n_modalities is not None and len(mods) != n_modalities:
            raise ValueError(f"{sid}: found {len(mods)} modality files, expected {n_modalities}")
        samples.append(MultiModalSample([read_volume(p) for p in mods], read_labels(d / f"{sid}_label.vol"), sid))
    return samples


def synthetic_dataset(
    base: PhantomConfig, n_samples: int, seed_offset: int = 0, prefix: str = "syn"
) -> list[MultiModalSample]:
    """``n_samples`` phantoms whose seeds are derived from ``base.seed``."""
    out = []
    for i in range(n_samples):
        seed = int(np.random.SeedSequence([base.seed, seed_offset, i]).generate_state(1)[0])
        cfg = PhantomConfig(**{**base.__dict__, "seed": seed})
        out.append(generate_phantom(cfg, sample_id=f"{prefix}{seed_offset:02d}_{i:04d}"))
    return out

