"""Per-modality 3D encoders, the segmentation decoder and checkpoint archives."""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .data_synth import ModalityMask

N_CLASSES = 4
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass
class NetConfig:
    """Architecture knobs shared by teachers and students.

    ``downsample_factor`` must be a power of two; each factor of two adds one
    strided encoder stage and one upsampling decoder stage.
    """

    latent_channels: int = 16
    base_channels: int = 8
    downsample_factor: int = 4
    norm: str = "instance"
    gaussian_heads: bool = False
    sample_latent: bool = False
    fusion: str = "mean"

    def validate(self) -> None:
        f = self.downsample_factor
        if f < 1 or f & (f - 1):
            raise ValueError(f"downsample_factor must be a power of two, got {f}")
        if self.norm not in ("instance", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.fusion not in ("mean", "concat"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.latent_channels < 1 or self.base_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def stages(self) -> int:
        return int(math.log2(self.downsample_factor))


@dataclass
class LatentFeatures:
    """Latent map ``(B, C, D', H', W')`` of one modality.

    ``gaussian_stats`` holds ``(mean, log_variance)`` when the encoder has
    Gaussian heads; ``values`` is then the mean map (or a sample of it).
    """

    values: torch.Tensor
    modality: int
    gaussian_stats: Optional[tuple[torch.Tensor, torch.Tensor]] = None

    @property
    def shape(self):
        return tuple(self.values.shape)


def _block(cin, cout, stride, norm):
    layers = [nn.Conv3d(cin, cout, 3, stride=stride, padding=1)]
    if norm == "instance":
        layers.append(nn.InstanceNorm3d(cout, affine=True))
    layers.append(nn.LeakyReLU(0.01))
    return layers


class Encoder(nn.Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        c = config.base_channels
        layers = _block(1, c, 1, config.norm)
        for _ in range(config.stages):
            layers += _block(c, 2 * c, 2, config.norm)
            c *= 2
        self.body = nn.Sequential(*layers)
        out = config.latent_channels * (2 if config.gaussian_heads else 1)
        self.head = nn.Conv3d(c, out, 1)

    def forward(self, x):
        return self.head(self.body(x))


class Predictor(nn.Module):
    """Decoder from a latent map to per-voxel class logits at input resolution."""

    def __init__(self, config: NetConfig, in_channels: Optional[int] = None):
        super().__init__()
        c = config.base_channels * 2 ** config.stages
        layers = _block(in_channels or config.latent_channels, c, 1, config.norm)
        for _ in range(config.stages):
            layers.append(nn.Upsample(scale_factor=2, mode="trilinear", align_corners=False))
            layers += _block(c, c // 2, 1, config.norm)
            c //= 2
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv3d(c, N_CLASSES, 1)

    def forward(self, z):
        return self.head(self.body(z))


class SegmentationModel(nn.Module):
    """Encoders for a set of modalities plus one shared predictor.

    A teacher holds an encoder for every modality; a student only for the
    modalities of its mask. Encoders are keyed by the global modality index.
    """

    def __init__(self, config: NetConfig, modalities: Sequence[int], n_modalities: int):
        super().__init__()
        config.validate()
        self.config = config
        self.n_modalities = n_modalities
        self.modalities = tuple(sorted(modalities))
        if any(not 0 <= j < n_modalities for j in self.modalities):
            raise ValueError(f"modalities {self.modalities} outside [0, {n_modalities})")
        self.encoders = nn.ModuleDict({str(j): Encoder(config) for j in self.modalities})
        in_ch = config.latent_channels * (n_modalities if config.fusion == "concat" else 1)
        self.predictor = Predictor(config, in_ch)

    def encode(self, volume: torch.Tensor, modality: int, generator: Optional[torch.Generator] = None) -> LatentFeatures:
        """Encode ``(B, D, H, W)`` or ``(B, 1, D, H, W)`` volumes of one modality."""
        return encode(self, volume, modality, generator)

    def predict_logits(self, latent) -> torch.Tensor:
        if isinstance(latent, LatentFeatures):
            z = latent.values
            if self.config.fusion == "concat":
                z = fuse_latents([latent], ModalityMask((latent.modality,), self.n_modalities), "concat")
        else:
            z = latent
        expected = self.predictor.body[0].in_channels
        if z.ndim != 5 or z.shape[1] != expected:
            raise ValueError(f"latent of shape {tuple(z.shape)} does not match predictor input ({expected} channels)")
        return self.predictor(z)

    def forward(self, volumes: torch.Tensor, mask: Optional[ModalityMask] = None) -> torch.Tensor:
        """Fused logits from ``(B, J, D, H, W)`` volumes for the modalities in ``mask``."""
        mask = mask or ModalityMask(self.modalities, self.n_modalities)
        latents = [self.encode(volumes[:, j], j) for j in mask.present]
        return self.predict_logits(fuse_latents(latents, mask, self.config.fusion))


def encode(model: SegmentationModel, volume: torch.Tensor, modality: int, generator=None) -> LatentFeatures:
    if str(modality) not in model.encoders:
        raise ValueError(f"model has no encoder for modality {modality}")
    x = volume if volume.ndim == 5 else volume.unsqueeze(1)
    f = model.config.downsample_factor
    if any(s % f for s in x.shape[2:]):
        raise ValueError(f"spatial shape {tuple(x.shape[2:])} not divisible by downsample factor {f}")
    out = model.encoders[str(modality)](x)
    if not model.config.gaussian_heads:
        return LatentFeatures(out, modality)
    mean, logvar = out.chunk(2, dim=1)
    values = mean
    if model.config.sample_latent and model.training:
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
        values = mean + torch.exp(0.5 * logvar) * eps
    return LatentFeatures(values, modality, (mean, logvar))


def predict_segmentation(model: SegmentationModel, latent) -> torch.Tensor:
    """Per-voxel class probabilities ``(B, 4, D, H, W)``."""
    return torch.softmax(model.predict_logits(latent), dim=1)


def fuse_latents(latents: Sequence[LatentFeatures], mask: ModalityMask, mode: str = "mean") -> torch.Tensor:
    """Mean of present-modality latents, or zero-filled channel concatenation."""
    if mask is None or len(mask) == 0:
        raise ValueError("cannot fuse with an empty modality mask")
    by_mod = {lf.modality: lf.values for lf in latents}
    missing = [j for j in mask.present if j not in by_mod]
    if missing:
        raise ValueError(f"no latent supplied for present modalities {missing}")
    present = [by_mod[j] for j in mask.present]
    shape = present[0].shape
    if any(v.shape != shape for v in present):
        raise ValueError("latents must share one shape")
    if mode == "mean":
        return torch.stack(present, 0).mean(0)
    if mode == "concat":
        zero = torch.zeros_like(present[0])
        return torch.cat([by_mod[j] if j in mask.present else zero for j in range(mask.n_modalities)], 1)
    raise ValueError(f"unknown fusion mode {mode!r}")


# --- checkpoints --------------------------------------------------------------


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, tensors: dict[str, torch.Tensor | np.ndarray], meta: dict) -> None:
    """Write a zip of ``.npy`` tensors plus ``meta.json``; output bytes are deterministic."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _zip_write(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in sorted(tensors):
            arr = tensors[name]
            if isinstance(arr, torch.Tensor):
                arr = arr.detach().cpu().numpy()
            npy = io.BytesIO()
            np.save(npy, np.ascontiguousarray(arr), allow_pickle=False)
            _zip_write(zf, f"tensors/{name}.npy", npy.getvalue())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    tensors = {}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        for name in zf.namelist():
            if name.startswith("tensors/"):
                tensors[name[len("tensors/"): -len(".npy")]] = np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
    return tensors, meta


def model_tensors(model: nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + k: v for k, v in model.state_dict().items()}


def load_model_tensors(model: nn.Module, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    state = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in tensors.items() if k.startswith(prefix)}
    model.load_state_dict(state)


def net_config_from_meta(meta: dict) -> NetConfig:
    return NetConfig(**meta["net"])


def net_meta(config: NetConfig) -> dict:
    return asdict(config)
