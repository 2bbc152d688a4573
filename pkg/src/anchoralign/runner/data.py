"""Dataset assembly and batching for the training loops."""

from __future__ import annotations

import json
from dataclasses import asdict
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from ..data_synth import (
    MultiModalSample,
    load_directory,
    normalize_sample,
    random_crop,
    save_sample,
    synthetic_dataset,
)
from .config import DatasetConfig, TrainConfig, from_dict, seed_for


@lru_cache(maxsize=8)
def _cached(dataset_json: str, n_modalities: int):
    ds = from_dict(DatasetConfig, json.loads(dataset_json))
    if ds.kind == "synthetic":
        train = synthetic_dataset(ds.phantom, ds.n_train, seed_offset=0, prefix="train")
        test = synthetic_dataset(ds.phantom, ds.n_test, seed_offset=1, prefix="test")
    else:
        if not ds.train_dir or not ds.test_dir:
            raise ValueError("directory datasets need train_dir and test_dir")
        train = load_directory(ds.train_dir, n_modalities)
        test = load_directory(ds.test_dir, n_modalities)
    return tuple(normalize_sample(s) for s in train), tuple(normalize_sample(s) for s in test)


def load_dataset(config: TrainConfig) -> tuple[list[MultiModalSample], list[MultiModalSample]]:
    """Normalized (train, test) samples; synthetic sets are cached per dataset config."""
    key = json.dumps(asdict(config.dataset), sort_keys=True)
    train, test = _cached(key, config.n_modalities)
    return list(train), list(test)


def write_dataset(config: TrainConfig, out_dir) -> tuple[Path, Path]:
    """Generate the synthetic split and store it in the ingestion layout (raw intensities)."""
    if config.dataset.kind != "synthetic":
        raise ValueError("gen-data only generates synthetic datasets")
    out = Path(out_dir)
    ds = config.dataset
    for split, n, offset in (("train", ds.n_train, 0), ("test", ds.n_test, 1)):
        for s in synthetic_dataset(ds.phantom, n, seed_offset=offset, prefix=split):
            save_sample(out / split, s)
    return out / "train", out / "test"


def to_tensors(samples) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.stack([s.stacked() for s in samples]).astype(np.float32))
    y = torch.from_numpy(np.stack([s.labels for s in samples]).astype(np.int64))
    return x, y


def epoch_batches(config: TrainConfig, samples, epoch: int, stream: str, batch_size: int):
    """Shuffled, randomly cropped batches for one epoch."""
    order = np.random.default_rng(seed_for(config, stream + ":shuffle", epoch)).permutation(len(samples))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        crops = [
            random_crop(samples[i], config.crop, seed_for(config, stream + ":crop", epoch, int(i)))
            for i in idx
        ]
        yield to_tensors(crops)
