"""Dataset ingestion and preprocessing to [-1,1] tensors, flip augmentation,
synthetic toy datasets, and the seeded batch iterator."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)


class DatasetError(Exception):
    pass


@dataclass
class DatasetHandle:
    items: torch.Tensor  # (n, channels, R, R), values in [-1, 1]
    resolution: int
    source: str

    def __len__(self):
        return self.items.shape[0]


def _to_tensor(img: Image.Image, resolution: int, channels: int) -> torch.Tensor:
    img = img.convert("L" if channels == 1 else "RGB")
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    img = img.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float64) / 127.5 - 1.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr)


def load_dataset(directory: str | Path, resolution: int, channels: int = 1) -> DatasetHandle:
    """Load PNG/JPEG files: center-crop to square, resize, map [0,255] -> [-1,1].

    Undecodable files are skipped with a logged warning count.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IOError(f"not a readable directory: {directory}")
    items, skipped = [], 0
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        try:
            with Image.open(path) as img:
                items.append(_to_tensor(img, resolution, channels))
        except Exception:
            skipped += 1
    if skipped:
        log.warning("skipped %d undecodable files in %s", skipped, directory)
    if not items:
        raise DatasetError(f"no decodable images in {directory}")
    return DatasetHandle(items=torch.stack(items), resolution=resolution,
                         source=str(directory))


def augment(x: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Horizontal flip with probability 0.5."""
    if rng.random() < 0.5:
        return x.flip(-1)
    return x


def synth_toy_dataset(name: str, n: int, resolution: int, seed: int) -> DatasetHandle:
    """Deterministic synthetic images: 'gaussians', 'rings', or 'bars'."""
    if n < 1 or resolution < 8:
        raise ValueError("need n >= 1 and resolution >= 8")
    if name not in ("gaussians", "rings", "bars"):
        raise ValueError(f"unknown toy dataset {name!r}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:resolution, 0:resolution] / (resolution - 1)
    items = []
    for _ in range(n):
        if name == "gaussians":
            cx, cy = rng.uniform(0.25, 0.75, 2)
            sx, sy = rng.uniform(0.05, 0.2, 2)
            img = np.exp(-((xx - cx) ** 2 / (2 * sx ** 2) + (yy - cy) ** 2 / (2 * sy ** 2)))
        elif name == "rings":
            cx, cy = rng.uniform(0.35, 0.65, 2)
            r = rng.uniform(0.15, 0.3)
            width = rng.uniform(0.03, 0.08)
            d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
            img = np.exp(-((d - r) ** 2) / (2 * width ** 2))
        else:  # bars
            img = np.zeros_like(xx)
            for _ in range(rng.integers(1, 4)):
                pos = rng.uniform(0.1, 0.9)
                width = rng.uniform(0.03, 0.15)
                if rng.random() < 0.5:
                    img = np.maximum(img, (np.abs(xx - pos) < width).astype(float))
                else:
                    img = np.maximum(img, (np.abs(yy - pos) < width).astype(float))
        items.append(torch.from_numpy(2.0 * img - 1.0)[None])
    return DatasetHandle(items=torch.stack(items).clamp(-1, 1), resolution=resolution,
                         source=f"synthetic:{name}:{seed}")


def batch_iter(ds: DatasetHandle, batch_size: int, shuffle_seed: int,
               augment_seed: int | None = None, epochs: int | None = None):
    """Yield batches over seeded shuffles; partial final batches are dropped."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > len(ds):
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {len(ds)}")
    shuffle_rng = np.random.default_rng(shuffle_seed)
    aug_rng = np.random.default_rng(augment_seed) if augment_seed is not None else None
    epoch = 0
    while epochs is None or epoch < epochs:
        order = shuffle_rng.permutation(len(ds))
        for start in range(0, len(ds) - batch_size + 1, batch_size):
            idx = order[start:start + batch_size]
            batch = ds.items[idx]
            if aug_rng is not None:
                batch = torch.stack([augment(item, aug_rng) for item in batch])
            yield batch
        epoch += 1
