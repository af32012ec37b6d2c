"""Training loop, run configuration, and image emission shared by the CLI and
the estimator facade."""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ckpt
from .data import DatasetHandle, batch_iter, load_dataset, synth_toy_dataset
from .diffusion import SamplerConfig, loss_simple, make_schedule, sample
from .network import ModelConfig, UNet


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: str = "synthetic:rings:16:0"
    resolution: int = 32
    channels: int = 1
    base_width: int = 32
    channel_multipliers: tuple = (1, 2, 4, 8)
    state_dim: int = 8
    ssm_expand: int = 2
    layers_per_stage: int = 2
    time_embed_dim: int = 64
    stem_downsample: bool = True
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sampler: str = "ddpm"
    ddim_steps: int = 50
    eta: float = 0.0
    variance_mode: str = "fixed_beta"
    lr: float = 1e-4
    batch_size: int = 16
    total_steps: int = 3000
    seed: int = 0
    regen: bool = True
    dtype: str = "float32"
    log_every: int = 10
    checkpoint_every: int = 1000
    out_dir: str = "runs/default"
    force: bool = False

    def torch_dtype(self):
        try:
            return {"float32": torch.float32, "float64": torch.float64}[self.dtype]
        except KeyError:
            raise ConfigError(f"unknown dtype {self.dtype!r}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            in_channels=self.channels, base_width=self.base_width,
            channel_multipliers=tuple(self.channel_multipliers),
            layers_per_stage=self.layers_per_stage,
            state_dim=self.state_dim, ssm_expand=self.ssm_expand,
            time_embed_dim=self.time_embed_dim,
            stem_downsample=self.stem_downsample, resolution=self.resolution)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(kind=self.sampler, ddim_steps=self.ddim_steps,
                             eta=self.eta, variance_mode=self.variance_mode)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channel_multipliers"] = list(d["channel_multipliers"])
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = RunConfig(**d)
        if isinstance(cfg.channel_multipliers, list):
            cfg.channel_multipliers = tuple(cfg.channel_multipliers)
        return cfg


def parse_config_file(path: str | Path) -> dict:
    """Flat key=value config file; '#' starts a comment."""
    values = {}
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line: {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(raw, fields[key].type, key)
    return values


def _coerce(raw: str, ftype: str, key: str):
    if ftype == "bool":
        if raw.lower() in ("true", "on", "1", "yes"):
            return True
        if raw.lower() in ("false", "off", "0", "no"):
            return False
        raise ConfigError(f"bad boolean for {key!r}: {raw!r}")
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    if ftype == "tuple":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return raw


def resolve_dataset(spec: str, resolution: int, channels: int) -> DatasetHandle:
    if spec.startswith("synthetic:"):
        parts = spec.split(":")
        if len(parts) != 4:
            raise ConfigError(f"synthetic spec must be synthetic:<name>:<n>:<seed>, got {spec!r}")
        _, name, n, seed = parts
        return synth_toy_dataset(name, int(n), resolution, int(seed))
    return load_dataset(spec, resolution, channels)


def to_png_array(images: torch.Tensor) -> np.ndarray:
    """Map [-1,1] image tensors to uint8 via round((x+1)*127.5)."""
    arr = ((images.detach().cpu().numpy() + 1.0) * 127.5).round()
    return np.clip(arr, 0, 255).astype(np.uint8)


def save_png(image: torch.Tensor, path: str | Path) -> None:
    arr = to_png_array(image)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def save_grid(images: torch.Tensor, path: str | Path) -> None:
    """Tile a batch into a ceil-square grid PNG."""
    n, c, h, w = images.shape
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    grid = torch.full((c, rows * h, cols * w), -1.0, dtype=images.dtype)
    for i in range(n):
        r, col = divmod(i, cols)
        grid[:, r * h:(r + 1) * h, col * w:(col + 1) * w] = images[i]
    save_png(grid, path)


class Trainer:
    """Owns the model, optimizer, schedule, and rng for one training run."""

    def __init__(self, config: RunConfig, dataset: DatasetHandle | None = None):
        self.config = config
        self.dtype = config.torch_dtype()
        torch.manual_seed(config.seed)  # weight init draws from the global rng
        self.model = UNet(config.model_config()).to(self.dtype)
        self.schedule = make_schedule(config.T, config.beta_start, config.beta_end)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.lr,
                                          betas=(0.9, 0.999))
        self.generator = torch.Generator().manual_seed(config.seed)
        self.dataset = dataset if dataset is not None else resolve_dataset(
            config.dataset, config.resolution, config.channels)
        self.step = 0

    def denoiser(self, regen: bool | None = None, generator: torch.Generator | None = None):
        regen = self.config.regen if regen is None else regen
        gen = self.generator if generator is None else generator

        def model_fn(x_t, t):
            return self.model(x_t, t, regen=regen, generator=gen)

        return model_fn

    def _batches(self):
        return batch_iter(self.dataset, self.config.batch_size,
                          shuffle_seed=self.config.seed + 1,
                          augment_seed=self.config.seed + 2)

    def train_step(self, batch: torch.Tensor) -> float:
        cfg = self.config
        x0 = batch.to(self.dtype)
        t = torch.randint(1, cfg.T + 1, (x0.shape[0],), generator=self.generator)
        eps = torch.randn(x0.shape, generator=self.generator, dtype=self.dtype)
        loss = loss_simple(self.denoiser(), x0, t, eps, self.schedule)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.step += 1
        return float(loss.detach())

    def save(self, path: str | Path) -> None:
        arrays, meta = ckpt.pack_state(self.model, self.optimizer, self.generator,
                                       self.step, self.config.to_dict())
        ckpt.save_checkpoint(path, arrays, meta)

    def load(self, path: str | Path) -> None:
        arrays, meta = ckpt.load_checkpoint(path)
        self.step = ckpt.unpack_state(arrays, meta, self.model, self.optimizer,
                                      self.generator)

    def sample_images(self, n: int, seed: int, sampler: SamplerConfig | None = None,
                      regen: bool | None = None) -> torch.Tensor:
        sampler = self.config.sampler_config() if sampler is None else sampler
        gen = torch.Generator().manual_seed(seed)
        shape = (self.config.channels, self.config.resolution, self.config.resolution)
        with torch.no_grad():
            return sample(self.denoiser(regen=regen, generator=gen), n, sampler,
                          self.schedule, shape, generator=gen, dtype=self.dtype)

    @staticmethod
    def from_checkpoint(path: str | Path) -> "Trainer":
        arrays, meta = ckpt.load_checkpoint(path)
        trainer = Trainer(RunConfig.from_dict(meta["config"]))
        trainer.step = ckpt.unpack_state(arrays, meta, trainer.model, trainer.optimizer,
                                         trainer.generator)
        return trainer


def run_training(config: RunConfig, resume_from: str | Path | None = None) -> dict:
    """Full training run with logging, checkpoints, and sample grids.

    Returns a summary dict with loss statistics and the final checkpoint path.
    """
    out = Path(config.out_dir)
    manifest = out / "manifest.json"
    if manifest.exists() and not config.force and resume_from is None:
        raise ConfigError(f"output directory {out} already holds a run; use force to overwrite")
    out.mkdir(parents=True, exist_ok=True)

    trainer = Trainer(config)
    if resume_from is not None:
        trainer.load(resume_from)
    manifest.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))

    mode = "a" if resume_from is not None else "w"
    loss_log = open(out / "loss.csv", mode)
    timing_log = open(out / "train_log.csv", mode)
    losses: list[float] = []
    batches = trainer._batches()
    for _ in range(trainer.step):  # fast-forward the data stream on resume
        next(batches)

    def write_ckpt(tag):
        trainer.save(out / f"checkpoint_{tag}.ckpt")
        grid_n = min(16, len(trainer.dataset))
        grid = trainer.sample_images(
            grid_n, seed=config.seed + 10_000 + trainer.step,
            sampler=SamplerConfig(kind="ddim", ddim_steps=min(25, config.T), eta=0.0))
        save_grid(grid, out / f"samples_{tag}.png")

    try:
        if config.total_steps == 0:
            write_ckpt("final")
        while trainer.step < config.total_steps:
            loss = trainer.train_step(next(batches))
            losses.append(loss)
            if trainer.step % config.log_every == 0 or trainer.step == config.total_steps:
                loss_log.write(f"{trainer.step},{loss!r}\n")
                timing_log.write(f"{trainer.step},{time.time()!r},{loss!r}\n")
                loss_log.flush()
            if trainer.step % config.checkpoint_every == 0 and trainer.step < config.total_steps:
                write_ckpt(f"{trainer.step:07d}")
        if config.total_steps > 0:
            write_ckpt("final")
    except OSError:
        trainer.save(out / "checkpoint_abort.ckpt")
        raise
    finally:
        loss_log.close()
        timing_log.close()

    k = min(100, max(len(losses), 1))
    summary = {
        "steps": trainer.step,
        "initial_loss_mean": float(np.mean(losses[:k])) if losses else None,
        "final_loss_mean": float(np.mean(losses[-k:])) if losses else None,
        "checkpoint": str(out / "checkpoint_final.ckpt"),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
