"""The denoiser network: sinusoidal time embedding, time-conditioned ResNet blocks,
multi-path state-space blocks, and the encoder-bottleneck-decoder UNet."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .cross_scan import csm_forward
from .ssm import S6Weights


@dataclass
class ModelConfig:
    in_channels: int = 1
    base_width: int = 32
    channel_multipliers: tuple = (1, 2, 4, 8)
    layers_per_stage: int = 2
    state_dim: int = 16
    ssm_expand: int = 2
    time_embed_dim: int = 64
    stem_downsample: bool = True
    resolution: int = 64

    def __post_init__(self):
        stages = len(self.channel_multipliers)
        halvings = stages + (1 if self.stem_downsample else 0)
        if self.resolution % (2 ** halvings) != 0:
            raise ValueError(
                f"resolution {self.resolution} not divisible by 2^{halvings}")
        if self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be even")


def sinusoidal_time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal encoding of timestep t at dim/2 geometric frequencies from 1 to 1e-4."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    t = torch.as_tensor(t)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    if half == 1:
        freqs = torch.ones(1, dtype=t.dtype)
    else:
        freqs = torch.exp(torch.arange(half, dtype=t.dtype)
                          * (-math.log(1e4) / (half - 1)))
    angles = t[..., None] * freqs if t.ndim else t * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class TimeEmbedding(nn.Module):
    """Sinusoidal encoding followed by a two-layer SiLU MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        enc = sinusoidal_time_embedding(t, self.dim)
        return self.mlp(enc.to(self.mlp[0].weight.dtype))


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResnetBlock(nn.Module):
    """norm-SiLU-conv, norm, add projected time embedding, SiLU-conv, input skip.

    The time shift is applied after the second norm; applying it before would
    let per-channel normalization cancel it when each group holds one channel.
    """

    def __init__(self, channels: int, time_dim: int):
        super().__init__()
        self.norm1 = _norm(channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, channels)
        self.norm2 = _norm(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.norm2(h) + self.time_proj(t_emb)[..., :, None, None]
        h = self.conv2(F.silu(h))
        return x + h


class MSSBlock(nn.Module):
    """Four-path fusion of identity, local CNN, global SSM scan, and CNN->SSM features."""

    def __init__(self, channels: int, time_dim: int, state_dim: int, ssm_expand: int = 2):
        super().__init__()
        self.norm = _norm(channels)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.time_conv = nn.Conv2d(time_dim, channels, 1)
        self.s6 = S6Weights(channels, inner_dim=ssm_expand * channels, state_dim=state_dim)

    def _cnn(self, x, t_emb):
        return self.conv(F.silu(self.norm(x))) + self.time_conv(t_emb[..., :, None, None])

    def forward(self, x, t_emb, regen=True, generator=None):
        f = self._cnn(x, t_emb)
        g_x = csm_forward(x, self.s6, regen=regen, generator=generator)
        g_f = csm_forward(f, self.s6, regen=regen, generator=generator)
        return x + f + g_x + g_f


class SSLayer(nn.Module):
    """Residual layer: time-conditioned ResNet block feeding a multi-path SSM block."""

    def __init__(self, channels: int, time_dim: int, state_dim: int, ssm_expand: int = 2):
        super().__init__()
        self.resnet = ResnetBlock(channels, time_dim)
        self.mss = MSSBlock(channels, time_dim, state_dim, ssm_expand)

    def forward(self, x, t_emb, regen=True, generator=None):
        return x + self.mss(self.resnet(x, t_emb), t_emb, regen=regen, generator=generator)


class Downsample(nn.Module):
    """norm + stride-2 conv; the norm keeps activation scale bounded across the
    additive residual stages."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.norm = _norm(in_ch)
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(self.norm(x))


class Upsample(nn.Module):
    """norm + nearest ×2 + conv, avoiding checkerboard artifacts."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.norm = _norm(in_ch)
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(self.norm(x), scale_factor=2, mode="nearest"))


class UNet(nn.Module):
    """Encoder-bottleneck-decoder denoiser predicting the corrupting noise."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        cfg = config
        ch = [cfg.base_width * m for m in cfg.channel_multipliers]
        self.time_embed = TimeEmbedding(cfg.time_embed_dim)
        stem_stride = 2 if cfg.stem_downsample else 1
        self.stem = nn.Conv2d(cfg.in_channels, ch[0], 3, stride=stem_stride, padding=1)

        def stage(c):
            return nn.ModuleList([SSLayer(c, cfg.time_embed_dim, cfg.state_dim,
                                          cfg.ssm_expand)
                                  for _ in range(cfg.layers_per_stage)])

        n = len(ch)
        self.enc_stages = nn.ModuleList(stage(ch[i]) for i in range(n))
        self.downsamples = nn.ModuleList(
            Downsample(ch[i], ch[min(i + 1, n - 1)]) for i in range(n))
        self.bottleneck = SSLayer(ch[-1], cfg.time_embed_dim, cfg.state_dim,
                                  cfg.ssm_expand)
        # decoder stage i consumes the skip recorded after encoder stage i's downsample
        self.skip_fuse = nn.ModuleList(
            nn.Conv2d(ch[i] + ch[min(i + 1, n - 1)], ch[i], 1) for i in range(n))
        self.dec_stages = nn.ModuleList(stage(ch[i]) for i in range(n))
        self.upsamples = nn.ModuleList(
            Upsample(ch[i], ch[max(i - 1, 0)]) for i in range(n))
        self.unstem = Upsample(ch[0], ch[0]) if cfg.stem_downsample else None
        self.out_norm = _norm(ch[0])
        self.out_conv = nn.Conv2d(ch[0], cfg.in_channels, 3, padding=1)
        with torch.no_grad():
            # damp residual-branch outputs so the additive multi-path stack
            # starts near an identity map with a small epsilon prediction
            for mod in self.modules():
                if isinstance(mod, ResnetBlock):
                    mod.conv2.weight.mul_(0.1)
                elif isinstance(mod, MSSBlock):
                    mod.conv.weight.mul_(0.1)
                    mod.s6.out_proj.weight.mul_(0.1)
            self.out_conv.weight.mul_(1e-2)

    def encode(self, x, t_emb, regen=True, generator=None):
        h = self.stem(x)
        skips = []
        for layers, down in zip(self.enc_stages, self.downsamples):
            for layer in layers:
                h = layer(h, t_emb, regen=regen, generator=generator)
            h = down(h)
            skips.append(h)
        return h, skips

    def forward(self, x, t, regen=True, generator=None):
        if x.ndim == 3:
            return self.forward(x[None], t, regen=regen, generator=generator)[0]
        t = torch.as_tensor(t, dtype=x.dtype)
        if t.ndim == 0:
            t = t.expand(x.shape[0]) if x.ndim == 4 else t
        t_emb = self.time_embed(t)
        h, skips = self.encode(x, t_emb, regen=regen, generator=generator)
        h = self.bottleneck(h, t_emb, regen=regen, generator=generator)
        for i in reversed(range(len(self.dec_stages))):
            h = self.skip_fuse[i](torch.cat([h, skips[i]], dim=-3))
            for layer in self.dec_stages[i]:
                h = layer(h, t_emb, regen=regen, generator=generator)
            h = self.upsamples[i](h)
        if self.unstem is not None:
            h = self.unstem(h)
        return self.out_conv(F.silu(self.out_norm(h)))
