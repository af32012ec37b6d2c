"""Four-direction scan expansion/merge between 2-D feature maps and 1-D token sequences,
plus the random sequence-regeneration permutation applied around each scan."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .ssm import S6Weights, s6_forward

# instrumentation for the ablation harness
_perm_draw_count = 0


def perm_draw_count() -> int:
    return _perm_draw_count


def reset_perm_draw_count() -> None:
    global _perm_draw_count
    _perm_draw_count = 0


@dataclass
class Permutation:
    forward: torch.Tensor  # (n,) long
    inverse: torch.Tensor  # (n,) long

    @staticmethod
    def identity(n: int) -> "Permutation":
        idx = torch.arange(n)
        return Permutation(forward=idx, inverse=idx.clone())


@dataclass
class ScanBundle:
    sequences: list[torch.Tensor]  # four tensors (..., H*W, C)
    height: int
    width: int
    regen_perm: Permutation


def regenerate_permutation(n: int, generator: torch.Generator | None = None) -> Permutation:
    """Draw a uniform random permutation of {0,...,n-1} with its inverse."""
    if n < 1:
        raise ValueError("permutation size must be >= 1")
    global _perm_draw_count
    _perm_draw_count += 1
    fwd = torch.randperm(n, generator=generator)
    inv = torch.argsort(fwd)
    return Permutation(forward=fwd, inverse=inv)


def _colmajor_index(height: int, width: int) -> torch.Tensor:
    return torch.arange(height * width).reshape(height, width).t().reshape(-1)


def scan_expand(feature_map: torch.Tensor, perm: Permutation | None = None) -> ScanBundle:
    """Expand (..., C, H, W) into four directional token sequences.

    Tokens are the permuted row-major positions; directions are row-major,
    reversed row-major, column-major, reversed column-major.
    """
    *lead, C, H, W = feature_map.shape
    n = H * W
    if perm is None:
        perm = Permutation.identity(n)
    if perm.forward.numel() != n:
        raise ValueError(f"permutation length {perm.forward.numel()} != {n} tokens")
    tokens = feature_map.reshape(*lead, C, n).transpose(-1, -2)  # (..., HW, C)
    tokens = tokens[..., perm.forward, :]
    cm = _colmajor_index(H, W)
    seqs = [
        tokens,
        tokens.flip(-2),
        tokens[..., cm, :],
        tokens[..., cm, :].flip(-2),
    ]
    return ScanBundle(sequences=seqs, height=H, width=W, regen_perm=perm)


def scan_merge(bundle: ScanBundle, processed: list[torch.Tensor]) -> torch.Tensor:
    """Align the four processed sequences back to the grid, sum them, undo the
    regeneration permutation, and reshape to (..., C, H, W)."""
    H, W = bundle.height, bundle.width
    n = H * W
    ref = bundle.sequences[0]
    for p in processed:
        if p.shape[-2] != n or p.shape[-1] != ref.shape[-1]:
            raise ValueError(f"processed sequence shape {tuple(p.shape)} does not match bundle")
    cm = _colmajor_index(H, W)
    cm_inv = torch.argsort(cm)
    aligned = (processed[0]
               + processed[1].flip(-2)
               + processed[2][..., cm_inv, :]
               + processed[3].flip(-2)[..., cm_inv, :])
    tokens = aligned[..., bundle.regen_perm.inverse, :]
    return tokens.transpose(-1, -2).reshape(*ref.shape[:-2], ref.shape[-1], H, W)


def csm_forward(feature_map: torch.Tensor, weights: S6Weights, regen: bool = True,
                generator: torch.Generator | None = None) -> torch.Tensor:
    """Cross-scan module: expand, run the shared S6 block on each direction, mean-merge.

    With regen, one fresh permutation is drawn per call and shared by all four
    directions; it is inverted after the merge so output stays spatially aligned.
    """
    if feature_map.shape[-3] != weights.token_dim:
        raise ValueError("feature map channels must equal S6 token_dim")
    n = feature_map.shape[-1] * feature_map.shape[-2]
    perm = regenerate_permutation(n, generator) if regen else None
    bundle = scan_expand(feature_map, perm)
    stacked = torch.stack(bundle.sequences, dim=0)  # one scan for all four directions
    out = s6_forward(stacked, weights)
    merged = scan_merge(bundle, list(out.unbind(0)))
    return merged / 4.0
