"""Diagonal state-space primitive: ZOH discretization, linear scan, kernel form, S6 block.

Shape conventions:
    sequences        (..., L, C)        C = channels
    state tensors    (..., L, C, N)     N = state_dim
    A                (C, N)             diagonal, strictly negative
    B, C (output)    (N,) or (..., L, N), shared across channels
    D                (C,)
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class ContinuousSsmParams:
    """Continuous-time diagonal SSM parameters (A, B, C, D)."""

    A: torch.Tensor
    B: torch.Tensor
    C: torch.Tensor
    D: torch.Tensor

    def __post_init__(self):
        if self.A.ndim != 2:
            raise ValueError(f"A must have shape (channels, state_dim), got {tuple(self.A.shape)}")
        if not torch.isfinite(self.A).all() or not (self.A < 0).all():
            raise ValueError("all entries of A must be finite and strictly negative")


@dataclass
class DiscreteSsmParams:
    """ZOH-discretized parameters (A_bar, B_bar) plus output/skip matrices and step sizes."""

    A_bar: torch.Tensor  # (..., L, C, N)
    B_bar: torch.Tensor  # broadcastable to A_bar
    C: torch.Tensor      # (N,) or (..., L, N)
    D: torch.Tensor      # (C,)
    delta: torch.Tensor  # (..., L, C) or broadcastable

    @property
    def is_time_invariant(self) -> bool:
        def invariant(x, step_axis):
            return x.ndim <= abs(step_axis) - 1 or x.shape[step_axis] == 1

        return (invariant(self.A_bar, -3) and invariant(self.B_bar, -3)
                and invariant(self.C, -2) and invariant(self.delta, -2))


def _phi(x: torch.Tensor) -> torch.Tensor:
    # (exp(x) - 1) / x for x <= 0; expm1 makes this cancellation-free down to
    # the series limit 1, the clamp only guards the 0/0 at x == -0.0
    safe = x.clamp(max=-torch.finfo(x.dtype).tiny)
    return torch.expm1(safe) / safe


def discretize(params: ContinuousSsmParams, delta: torch.Tensor) -> DiscreteSsmParams:
    """Zero-order-hold discretization of a diagonal continuous SSM.

    A_bar = exp(delta*A); B_bar = (delta*A)^-1 (exp(delta*A) - 1) * delta * B,
    evaluated elementwise over the diagonal with a series-limit branch.
    """
    if not (delta > 0).all():
        raise ValueError("delta must be strictly positive everywhere")
    if not (params.A < 0).all():
        raise ValueError("A must be strictly negative")
    dA = delta.unsqueeze(-1) * params.A  # (..., L, C, N)
    A_bar = torch.exp(dA)
    B = params.B
    if B.ndim == 1:
        B_exp = B.view(*(1,) * (dA.ndim - 1), -1)
    else:
        B_exp = B.unsqueeze(-2)  # (..., L, 1, N), broadcast over channels
    B_bar = _phi(dA) * delta.unsqueeze(-1) * B_exp
    return DiscreteSsmParams(A_bar=A_bar, B_bar=B_bar, C=params.C, D=params.D, delta=delta)


def _associative_scan(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Inclusive scan of h_t = a_t * h_{t-1} + b_t along dim -3 (Hillis-Steele doubling)."""
    a = a.expand(b.shape)
    return _AssocScanFn.apply(a, b)


class _AssocScanFn(torch.autograd.Function):
    """Doubling scan with an analytic backward pass.

    Saving only (a, h) instead of every doubling intermediate keeps activation
    memory linear in sequence length. The gradient of the recurrence is itself
    a reverse-time scan: g_t = grad_h_t + a_{t+1} g_{t+1}, with grad_b = g and
    grad_a_t = g_t * h_{t-1}.
    """

    @staticmethod
    def forward(ctx, a, b):
        with torch.no_grad():
            h = _hillis_steele(a, b)
        ctx.save_for_backward(a, h)
        return h

    @staticmethod
    def backward(ctx, grad_h):
        a, h = ctx.saved_tensors
        m = torch.cat([a[..., 1:, :, :], torch.ones_like(a[..., :1, :, :])], dim=-3)
        g = _hillis_steele_rev(m, grad_h)
        grad_a = torch.zeros_like(g)
        grad_a[..., 1:, :, :] = g[..., 1:, :, :] * h[..., :-1, :, :]
        return grad_a, g


def _hillis_steele(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    L = b.shape[-3]
    a = a.clone()
    b = b.clone()
    shift = 1
    while shift < L:
        # materialize each RHS before writing: the slices alias the same storage
        hi = slice(shift, None)
        lo = slice(None, -shift)
        b[..., hi, :, :] += a[..., hi, :, :] * b[..., lo, :, :]
        a[..., hi, :, :] = a[..., hi, :, :] * a[..., lo, :, :]
        shift *= 2
    return b


def _hillis_steele_rev(m: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """Suffix scan g_t = c_t + m_t * g_{t+1} (m_t = a_{t+1}; m's last entry unused)."""
    L = c.shape[-3]
    m = m.clone()
    g = c.clone()
    shift = 1
    while shift < L:
        lo = slice(None, L - shift)
        hi = slice(shift, None)
        g[..., lo, :, :] += m[..., lo, :, :] * g[..., hi, :, :]
        m[..., lo, :, :] = m[..., lo, :, :] * m[..., hi, :, :]
        shift *= 2
    return g


def _sequential_scan(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    L = b.shape[-3]
    a = a.expand(b.shape)
    h = torch.zeros_like(b[..., 0, :, :])
    out = []
    for t in range(L):
        h = a[..., t, :, :] * h + b[..., t, :, :]
        out.append(h)
    return torch.stack(out, dim=-3)


def selective_scan(u: torch.Tensor, params: DiscreteSsmParams,
                   method: str = "assoc") -> torch.Tensor:
    """Run the linear recurrence h_t = A_bar_t h_{t-1} + B_bar_t u_t, y_t = C_t h_t + D u_t.

    `method` selects the vectorized doubling scan ("assoc", default) or the
    plain recurrence loop ("sequential", the reference for equality tests).
    """
    L = u.shape[-2]
    for name, x, axis in (("A_bar", params.A_bar, -3), ("B_bar", params.B_bar, -3),
                          ("C", params.C, -2), ("delta", params.delta, -2)):
        if x.ndim >= abs(axis) and x.shape[axis] not in (1, L):
            raise ValueError(f"{name} step dimension {x.shape[axis]} does not match length {L}")
    b = params.B_bar * u.unsqueeze(-1)
    return _scan_output(u, params.A_bar, b, params.C, params.D, method)


def _scan_output(u, a, b, C, D, method="assoc"):
    scan = _sequential_scan if method == "sequential" else _associative_scan
    h = scan(a, b)
    C_exp = C.view(*(1,) * (h.ndim - 1), -1) if C.ndim == 1 else C.unsqueeze(-2)
    return (h * C_exp).sum(-1) + D * u


def ssm_kernel(params: DiscreteSsmParams, L: int) -> torch.Tensor:
    """Convolution-kernel form K = (C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar).

    Only valid for time-invariant params; returns a kernel of shape (L, C).
    """
    if L < 1:
        raise ValueError("kernel length must be >= 1")
    if not params.is_time_invariant:
        raise ValueError("ssm_kernel requires time-invariant params")

    def squeeze_step(x, axis):
        return x.squeeze(axis) if x.ndim >= abs(axis) and x.shape[axis] == 1 else x

    A_bar = squeeze_step(params.A_bar, -3)  # (C, N)
    B_bar = squeeze_step(params.B_bar, -3)
    C = squeeze_step(params.C, -2)
    CB = C * B_bar  # broadcast over channels
    # powers A_bar^j via cumulative product over the tap axis
    ones = torch.ones_like(A_bar).unsqueeze(0)
    powers = torch.cumprod(torch.cat([ones, A_bar.unsqueeze(0).expand(L - 1, *A_bar.shape)], 0), 0) \
        if L > 1 else ones
    return (powers * CB).sum(-1)  # (L, C)


def ssm_conv_apply(u: torch.Tensor, kernel: torch.Tensor, D: torch.Tensor) -> torch.Tensor:
    """Causal convolution y_t = sum_j K_j u_{t-j} + D u_t.

    Kernels longer than the sequence are truncated to its length.
    """
    L = u.shape[-2]
    kernel = kernel[:L]
    y = D * u
    for j in range(kernel.shape[0]):
        tap = kernel[j]
        if j == 0:
            y = y + tap * u
        else:
            y = torch.cat([y[..., :j, :], y[..., j:, :] + tap * u[..., :L - j, :]], dim=-2)
    return y


class S6Weights(nn.Module):
    """Learnable parameters of one selective (input-dependent) SSM block."""

    def __init__(self, token_dim: int, inner_dim: int | None = None, state_dim: int = 16):
        super().__init__()
        inner_dim = 2 * token_dim if inner_dim is None else inner_dim
        self.token_dim = token_dim
        self.inner_dim = inner_dim
        self.state_dim = state_dim
        self.in_proj = nn.Linear(token_dim, inner_dim)
        self.gate_proj = nn.Linear(token_dim, inner_dim)
        self.delta_proj = nn.Linear(inner_dim, inner_dim)
        self.B_proj = nn.Linear(inner_dim, state_dim, bias=False)
        self.C_proj = nn.Linear(inner_dim, state_dim, bias=False)
        # S4D-real init: A_n = -(n+1), stored as log
        A = torch.arange(1, state_dim + 1, dtype=torch.get_default_dtype())
        self.A_log = nn.Parameter(torch.log(A).repeat(inner_dim, 1))
        self.D = nn.Parameter(torch.ones(inner_dim))
        self.out_proj = nn.Linear(inner_dim, token_dim)
        # bias softplus(delta) into [1e-3, 1e-1] at init
        with torch.no_grad():
            self.delta_proj.bias.uniform_(-6.9, -2.3)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return s6_forward(tokens, self)


def s6_forward(tokens: torch.Tensor, weights: S6Weights, method: str = "assoc") -> torch.Tensor:
    """Selective-scan block: input-dependent delta/B/C, gated output branch."""
    if tokens.shape[-1] != weights.token_dim:
        raise ValueError(f"token_dim mismatch: {tokens.shape[-1]} != {weights.token_dim}")
    x = weights.in_proj(tokens)            # (..., L, inner)
    z = weights.gate_proj(tokens)
    # softplus underflows to 0 for very negative inputs; keep delta strictly positive
    delta = F.softplus(weights.delta_proj(x)).clamp_min(torch.finfo(x.dtype).tiny)
    B = weights.B_proj(x)                  # (..., L, N)
    C = weights.C_proj(x)
    A = -torch.exp(weights.A_log)          # (inner, N)
    # fused ZOH + scan input: b = phi(delta*A) * (delta*B) * x, same math as
    # discretize followed by selective_scan but with fewer full-size products
    dA = delta.unsqueeze(-1) * A
    b = _phi(dA) * ((delta * x).unsqueeze(-1) * B.unsqueeze(-2))
    y = _scan_output(x, torch.exp(dA), b, C, weights.D, method)
    return weights.out_proj(y * F.silu(z))


def identity_s6_weights(token_dim: int, dtype=torch.float64) -> S6Weights:
    """An S6 configuration whose forward map is exactly the identity on tokens.

    C_proj = 0 makes the scan output D*x; the gate bias of 64 saturates the
    sigmoid so silu(z) = 64.0 exactly, cancelled bitwise by out_proj = I/64
    (both factors are powers of two).
    """
    w = S6Weights(token_dim, inner_dim=token_dim, state_dim=1)
    with torch.no_grad():
        w.in_proj.weight.copy_(torch.eye(token_dim))
        w.in_proj.bias.zero_()
        w.gate_proj.weight.zero_()
        w.gate_proj.bias.fill_(64.0)
        w.C_proj.weight.zero_()
        w.D.fill_(1.0)
        w.out_proj.weight.copy_(torch.eye(token_dim) / 64.0)
        w.out_proj.bias.zero_()
    return w.to(dtype)
