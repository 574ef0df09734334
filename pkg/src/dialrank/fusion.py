"""Factorized bilinear pooling and the attention read-out built on it.

Fusing two feature vectors: project each through k factor matrices into an
l-dimensional space, multiply elementwise, sum the k factor blocks, then
apply power and L2 normalization. A multi-channel variant fuses one query
against every column of a feature matrix at once, normalizing per column
so channels stay comparable for the downstream softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    matmul,
    mul,
    narrow,
    normalize_power_l2,
    reshape,
    softmax,
)


@dataclass
class MfbParams:
    """Factor matrices for bilinear fusion of an x-side and a y-side vector.

    U and V are stored as [k*l x d] with factor-major row blocks: rows
    i*l..(i+1)*l form factor i's projection.
    """

    U: Tensor
    V: Tensor
    k: int
    l: int

    def __post_init__(self):
        if self.k < 1 or self.l < 1:
            raise ValueError(f"factor count and hidden size must be >= 1, got k={self.k} l={self.l}")
        for name, m in (("U", self.U), ("V", self.V)):
            if m.shape[0] != self.k * self.l:
                raise ValueError(f"{name} must have k*l={self.k * self.l} rows, got {m.shape}")

    @property
    def d_x(self) -> int:
        return self.U.shape[1]

    @property
    def d_y(self) -> int:
        return self.V.shape[1]

    @classmethod
    def create(cls, d_x: int, d_y: int, k: int, l: int, rng, scale: float = 0.08) -> "MfbParams":
        u = Tensor(rng.uniform(-scale, scale, (k * l, d_x)), requires_grad=True)
        v = Tensor(rng.uniform(-scale, scale, (k * l, d_y)), requires_grad=True)
        return cls(u, v, k, l)

    def parameters(self, prefix: str):
        yield f"{prefix}.U", self.U
        yield f"{prefix}.V", self.V


@dataclass
class AttentionParams:
    """Scoring vector turning an [l x channels] fusion into channel logits."""

    w: Tensor

    @classmethod
    def create(cls, l: int, rng, scale: float = 0.08) -> "AttentionParams":
        return cls(Tensor(rng.uniform(-scale, scale, l), requires_grad=True))

    def parameters(self, prefix: str):
        yield f"{prefix}.w", self.w


def mfb_raw(x: Tensor, y: Tensor, p: MfbParams) -> Tensor:
    """Bilinear fusion before normalization: sum_i (U_i x) o (V_i y).

    y may be a vector [d_y] or a matrix [d_y x channels]; the result is
    [l] or [l x channels] accordingly.
    """
    if x.shape != (p.d_x,):
        raise ValueError(f"fusion x-side expects shape ({p.d_x},), got {x.shape}")
    if y.shape[0] != p.d_y:
        raise ValueError(f"fusion y-side expects {p.d_y} rows, got shape {y.shape}")
    a = matmul(p.U, x)
    b = matmul(p.V, y)
    if y.ndim == 2:
        a = reshape(a, (p.k * p.l, 1))
    h = mul(a, b)
    z = narrow(h, 0, 0, p.l)
    for i in range(1, p.k):
        z = add(z, narrow(h, 0, i * p.l, (i + 1) * p.l))
    return z


def mfb_fuse(x: Tensor, y: Tensor, p: MfbParams, eps: float = 1e-12) -> Tensor:
    """Fuse two vectors into a power- and L2-normalized [l] embedding."""
    if y.ndim != 1:
        raise ValueError(f"mfb_fuse expects a vector y-side, got shape {y.shape}")
    return normalize_power_l2(mfb_raw(x, y, p), eps=eps)


def mfb_fuse_multi(x: Tensor, y: Tensor, p: MfbParams, eps: float = 1e-12) -> Tensor:
    """Fuse one query against every column of y; [l x channels] output.

    Column j equals mfb_fuse(x, y[:, j]): normalization is per channel.
    """
    if y.ndim != 2 or y.shape[1] < 1:
        raise ValueError(f"mfb_fuse_multi expects [d_y x channels] with channels >= 1, got {y.shape}")
    return normalize_power_l2(mfb_raw(x, y, p), eps=eps, axis=0)


def attend(z: Tensor, features: Tensor, p: AttentionParams):
    """Softmax channel weights from fused features, then a convex read-out.

    Returns (weights [channels], attended [d]): attended is features
    weighted by the attention distribution.
    """
    if z.ndim != 2 or features.ndim != 2:
        raise ValueError(f"attend expects matrices, got {z.shape} and {features.shape}")
    if z.shape[1] != features.shape[1]:
        raise ValueError(
            f"attention channel mismatch: fused {z.shape[1]} vs features {features.shape[1]}"
        )
    if z.shape[0] != p.w.shape[0]:
        raise ValueError(f"attention vector length {p.w.shape[0]} does not match fusion size {z.shape[0]}")
    weights = softmax(matmul(p.w, z), axis=0)
    attended = matmul(features, weights)
    return weights, attended
