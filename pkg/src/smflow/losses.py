"""Flow losses: endpoint error, its smoothed supervised form, the
photometric warping loss, and the bending-energy smoothness term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add_constant,
    bilinear_warp,
    crop_hw,
    elementwise_add,
    elementwise_mul,
    elementwise_sub,
    mean_all,
    power,
    scale,
    sum_all,
    sum_channels,
)


@dataclass
class LossConfig:
    mode: str = "supervised"        # supervised | unsupervised
    epsilon: float = 1e-3           # robustness floor inside the penalty
    reg_weight: float = 1e-3        # weight of the bending-energy term
    exponent: float = 0.45          # photometric penalty exponent

    def __post_init__(self):
        if self.mode not in ("supervised", "unsupervised"):
            raise ValueError(f"bad loss mode {self.mode!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")


def _as_batched_flow(a) -> np.ndarray:
    d = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    if d.ndim == 3 and d.shape[0] == 2:
        d = d[None]
    if d.ndim != 4 or d.shape[1] != 2:
        raise ShapeError(f"expected a (B,2,H,W) or (2,H,W) flow, got shape {d.shape}")
    return d


def epe_metric(pred, gt) -> float:
    """Mean endpoint error in pixels: mean over pixels of
    sqrt((u-u*)^2 + (v-v*)^2)."""
    p = _as_batched_flow(pred)
    g = _as_batched_flow(gt)
    if p.shape != g.shape:
        raise ShapeError(f"epe_metric: shapes {p.shape} and {g.shape} differ")
    d = p - g
    return float(np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2).mean())


def _lift_like(x, name) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64), name=name)


def supervised_loss(pred: Tensor, gt, epsilon: float = 1e-3) -> Tensor:
    """Differentiable mean EPE, smoothed as sqrt(d^2 + eps^2)."""
    gt = _lift_like(gt, "gt")
    if pred.data.shape != gt.data.shape:
        raise ShapeError(f"supervised_loss: shapes {pred.data.shape} != {gt.data.shape}")
    d = elementwise_sub(pred, gt)
    sq = sum_channels(elementwise_mul(d, d), 2)          # (B,1,H,W) = du^2+dv^2
    dist = power(add_constant(sq, epsilon * epsilon), 0.5)
    return mean_all(dist)


def photometric_loss(img1, img2, flow: Tensor, epsilon: float = 1e-3,
                     exponent: float = 0.45) -> Tensor:
    """Charbonnier penalty between img1 and img2 backward-warped by flow:
    mean over pixels and channels of (d^2 + eps^2)^exponent."""
    img1 = _lift_like(img1, "img1")
    img2 = _lift_like(img2, "img2")
    if img1.data.shape != img2.data.shape:
        raise ShapeError("photometric_loss: image shapes differ")
    warped = bilinear_warp(img2, flow)
    d = elementwise_sub(img1, warped)
    pen = power(add_constant(elementwise_mul(d, d), epsilon * epsilon), exponent)
    return mean_all(pen)


def bending_energy(flow: Tensor) -> Tensor:
    """Sum over interior pixels and both flow components of
    u_xx^2 + u_yy^2 + 2*u_xy^2, with second differences of unit-spaced
    samples. Exactly zero on affine fields; a sum, not a mean."""
    if flow.data.ndim == 3:
        raise ShapeError("bending_energy expects a batched (B,2,H,W) flow")
    B, C, H, W = flow.data.shape
    if H < 3 or W < 3:
        raise ShapeError(f"bending_energy needs at least a 3x3 field, got {H}x{W}")

    def win(ys, xs):
        return crop_hw(flow, ys, ys + H - 2, xs, xs + W - 2)

    ctr = win(1, 1)
    dxx = (win(1, 2) - scale(ctr, 2.0)) + win(1, 0)
    dyy = (win(2, 1) - scale(ctr, 2.0)) + win(0, 1)
    dxy = scale((win(2, 2) - win(2, 0)) - (win(0, 2) - win(0, 0)), 0.25)
    total = elementwise_add(
        elementwise_add(elementwise_mul(dxx, dxx), elementwise_mul(dyy, dyy)),
        scale(elementwise_mul(dxy, dxy), 2.0),
    )
    return sum_all(total)


def unsupervised_loss(img1, img2, flow: Tensor, cfg: LossConfig) -> Tensor:
    """Photometric loss plus reg_weight * bending energy."""
    photo = photometric_loss(img1, img2, flow, cfg.epsilon, cfg.exponent)
    if cfg.reg_weight == 0.0:
        return photo
    return elementwise_add(photo, scale(bending_energy(flow), cfg.reg_weight))
