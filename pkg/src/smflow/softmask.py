"""Soft-mask output head for layered flow estimation.

Two sibling 1x1 (or 3x3) conv branches read the same feature volume:
the mask branch emits k mask channels, the flow branch k interleaved
(u, v) pairs. A channel-wise maxout keeps, per pixel, only the winning
mask; masked flows are fused by elementwise multiplication and summed
over layers into the final 2-channel flow. Variants rewire the same
tensors: ``no-maxout`` skips the selection, ``normalize`` replaces it
with a per-pixel softmax, ``no-masks`` drops the mask branch, and
``linear`` is the plain 2-channel conv baseline.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ConvSpec,
    ShapeError,
    Tensor,
    channel_maxout_select,
    channel_softmax,
    conv2d,
    masked_flow_sum,
    sum_channels,
)

VARIANTS = ("linear", "lofe", "no-maxout", "normalize", "no-masks")
MASKED_VARIANTS = ("lofe", "no-maxout", "normalize")


@dataclass
class MaskStack:
    """Mask volume before (`raw`) and after (`selected`) selection."""

    raw: Tensor
    selected: Tensor

    @property
    def k(self) -> int:
        return self.raw.data.shape[1]


@dataclass
class SoftMaskHead:
    variant: str
    k: int
    flow_branch: ConvSpec
    mask_branch: ConvSpec | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown head variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "linear":
            if self.flow_branch.out_channels != 2:
                raise ShapeError("linear head needs a 2-channel flow conv")
            if self.mask_branch is not None:
                raise ShapeError("linear head takes no mask branch")
            return
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.flow_branch.out_channels != 2 * self.k:
            raise ShapeError(
                f"flow branch emits {self.flow_branch.out_channels} channels, expected {2 * self.k}")
        if self.variant == "no-masks":
            if self.mask_branch is not None:
                raise ShapeError("no-masks head takes no mask branch")
        else:
            if self.mask_branch is None or self.mask_branch.out_channels != self.k:
                raise ShapeError(f"mask branch must emit k={self.k} channels")
            if self.mask_branch.in_channels != self.flow_branch.in_channels:
                raise ShapeError("mask and flow branches must read the same features")

    @property
    def in_channels(self) -> int:
        return self.flow_branch.in_channels

    @property
    def kernel(self) -> int:
        return self.flow_branch.kernel

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        if self.mask_branch is not None:
            named.append(("head.mask.w", self.mask_branch.weight))
            if self.mask_branch.bias is not None:
                named.append(("head.mask.b", self.mask_branch.bias))
        named.append(("head.flow.w", self.flow_branch.weight))
        if self.flow_branch.bias is not None:
            named.append(("head.flow.b", self.flow_branch.bias))
        return named


def init_head(variant: str, k: int, in_channels: int, kernel: int,
              rng: np.random.Generator) -> SoftMaskHead:
    """Xavier-uniform weights, zero biases; pad keeps resolution."""
    pad = kernel // 2

    def conv(out_ch):
        fan_in = in_channels * kernel * kernel
        fan_out = out_ch * kernel * kernel
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = Tensor(rng.uniform(-a, a, (out_ch, in_channels, kernel, kernel)), requires_grad=True)
        b = Tensor(np.zeros(out_ch), requires_grad=True)
        return ConvSpec(w, b, stride=1, pad=pad)

    if variant == "linear":
        return SoftMaskHead("linear", 1, conv(2))
    if variant == "no-masks":
        return SoftMaskHead("no-masks", k, conv(2 * k))
    # mask branch drawn first so lofe / no-maxout / normalize share
    # identical tensors under the same rng state
    mask = conv(k)
    flow = conv(2 * k)
    return SoftMaskHead(variant, k, flow, mask)


def head_forward(head: SoftMaskHead, x: Tensor) -> tuple[Tensor, MaskStack | None]:
    """Run the head on a (B,C,H,W) feature volume.

    Returns the fused (B,2,H,W) flow plus the mask stack for variants
    that have one (lofe, no-maxout, normalize); None otherwise.
    """
    if x.data.ndim != 4 or x.data.shape[1] != head.in_channels:
        raise ShapeError(
            f"head_forward: features with {head.in_channels} channels expected, got {x.data.shape}")
    if head.variant == "linear":
        return conv2d(x, head.flow_branch), None
    flows = conv2d(x, head.flow_branch)
    if head.variant == "no-masks":
        return sum_channels(flows, head.k), None
    raw = conv2d(x, head.mask_branch)
    if head.variant == "lofe":
        selected = channel_maxout_select(raw)
    elif head.variant == "normalize":
        selected = channel_softmax(raw)
    else:  # no-maxout
        selected = raw
    flow = masked_flow_sum(selected, flows)
    return flow, MaskStack(raw=raw, selected=selected)


def quadratic_expand(head: SoftMaskHead, x: Tensor, layer: int) -> np.ndarray:
    """Closed-form quadratic value of one layer's fused flow, for 1x1
    lofe heads: w_m^T X X^T w_f + X^T (b_f w_m + b_m w_f) + b_m b_f,
    evaluated at every pixel. Test oracle for head_forward; the fused
    output must match this on pixels where `layer` wins the maxout.
    """
    if head.variant != "lofe":
        raise ValueError("quadratic expansion is defined for the lofe head")
    if head.kernel != 1:
        raise ShapeError("quadratic expansion needs a 1x1 head (per-pixel feature vectors)")
    if not 0 <= layer < head.k:
        raise IndexError(f"layer {layer} out of range for k={head.k}")
    xd = x.data
    wm = head.mask_branch.weight.data[layer, :, 0, 0]
    bm = float(head.mask_branch.bias.data[layer]) if head.mask_branch.bias is not None else 0.0
    out = np.empty((xd.shape[0], 2, xd.shape[2], xd.shape[3]))
    for comp in range(2):
        wf = head.flow_branch.weight.data[2 * layer + comp, :, 0, 0]
        bf = (float(head.flow_branch.bias.data[2 * layer + comp])
              if head.flow_branch.bias is not None else 0.0)
        quad = np.einsum("bchw,cd,bdhw->bhw", xd, np.outer(wm, wf), xd)
        lin = np.einsum("c,bchw->bhw", bf * wm + bm * wf, xd)
        out[:, comp] = quad + lin + bm * bf
    return out


@dataclass
class MaskReport:
    """Diagnostics on a mask stack's post-selection supports."""

    support_fractions: list[float]  # per layer: pixels with nonzero selected value
    disjointness_violations: int    # pixels with more than one nonzero channel
    coverage: float                 # pixels with at least one nonzero channel
    n_pixels: int

    def __str__(self):
        sup = ", ".join(f"{s:.3f}" for s in self.support_fractions)
        return (f"masks: supports [{sup}]  disjointness_violations="
                f"{self.disjointness_violations}  coverage={self.coverage:.4f}")


def mask_report(masks: MaskStack) -> MaskReport:
    sel = masks.selected.data
    nonzero = sel != 0.0
    n_pix = sel.shape[0] * sel.shape[2] * sel.shape[3]
    per_pixel = nonzero.sum(axis=1)
    return MaskReport(
        support_fractions=[float(f) for f in nonzero.mean(axis=(0, 2, 3))],
        disjointness_violations=int((per_pixel > 1).sum()),
        coverage=float((per_pixel >= 1).mean()),
        n_pixels=n_pix,
    )


def write_mask_pgms(masks: MaskStack, out_dir: str, prefix: str = "mask") -> list[str]:
    """Dump each layer's selected mask (batch item 0) as a PGM, min-max
    normalized per image; constant masks map to 0."""
    from .data import pgm_write

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    sel = masks.selected.data[0]
    for n in range(sel.shape[0]):
        img = sel[n]
        lo, hi = float(img.min()), float(img.max())
        norm = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
        path = os.path.join(out_dir, f"{prefix}_{n:02d}.pgm")
        pgm_write(norm, path)
        paths.append(path)
    return paths
