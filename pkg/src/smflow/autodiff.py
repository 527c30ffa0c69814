"""Minimal reverse-mode autodiff over float64 numpy arrays.

Implements exactly the dense ops a small encoder-decoder flow network
needs: 2-D convolution and its transpose, channel-wise maxout selection
and softmax, elementwise arithmetic, channel-group sums, bilinear
warping, and scalar reductions.

Graph conventions:
  * Tensors created by ops remember their parents; the monotonically
    increasing creation id doubles as the topological order, and
    ``backward`` sweeps it in exact reverse.
  * Gradients accumulate across backward calls. Callers reset with
    ``zero_grad`` between steps.
  * Everything is float64; no broadcasting beyond what each op states.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    """An op's shape contract was violated."""


_ids = itertools.count()
_grad_enabled = True
_branch_trace: list | None = None


class no_grad:
    """Context manager suspending graph recording (forward-only eval)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class branch_trace:
    """Collect the discrete branch decisions (leaky_relu signs, maxout
    winners, warp cells) of every op run inside the context. Two forward
    passes with different signatures straddle a non-differentiable point,
    where central differences are meaningless."""

    def __enter__(self):
        global _branch_trace
        self._prev = _branch_trace
        _branch_trace = []
        return self

    def __exit__(self, *exc):
        global _branch_trace
        self.signature = tuple(_branch_trace)
        _branch_trace = self._prev
        return False


def _record_branch(kind: str, arr: np.ndarray):
    if _branch_trace is not None:
        import zlib

        _branch_trace.append((kind, zlib.crc32(np.ascontiguousarray(arr).tobytes())))


class Tensor:
    """Float64 array plus an accumulated gradient and graph linkage."""

    def __init__(self, data, requires_grad=False, parents=(), bwd=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None  # lazily allocated, same shape as data
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = tuple(parents)
        self._bwd = bwd  # grad_out -> per-parent adjoints (None entries allowed)
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __add__(self, other):
        return elementwise_add(self, _lift(other))

    def __sub__(self, other):
        return elementwise_sub(self, _lift(other))

    def __mul__(self, other):
        return elementwise_mul(self, _lift(other))

    def __repr__(self):
        nm = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{nm}, requires_grad={self.requires_grad})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, bwd, name=None) -> Tensor:
    """Create an op output, recording the graph only when grads can flow."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, bwd=bwd, name=name)
    return Tensor(data, name=name)


def zero_grads(tensors: Sequence[Tensor]):
    for t in tensors:
        t.grad = None


def backward(loss: Tensor):
    """Populate .grad of every requires-grad tensor reachable from loss.

    Visits nodes in exact reverse creation order with a seed gradient of
    1.0; adjoints add into any gradient already present.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    nodes = [loss]
    seen = {id(loss)}
    stack = [loss]
    while stack:
        t = stack.pop()
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                nodes.append(p)
                stack.append(p)
    nodes.sort(key=lambda t: t._id, reverse=True)
    adjoint = {id(loss): np.ones_like(loss.data)}
    for t in nodes:
        g = adjoint.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t._bwd is None:
            continue
        for p, pg in zip(t._parents, t._bwd(g)):
            if pg is None or not p.requires_grad:
                continue
            prev = adjoint.get(id(p))
            adjoint[id(p)] = pg if prev is None else prev + pg
    # keyed by id() only for speed; tensors are kept alive by `nodes`
    del adjoint


def graph_tensors(root: Tensor) -> list[Tensor]:
    """All tensors reachable from root, in insertion (topological) order."""
    out = [root]
    seen = {id(root)}
    stack = [root]
    while stack:
        t = stack.pop()
        for p in t._parents:
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
                stack.append(p)
    out.sort(key=lambda t: t._id)
    return out


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def elementwise_sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    d = x.data
    _record_branch("lrelu", d >= 0.0)
    out = np.maximum(d, slope * d) if 0.0 <= slope <= 1.0 else np.where(d >= 0, d, slope * d)

    def bwd(g):
        return (np.where(d >= 0.0, g, slope * g),)

    return _node(out, (x,), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(x.data * c, (x,), lambda g: (g * c,))


def add_constant(x: Tensor, c: float) -> Tensor:
    return _node(x.data + float(c), (x,), lambda g: (g,))


def power(x: Tensor, p: float) -> Tensor:
    """Elementwise x**p for a constant exponent; x must stay positive
    whenever p is not a positive integer."""
    if p == 0.5:
        out = np.sqrt(x.data)
        return _node(out, (x,), lambda g: (g * (0.5 / out),))
    out = x.data ** p
    return _node(out, (x,), lambda g: (g * p * x.data ** (p - 1.0),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    return _node(x.data.sum(), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


# ---------------------------------------------------------------------------
# channel ops
# ---------------------------------------------------------------------------

def _expect_4d(x: Tensor, op: str):
    if x.data.ndim != 4:
        raise ShapeError(f"{op}: expected a (B,C,H,W) tensor, got shape {x.data.shape}")


def channel_maxout_select(m: Tensor) -> Tensor:
    """Per pixel, keep the maximal channel's value and zero the rest.

    Ties go to the lowest channel index. Gradient flows only through the
    selected channel. The output node is tagged so gradient checks can
    compute the minimal top-2 channel gap and flag tie points.
    """
    _expect_4d(m, "channel_maxout_select")
    x = m.data
    idx = np.argmax(x, axis=1)[:, None]  # (B,1,H,W), lowest index on ties
    _record_branch("maxout", idx)
    out = np.zeros_like(x)
    np.put_along_axis(out, idx, np.take_along_axis(x, idx, axis=1), axis=1)

    def bwd(g):
        gm = np.zeros_like(x)
        np.put_along_axis(gm, idx, np.take_along_axis(g, idx, axis=1), axis=1)
        return (gm,)

    node = _node(out, (m,), bwd)
    node._maxout_input = x
    return node


def maxout_tie_gap(x: np.ndarray) -> float:
    """Smallest per-pixel gap between the top two channels (inf for k=1)."""
    k = x.shape[1]
    if k < 2:
        return math.inf
    top2 = np.partition(x, k - 2, axis=1)[:, -2:]
    return float(np.min(top2[:, 1] - top2[:, 0]))


def channel_softmax(m: Tensor) -> Tensor:
    """Per-pixel softmax across channels, stabilized by the channel max."""
    _expect_4d(m, "channel_softmax")
    z = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _node(y, (m,), bwd)


def sum_channels(x: Tensor, groups: int) -> Tensor:
    """Sum `groups` equal channel blocks: (B, groups*c, H, W) -> (B, c, H, W)."""
    _expect_4d(x, "sum_channels")
    B, C, H, W = x.data.shape
    if groups < 1 or C % groups != 0:
        raise ShapeError(f"sum_channels: {C} channels not divisible by groups={groups}")
    c = C // groups
    out = x.data.reshape(B, groups, c, H, W).sum(axis=1)

    def bwd(g):
        gx = np.empty((B, groups, c, H, W))
        gx[:] = g[:, None]
        return (gx.reshape(B, C, H, W),)

    return _node(out, (x,), bwd)


def repeat_channels(x: Tensor, repeats: int) -> Tensor:
    """Repeat each channel `repeats` times in place: channel n maps to
    output channels [n*repeats, (n+1)*repeats)."""
    _expect_4d(x, "repeat_channels")
    B, C, H, W = x.data.shape
    out = np.repeat(x.data, repeats, axis=1)

    def bwd(g):
        return (g.reshape(B, C, repeats, H, W).sum(axis=2),)

    return _node(out, (x,), bwd)


def masked_flow_sum(masks: Tensor, flows: Tensor) -> Tensor:
    """Fused per-layer mask multiply and layer sum.

    masks (B,k,H,W) scale the k interleaved 2-channel flows
    (B,2k,H,W); layer sums give the final (B,2,H,W) flow. Semantically
    identical to repeat_channels + elementwise_mul + sum_channels, in
    one node to cut intermediate traffic on the full-resolution head.
    """
    _expect_4d(masks, "masked_flow_sum")
    _expect_4d(flows, "masked_flow_sum")
    B, k, H, W = masks.data.shape
    if flows.data.shape != (B, 2 * k, H, W):
        raise ShapeError(
            f"masked_flow_sum: flows shape {flows.data.shape} != {(B, 2 * k, H, W)}")
    md, fd = masks.data, flows.data
    fu, fv = fd[:, 0::2], fd[:, 1::2]
    out = np.stack([np.einsum("bkhw,bkhw->bhw", md, fu),
                    np.einsum("bkhw,bkhw->bhw", md, fv)], axis=1)

    def bwd(g):
        gu, gv = g[:, 0:1], g[:, 1:2]
        gm = gu * fu + gv * fv if masks.requires_grad else None
        gf = None
        if flows.requires_grad:
            gf = np.empty_like(fd)
            np.multiply(md, gu, out=gf[:, 0::2])
            np.multiply(md, gv, out=gf[:, 1::2])
        return (gm, gf)

    return _node(out, (masks, flows), bwd)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels: empty input")
    for p in parts:
        _expect_4d(p, "concat_channels")
    sizes = [p.data.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=1))

    return _node(out, tuple(parts), bwd)


def crop_hw(x: Tensor, ys: int, ye: int, xs: int, xe: int) -> Tensor:
    """Slice the spatial axes of a (B,C,H,W) tensor."""
    _expect_4d(x, "crop_hw")
    B, C, H, W = x.data.shape
    out = x.data[:, :, ys:ye, xs:xe].copy()

    def bwd(g):
        gx = np.zeros((B, C, H, W))
        gx[:, :, ys:ye, xs:xe] = g
        return (gx,)

    return _node(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

@dataclass
class ConvSpec:
    """A square-kernel convolution: weight (out, in, s, s), bias (out,).

    The same spec drives ``deconv2d`` as the transpose of this conv, in
    which case the input carries ``out_channels`` channels, the output
    ``in_channels``, and the bias (if any) has length ``in_channels``.
    """

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.weight.data.ndim != 4 or self.weight.data.shape[2] != self.weight.data.shape[3]:
            raise ShapeError(f"ConvSpec: weight must be (out,in,s,s), got {self.weight.data.shape}")
        if self.stride < 1 or self.pad < 0:
            raise ShapeError(f"ConvSpec: bad stride={self.stride} or pad={self.pad}")

    @property
    def out_channels(self) -> int:
        return self.weight.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.data.shape[1]

    @property
    def kernel(self) -> int:
        return self.weight.data.shape[2]


def _out_extent(h: int, s: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - s) // stride + 1


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(x: np.ndarray, s: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """(B,C,H,W) input -> (B*ho*wo, C*s*s) patch matrix."""
    B, C, H, W = x.shape
    if stride == s and pad == 0 and H == ho * s and W == wo * s:
        # non-overlapping tiles: plain reshape, no strided gather
        return (x.reshape(B, C, ho, s, wo, s)
                 .transpose(0, 2, 4, 1, 3, 5)
                 .reshape(B * ho * wo, C * s * s))
    xp = _pad_hw(x, pad)
    sB, sC, sH, sW = xp.strides
    v = as_strided(xp, (B, ho, wo, C, s, s), (sB, sH * stride, sW * stride, sC, sH, sW))
    return v.reshape(B * ho * wo, C * s * s)


def _corr_forward(x, w, stride, pad):
    """Plain cross-correlation; returns (out, cols) with cols kept for reuse."""
    B, C, H, W = x.shape
    co, ci, s, _ = w.shape
    ho, wo = _out_extent(H, s, stride, pad), _out_extent(W, s, stride, pad)
    cols = _im2col(x, s, stride, pad, ho, wo)
    out = cols @ w.reshape(co, -1).T
    return out.reshape(B, ho, wo, co).transpose(0, 3, 1, 2), cols


def _corr_bwd_input(dout, w, stride, pad, in_hw):
    """Gradient of _corr_forward w.r.t. its input (also deconv forward)."""
    B, co, ho, wo = dout.shape
    _, ci, s, _ = w.shape
    H, W = in_hw
    gmat = dout.transpose(0, 2, 3, 1).reshape(-1, co)
    dcols = gmat @ w.reshape(co, -1)  # (B*ho*wo, ci*s*s)
    d6 = dcols.reshape(B, ho, wo, ci, s, s)
    if stride == s and pad == 0 and H == ho * s and W == wo * s:
        return np.ascontiguousarray(d6.transpose(0, 3, 1, 4, 2, 5)).reshape(B, ci, H, W)
    dxp = np.zeros((B, ci, H + 2 * pad, W + 2 * pad))
    d6t = d6.transpose(0, 3, 4, 5, 1, 2)  # (B, ci, ky, kx, ho, wo) view
    for ky in range(s):
        ye = ky + stride * ho
        for kx in range(s):
            dxp[:, :, ky:ye:stride, kx:kx + stride * wo:stride] += d6t[:, :, ky, kx]
    if pad == 0:
        return dxp
    return dxp[:, :, pad:pad + H, pad:pad + W]


def _corr_bwd_weight(dout, x, stride, pad, s, cols=None):
    """Gradient of _corr_forward w.r.t. its weight."""
    B, co, ho, wo = dout.shape
    if cols is None:
        cols = _im2col(x, s, stride, pad, ho, wo)
    gmat = dout.transpose(0, 2, 3, 1).reshape(-1, co)
    ci = x.shape[1]
    return (gmat.T @ cols).reshape(co, ci, s, s)


def _check_conv_geometry(h, w, s, stride, pad, op):
    if h + 2 * pad < s or w + 2 * pad < s:
        raise ShapeError(f"{op}: spatial extent ({h},{w}) smaller than kernel {s} after pad {pad}")
    if _out_extent(h, s, stride, pad) < 1 or _out_extent(w, s, stride, pad) < 1:
        raise ShapeError(f"{op}: zero-sized spatial output")


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlation with bias: (B,Cin,H,W) -> (B,Cout,H',W')."""
    _expect_4d(x, "conv2d")
    B, C, H, W = x.data.shape
    if C != spec.in_channels:
        raise ShapeError(f"conv2d: input has {C} channels, spec expects {spec.in_channels}")
    s, stride, pad = spec.kernel, spec.stride, spec.pad
    _check_conv_geometry(H, W, s, stride, pad, "conv2d")
    wt, bt = spec.weight, spec.bias
    if bt is not None and bt.data.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d: bias shape {bt.data.shape} != ({spec.out_channels},)")
    out, cols = _corr_forward(x.data, wt.data, stride, pad)
    if bt is not None:
        out = out + bt.data[None, :, None, None]

    def bwd(g):
        gx = _corr_bwd_input(g, wt.data, stride, pad, (H, W)) if x.requires_grad else None
        gw = (_corr_bwd_weight(g, x.data, stride, pad, s, cols=cols)
              if wt.requires_grad else None)
        gb = g.sum(axis=(0, 2, 3)) if bt is not None and bt.requires_grad else None
        return (gx, gw, gb) if bt is not None else (gx, gw)

    parents = (x, wt) if bt is None else (x, wt, bt)
    return _node(out, parents, bwd)


def deconv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """Transposed convolution: the gradient of conv2d w.r.t. its input,
    used as a forward op. Input has spec.out_channels channels; output has
    spec.in_channels and spatial extent stride*(H-1) + s - 2*pad."""
    _expect_4d(x, "deconv2d")
    B, C, H, W = x.data.shape
    if C != spec.out_channels:
        raise ShapeError(f"deconv2d: input has {C} channels, spec expects {spec.out_channels}")
    s, stride, pad = spec.kernel, spec.stride, spec.pad
    Ho = stride * (H - 1) + s - 2 * pad
    Wo = stride * (W - 1) + s - 2 * pad
    if Ho < 1 or Wo < 1:
        raise ShapeError("deconv2d: zero-sized spatial output")
    wt, bt = spec.weight, spec.bias
    if bt is not None and bt.data.shape != (spec.in_channels,):
        raise ShapeError(f"deconv2d: bias shape {bt.data.shape} != ({spec.in_channels},)")
    out = _corr_bwd_input(x.data, wt.data, stride, pad, (Ho, Wo))
    if bt is not None:
        out = out + bt.data[None, :, None, None]

    def bwd(g):
        gx = _corr_forward(g, wt.data, stride, pad)[0] if x.requires_grad else None
        gw = _corr_bwd_weight(x.data, g, stride, pad, s) if wt.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bt is not None and bt.requires_grad else None
        return (gx, gw, gb) if bt is not None else (gx, gw)

    parents = (x, wt) if bt is None else (x, wt, bt)
    return _node(out, parents, bwd)


# ---------------------------------------------------------------------------
# bilinear warping
# ---------------------------------------------------------------------------

def bilinear_warp(image: Tensor, flow: Tensor) -> Tensor:
    """Backward-warp: out(x,y) = image sampled at (x+u, y+v), bilinear,
    clamped to the border. Differentiable in both image and flow."""
    _expect_4d(image, "bilinear_warp")
    _expect_4d(flow, "bilinear_warp")
    B, C, H, W = image.data.shape
    if flow.data.shape != (B, 2, H, W):
        raise ShapeError(f"bilinear_warp: flow shape {flow.data.shape} != {(B, 2, H, W)}")
    gx = np.arange(W, dtype=np.float64)[None, None, :] + flow.data[:, 0]
    gy = np.arange(H, dtype=np.float64)[None, :, None] + flow.data[:, 1]
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    _record_branch("warp", np.stack([x0, y0]))
    wx = gx - x0
    wy = gy - y0
    x0c = np.clip(x0, 0, W - 1).astype(np.intp)
    x1c = np.clip(x0 + 1, 0, W - 1).astype(np.intp)
    y0c = np.clip(y0, 0, H - 1).astype(np.intp)
    y1c = np.clip(y0 + 1, 0, H - 1).astype(np.intp)
    bi = np.arange(B, dtype=np.intp)[:, None, None]
    imt = image.data.transpose(0, 2, 3, 1)  # (B,H,W,C)
    i00 = imt[bi, y0c, x0c]
    i01 = imt[bi, y0c, x1c]
    i10 = imt[bi, y1c, x0c]
    i11 = imt[bi, y1c, x1c]
    w00 = ((1 - wy) * (1 - wx))[..., None]
    w01 = ((1 - wy) * wx)[..., None]
    w10 = (wy * (1 - wx))[..., None]
    w11 = (wy * wx)[..., None]
    out = w00 * i00 + w01 * i01 + w10 * i10 + w11 * i11  # (B,H,W,C)

    def bwd(g):
        gt = g.transpose(0, 2, 3, 1)
        gimg = None
        if image.requires_grad:
            acc = np.zeros((B, H, W, C))
            np.add.at(acc, (bi, y0c, x0c), gt * w00)
            np.add.at(acc, (bi, y0c, x1c), gt * w01)
            np.add.at(acc, (bi, y1c, x0c), gt * w10)
            np.add.at(acc, (bi, y1c, x1c), gt * w11)
            gimg = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
        gflow = None
        if flow.requires_grad:
            dx = (1 - wy)[..., None] * (i01 - i00) + wy[..., None] * (i11 - i10)
            dy = (1 - wx)[..., None] * (i10 - i00) + wx[..., None] * (i11 - i01)
            du = (gt * dx).sum(axis=-1)
            dv = (gt * dy).sum(axis=-1)
            gflow = np.stack([du, dv], axis=1)
        return (gimg, gflow)

    return _node(np.ascontiguousarray(out.transpose(0, 3, 1, 2)), (image, flow), bwd)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    excluded_ties: bool
    worst: tuple  # (param name/index, flat index, analytic, numeric)
    passed: bool
    n_excluded_coords: int = 0  # coordinates whose FD window crossed a kink

    def __str__(self):
        tag = "EXCLUDED (maxout tie)" if self.excluded_ties else (
            "ok" if self.passed else "FAIL")
        return (f"gradcheck: max_rel_err={self.max_rel_err:.3e} over "
                f"{self.n_checked} coords, {self.n_excluded_coords} excluded "
                f"[{tag}] worst={self.worst}")


def _min_tie_gap(root: Tensor) -> float:
    gap = math.inf
    for t in graph_tensors(root):
        x = getattr(t, "_maxout_input", None)
        if x is not None:
            gap = min(gap, maxout_tie_gap(x))
    return gap


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_param: int | None = None,
    seed: int = 0,
    rel_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar graph built by ``f``
    against central finite differences.

    ``f`` must rebuild the graph from the current ``params`` data on each
    call. Relative error uses denominator max(|analytic|, |numeric|,
    rel_floor). Non-differentiable points follow one exclusion policy:
    a graph evaluated exactly at a maxout tie is flagged as excluded as a
    whole, and any single coordinate whose +-eps evaluations land on
    different sides of a kink (leaky_relu sign flip, maxout winner
    change, warp cell change) is skipped and counted, since central
    differences are undefined across such points.
    """
    for p in params:
        p.zero_grad()
        p.requires_grad = True
    loss = f()
    tie_gap = _min_tie_gap(loss)
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    excluded = tie_gap <= 10.0 * eps

    rng = np.random.default_rng(seed)
    max_err, n_checked, n_skipped = 0.0, 0, 0
    worst = (None, None, 0.0, 0.0)
    if not excluded:
        with no_grad():
            for pi, p in enumerate(params):
                flat = p.data.reshape(-1)
                n = flat.size
                if max_coords_per_param is not None and n > max_coords_per_param:
                    coords = rng.choice(n, size=max_coords_per_param, replace=False)
                else:
                    coords = range(n)
                for j in coords:
                    orig = flat[j]
                    flat[j] = orig + eps
                    with branch_trace() as tp:
                        fp = f().item()
                    flat[j] = orig - eps
                    with branch_trace() as tm:
                        fm = f().item()
                    flat[j] = orig
                    if tp.signature != tm.signature:
                        n_skipped += 1
                        continue
                    num = (fp - fm) / (2.0 * eps)
                    ana = analytic[pi].reshape(-1)[j]
                    err = abs(ana - num) / max(abs(ana), abs(num), rel_floor)
                    n_checked += 1
                    if err > max_err:
                        max_err = err
                        worst = (p.name or pi, int(j), float(ana), float(num))
    return GradCheckReport(
        max_rel_err=max_err,
        n_checked=n_checked,
        excluded_ties=excluded,
        worst=worst,
        passed=excluded or max_err <= tol,
        n_excluded_coords=n_skipped,
    )
