"""Desk-scale encoder-decoder flow network.

Two images are concatenated channel-wise, pushed through three stride-2
conv stages (16/32/64 channels), mirrored back up by three stride-2
transposed convs with skip concatenation, and finished by a soft-mask
head (or one of its ablation variants) at full resolution.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ConvSpec,
    ShapeError,
    Tensor,
    add_constant,
    concat_channels,
    conv2d,
    deconv2d,
    leaky_relu,
)
from .softmask import VARIANTS, MaskStack, SoftMaskHead, head_forward, init_head

CHECKPOINT_MAGIC = b"SMFN"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, malformed, or from another version."""


@dataclass
class InitSpec:
    """Xavier-uniform weights in [-a, a], a = sqrt(6/(fan_in+fan_out));
    zero biases. Same seed, same parameters, bitwise."""

    seed: int = 0


@dataclass
class NetConfig:
    enc_channels: tuple[int, int, int] = (16, 32, 64)
    dec_channels: tuple[int, int, int] = (16, 12, 10)
    kernel: int = 3
    deconv_kernel: int = 2
    head_kernel: int = 1
    leaky_slope: float = 0.1
    concat_input: bool = True  # append the raw frames to the head features


@dataclass
class ToyFlowNet:
    variant: str
    k: int
    cfg: NetConfig
    encoder: list[ConvSpec]
    decoder: list[ConvSpec]
    head: SoftMaskHead
    _param_list: list[tuple[str, Tensor]] = field(default_factory=list)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._param_list)

    def body_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._param_list if not n.startswith("head.")]

    def head_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._param_list if n.startswith("head.")]

    def forward(self, img1: Tensor, img2: Tensor) -> tuple[Tensor, MaskStack | None]:
        return network_forward(self, img1, img2)


def _xavier(rng, shape, fan_in, fan_out) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


def build_network(variant: str, k: int, init: InitSpec, cfg: NetConfig | None = None) -> ToyFlowNet:
    """Only the head differs across variants; with an equal seed the
    encoder/decoder parameters are bitwise identical for all of them."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant != "linear" and k < 1:
        raise ValueError(f"k must be >= 1 for variant {variant!r}")
    cfg = cfg or NetConfig()
    body_rng = np.random.default_rng([init.seed, 0])
    head_rng = np.random.default_rng([init.seed, 1])

    s = cfg.kernel
    c_in = 6  # two RGB frames
    encoder = []
    ch = c_in
    for co in cfg.enc_channels:
        w = Tensor(_xavier(body_rng, (co, ch, s, s), ch * s * s, co * s * s), requires_grad=True)
        b = Tensor(np.zeros(co), requires_grad=True)
        encoder.append(ConvSpec(w, b, stride=2, pad=s // 2))
        ch = co

    # decoder stage i upsamples and is concatenated with the matching
    # encoder feature (optionally the raw input at full resolution)
    ds = cfg.deconv_kernel
    skip_channels = [cfg.enc_channels[1], cfg.enc_channels[0],
                     c_in if cfg.concat_input else 0]
    decoder = []
    for co, skip in zip(cfg.dec_channels, skip_channels):
        w = Tensor(_xavier(body_rng, (ch, co, ds, ds), ch * ds * ds, co * ds * ds),
                   requires_grad=True)
        b = Tensor(np.zeros(co), requires_grad=True)
        decoder.append(ConvSpec(w, b, stride=2, pad=0))
        ch = co + skip

    head = init_head(variant, k, ch, cfg.head_kernel, head_rng)

    params: list[tuple[str, Tensor]] = []
    for i, spec in enumerate(encoder, 1):
        params += [(f"enc{i}.w", spec.weight), (f"enc{i}.b", spec.bias)]
    for i, spec in enumerate(decoder, 1):
        params += [(f"dec{i}.w", spec.weight), (f"dec{i}.b", spec.bias)]
    params += head.parameters()
    return ToyFlowNet(variant=variant, k=k, cfg=cfg, encoder=encoder,
                      decoder=decoder, head=head, _param_list=params)


def network_forward(net: ToyFlowNet, img1: Tensor, img2: Tensor) -> tuple[Tensor, MaskStack | None]:
    """Dense flow at input resolution; masks exposed for the variants
    that produce them. H and W must be divisible by 8."""
    for img in (img1, img2):
        if img.data.ndim != 4 or img.data.shape[1] != 3:
            raise ShapeError(f"network_forward: expected (B,3,H,W) images, got {img.data.shape}")
    if img1.data.shape != img2.data.shape:
        raise ShapeError("network_forward: image shapes differ")
    B, _, H, W = img1.data.shape
    if H % 8 or W % 8:
        raise ShapeError(f"network_forward: H and W must be divisible by 8, got {H}x{W}")
    slope = net.cfg.leaky_slope
    # inputs live in [0,1]; centering keeps early activations balanced
    x = add_constant(concat_channels([img1, img2]), -0.5)
    skips = [x]
    for spec in net.encoder:
        x = leaky_relu(conv2d(x, spec), slope)
        skips.append(x)
    # skip features paired with decoder stages, finest last
    pair = [skips[2], skips[1], skips[0] if net.cfg.concat_input else None]
    for spec, skip in zip(net.decoder, pair):
        x = leaky_relu(deconv2d(x, spec), slope)
        if skip is not None:
            x = concat_channels([x, skip])
    return head_forward(net.head, x)


def parameter_count(net: ToyFlowNet) -> int:
    return sum(t.data.size for _, t in net.parameters())


# ---------------------------------------------------------------------------
# checkpoint I/O: magic "SMFN", version u32, then (name_len u32, name,
# rank u32, extents u32..., float64 values) per tensor, sorted by name,
# all little-endian. Net structure rides along as cfg/ entries.
# ---------------------------------------------------------------------------

def _net_meta_entries(net: ToyFlowNet) -> dict[str, np.ndarray]:
    return {
        "cfg/variant": np.array([float(VARIANTS.index(net.variant))]),
        "cfg/k": np.array([float(net.k)]),
        "cfg/enc_channels": np.asarray(net.cfg.enc_channels, dtype=np.float64),
        "cfg/dec_channels": np.asarray(net.cfg.dec_channels, dtype=np.float64),
        "cfg/kernel": np.array([float(net.cfg.kernel)]),
        "cfg/deconv_kernel": np.array([float(net.cfg.deconv_kernel)]),
        "cfg/head_kernel": np.array([float(net.cfg.head_kernel)]),
        "cfg/leaky_slope": np.array([net.cfg.leaky_slope]),
        "cfg/concat_input": np.array([1.0 if net.cfg.concat_input else 0.0]),
    }


def checkpoint_bytes(net: ToyFlowNet) -> bytes:
    entries = dict(_net_meta_entries(net))
    for name, t in net.parameters():
        entries[f"param/{name}"] = t.data
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def save_params(net: ToyFlowNet, path: str):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_params(path: str) -> ToyFlowNet:
    entries: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint while reading name length")
            (nlen,) = struct.unpack("<I", head)
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "shape"))
            count = int(np.prod(shape)) if rank else 1
            raw = _read_exact(fh, 8 * count, f"values of {name}")
            entries[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

    def meta(key):
        if key not in entries:
            raise CheckpointError(f"{path}: missing {key} entry")
        return entries[key]

    variant = VARIANTS[int(meta("cfg/variant")[0])]
    k = int(meta("cfg/k")[0])
    cfg = NetConfig(
        enc_channels=tuple(int(v) for v in meta("cfg/enc_channels")),
        dec_channels=tuple(int(v) for v in meta("cfg/dec_channels")),
        kernel=int(meta("cfg/kernel")[0]),
        deconv_kernel=int(meta("cfg/deconv_kernel")[0]),
        head_kernel=int(meta("cfg/head_kernel")[0]),
        leaky_slope=float(meta("cfg/leaky_slope")[0]),
        concat_input=bool(meta("cfg/concat_input")[0]),
    )
    net = build_network(variant, k, InitSpec(seed=0), cfg)
    for name, t in net.parameters():
        key = f"param/{name}"
        if key not in entries:
            raise CheckpointError(f"{path}: missing tensor {key}")
        arr = entries[key]
        if arr.shape != t.data.shape:
            raise CheckpointError(
                f"{path}: tensor {key} has shape {arr.shape}, expected {t.data.shape}")
        t.data = arr.copy()
    return net
