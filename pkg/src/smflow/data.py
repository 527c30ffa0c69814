"""Synthetic layered-motion data with exact ground-truth flow, the
training-time augmentation recipe, and flow/image file I/O.

Scenes are a moving textured background plus 1-4 opaque textured
rectangles, each with its own translation or mildly affine motion.
Ground truth is the motion of the topmost layer at every pixel, so it
is exactly piecewise affine; motion coefficients are snapped to dyadic
values so second differences of the flow cancel exactly in float64.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

FLO_MAGIC = 202021.25
_SEED_STRIDE = 100_000  # per-sample seeds are counter-derived: seed*stride + index


class FloFormatError(ValueError):
    """A .flo file failed validation."""


class PnmFormatError(ValueError):
    """A PPM/PGM file failed validation."""


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

def _box_blur(img: np.ndarray, radius: int, passes: int = 3) -> np.ndarray:
    """Separable box blur with edge clamping, applied along both spatial
    axes; three passes approximate a Gaussian."""
    out = img
    for _ in range(passes):
        for axis in (-2, -1):
            pad = [(0, 0)] * out.ndim
            pad[axis] = (radius, radius)
            p = np.pad(out, pad, mode="edge")
            c = np.cumsum(p, axis=axis)
            lead = np.take(c, range(2 * radius, p.shape[axis]), axis=axis)
            lag = np.take(c, range(0, p.shape[axis] - 2 * radius), axis=axis)
            out = (lead - lag) / (2 * radius)
            # cumsum-difference drops one sample; rebuild exact width
            first = np.take(p, range(0, 2 * radius + 1), axis=axis).sum(axis) / (2 * radius + 1)
            out = np.concatenate([np.expand_dims(first, axis), out], axis=axis)
            out = np.take(out, range(0, img.shape[axis]), axis=axis)
    return out


def _texture(rng: np.random.Generator, h: int, w: int, radius: int = 3) -> np.ndarray:
    """Smooth random 3-channel texture stretched to [0.05, 0.95]."""
    t = _box_blur(rng.random((3, h, w)), radius)
    lo = t.min(axis=(1, 2), keepdims=True)
    hi = t.max(axis=(1, 2), keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    return 0.05 + 0.9 * (t - lo) / span


def _snap(x, denom: float):
    return np.round(np.asarray(x) * denom) / denom


def _sample_bilinear(img: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Clamped bilinear sampling of (C,H,W) at float coords (same shape
    outputs). Plain numpy; intentionally independent of the autodiff op."""
    C, H, W = img.shape
    x0 = np.floor(px)
    y0 = np.floor(py)
    wx = px - x0
    wy = py - y0
    x0c = np.clip(x0, 0, W - 1).astype(np.intp)
    x1c = np.clip(x0 + 1, 0, W - 1).astype(np.intp)
    y0c = np.clip(y0, 0, H - 1).astype(np.intp)
    y1c = np.clip(y0 + 1, 0, H - 1).astype(np.intp)
    out = ((1 - wy) * ((1 - wx) * img[:, y0c, x0c] + wx * img[:, y0c, x1c])
           + wy * ((1 - wx) * img[:, y1c, x0c] + wx * img[:, y1c, x1c]))
    return out


@dataclass
class MotionModel:
    """p -> A (p - c) + c + t, with dyadic-snapped coefficients."""

    a: np.ndarray  # (2,2)
    t: np.ndarray  # (2,)
    c: np.ndarray  # (2,) anchor

    def displacement(self, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dx, dy = px - self.c[0], py - self.c[1]
        u = (self.a[0, 0] - 1.0) * dx + self.a[0, 1] * dy + self.t[0]
        v = self.a[1, 0] * dx + (self.a[1, 1] - 1.0) * dy + self.t[1]
        return u, v

    def inverse_map(self, qx: np.ndarray, qy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        inv = np.linalg.inv(self.a)
        dx = qx - self.c[0] - self.t[0]
        dy = qy - self.c[1] - self.t[1]
        return (inv[0, 0] * dx + inv[0, 1] * dy + self.c[0],
                inv[1, 0] * dx + inv[1, 1] * dy + self.c[1])


@dataclass
class SceneLayer:
    rect: tuple[float, float, float, float]  # x0, y0, x1, y1 inclusive, frame-1 coords
    motion: MotionModel
    texture: np.ndarray

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.rect
        return (px >= x0) & (px <= x1) & (py >= y0) & (py <= y1)


@dataclass
class LayeredScene:
    background: SceneLayer
    layers: list[SceneLayer]  # bottom to top


@dataclass
class SamplePair:
    img1: np.ndarray      # (3,H,W) in [0,1]
    img2: np.ndarray
    gt: np.ndarray        # (2,H,W) pixels
    seed: int
    occlusion: np.ndarray = None  # (H,W) bool, True where photometrically unmatched


@dataclass
class SceneSpec:
    """Knobs for the scene distribution; defaults give mixed
    translation/affine layer motion over a gently moving background."""

    layer_range: tuple[int, int] = (1, 4)
    max_layer_shift: float = 8.0
    max_bg_shift: float = 2.0
    affine_prob: float = 0.3
    affine_mag: float = 0.04
    blur_radius: int = 3
    shared_texture: bool = False  # layers reuse the background texture
                                  # (boundaries visible through motion only)


def _sample_motion(rng: np.random.Generator, h: int, w: int, max_shift: float,
                   affine_prob: float, affine_mag: float) -> MotionModel:
    t = _snap(rng.uniform(-max_shift, max_shift, 2), 64)
    a = np.eye(2)
    if rng.random() < affine_prob:
        a = a + _snap(rng.uniform(-affine_mag, affine_mag, (2, 2)), 1024)
    c = _snap([w / 2, h / 2], 2)
    return MotionModel(a=a, t=t, c=np.asarray(c, dtype=np.float64))


def generate_scene(seed: int, h: int, w: int, n_layers: int | None = None,
                   scene_spec: SceneSpec | None = None) -> SamplePair:
    """Deterministic per (seed, spec). Layer motions draw translations
    from [-max_layer_shift, +max_layer_shift] px, some with a small
    affine part; the background translates within [-max_bg_shift, +...]."""
    if h % 8 or w % 8:
        raise ValueError(f"generate_scene: H and W must be divisible by 8, got {h}x{w}")
    spec = scene_spec or SceneSpec()
    rng = np.random.default_rng([171, seed])
    if n_layers is None:
        lo, hi = spec.layer_range
        n_layers = int(rng.integers(lo, hi + 1))
    if not 1 <= n_layers <= 4:
        raise ValueError(f"generate_scene: n_layers must be in [1, 4], got {n_layers}")

    bg_texture = _texture(rng, h, w, spec.blur_radius)
    bg = SceneLayer(rect=(-np.inf, -np.inf, np.inf, np.inf),
                    motion=_sample_motion(rng, h, w, spec.max_bg_shift, 0.0, 0.0),
                    texture=bg_texture)
    layers = []
    for _ in range(n_layers):
        lw = rng.uniform(0.15, 0.45) * w
        lh = rng.uniform(0.15, 0.45) * h
        x0 = _snap(rng.uniform(1.0, w - 1.0 - lw), 2)
        y0 = _snap(rng.uniform(1.0, h - 1.0 - lh), 2)
        rect = (float(x0), float(y0), float(_snap(x0 + lw, 2)), float(_snap(y0 + lh, 2)))
        tex = bg_texture if spec.shared_texture else _texture(rng, h, w, spec.blur_radius)
        layers.append(SceneLayer(
            rect=rect,
            motion=_sample_motion(rng, h, w, spec.max_layer_shift,
                                  spec.affine_prob, spec.affine_mag),
            texture=tex))
    scene = LayeredScene(background=bg, layers=layers)
    return render_scene(scene, h, w, seed)


def render_scene(scene: LayeredScene, h: int, w: int, seed: int) -> SamplePair:
    px, py = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    stack = [scene.background] + scene.layers  # index 0 = background

    # frame 1: paste layer textures over the background, bottom to top
    img1 = scene.background.texture.copy()
    idx1 = np.zeros((h, w), dtype=np.intp)
    for i, layer in enumerate(scene.layers, start=1):
        inside = layer.contains(px, py)
        img1[:, inside] = layer.texture[:, inside]
        idx1[inside] = i

    # ground truth: displacement of the frame-1 topmost layer
    gt = np.zeros((2, h, w))
    for i, layer in enumerate(stack):
        sel = idx1 == i
        u, v = layer.motion.displacement(px, py)
        gt[0][sel] = u[sel]
        gt[1][sel] = v[sel]

    # frame 2: every layer re-rendered at its moved position, using the
    # inverse map so texture lookups stay in frame-1 coordinates
    img2 = np.empty((3, h, w))
    idx2 = np.zeros((h, w), dtype=np.intp)
    for i, layer in enumerate(stack):
        sx, sy = layer.motion.inverse_map(px, py)
        tex = _sample_bilinear(layer.texture, sx, sy)
        if i == 0:
            img2[:] = tex
            continue
        inside = layer.contains(sx, sy)
        img2[:, inside] = tex[:, inside]
        idx2[inside] = i

    # a pixel is photometrically matched iff its correspondence lands in
    # frame and still shows the same layer there
    tx, ty = px + gt[0], py + gt[1]
    in_frame = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    target_idx = np.zeros((h, w), dtype=np.intp)
    for i, layer in enumerate(stack[1:], start=1):
        sx, sy = layer.motion.inverse_map(tx, ty)
        inside = layer.contains(sx, sy)
        target_idx[inside] = i
    occl = (~in_frame) | (target_idx != idx1)
    return SamplePair(img1=img1, img2=img2, gt=gt, seed=seed, occlusion=occl)


def photometric_consistency(pair: SamplePair) -> float:
    """Mean |img1 - img2 warped by gt| over non-occluded pixels; the
    generator's own resampling-error оracle (should sit well under 0.02)."""
    h, w = pair.gt.shape[1:]
    px, py = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    rec = _sample_bilinear(pair.img2, px + pair.gt[0], py + pair.gt[1])
    valid = ~pair.occlusion
    if not valid.any():
        return 0.0
    return float(np.abs(rec - pair.img1)[:, valid].mean())


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentSpec:
    rotation_deg: float = 17.0      # shared rotation, uniform in +-range
    translation_px: float = 50.0    # shared shift at 512 px scale; scaled by H/512
    noise_sigma: float = 0.1        # per-image additive noise, sigma ~ U(0, this)
    jitter_sigma: float = 0.4       # brightness/contrast/saturation offsets ~ N(0, this)
    geometric: bool = True
    noise: bool = True
    jitter: bool = True


def geometric_transform(pair: SamplePair, theta_deg: float, tx: float, ty: float) -> SamplePair:
    """Apply the same rotation-about-center plus translation to both
    frames. The shared translation moves supports but leaves flow
    vectors unchanged; the rotation also rotates the vectors:
    new_gt(q) = R gt(T^-1 q)."""
    img1, img2, gt, occl = pair.img1, pair.img2, pair.gt, pair.occlusion
    h, w = gt.shape[1:]
    theta = np.deg2rad(theta_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    qx, qy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    # inverse map of q = R (p - c) + c + t
    dx, dy = qx - cx - tx, qy - cy - ty
    sx = cos * dx + sin * dy + cx
    sy = -sin * dx + cos * dy + cy
    img1 = _sample_bilinear(img1, sx, sy)
    img2 = _sample_bilinear(img2, sx, sy)
    fu = _sample_bilinear(gt[None, 0], sx, sy)[0]
    fv = _sample_bilinear(gt[None, 1], sx, sy)[0]
    gt = np.stack([cos * fu - sin * fv, sin * fu + cos * fv])
    if occl is not None:
        src_out = (sx < 0) | (sx > w - 1) | (sy < 0) | (sy > h - 1)
        occ = _sample_bilinear(occl[None].astype(np.float64), sx, sy)[0] > 0.0
        occl = occ | src_out
    return SamplePair(img1=img1, img2=img2, gt=gt, seed=pair.seed, occlusion=occl)


def augment(pair: SamplePair, spec: AugmentSpec, seed: int) -> SamplePair:
    """One shared geometric transform moves both frames; noise is drawn
    per image, jitter shared. Images are clamped to [0,1] after
    photometric ops."""
    rng = np.random.default_rng([417, seed])
    if spec.geometric:
        theta = rng.uniform(-spec.rotation_deg, spec.rotation_deg)
        r = spec.translation_px * pair.gt.shape[1] / 512.0
        tx, ty = rng.uniform(-r, r, 2)
        pair = geometric_transform(pair, theta, tx, ty)
    img1, img2, gt, occl = pair.img1, pair.img2, pair.gt, pair.occlusion

    photometric = spec.jitter or spec.noise
    if spec.jitter:
        b_off, c_off, s_off = rng.normal(0.0, spec.jitter_sigma, 3)
        imgs = []
        for img in (img1, img2):
            img = img + b_off
            mean = img.mean()
            img = mean + (img - mean) * (1.0 + c_off)
            gray = img.mean(axis=0, keepdims=True)
            img = gray + (img - gray) * (1.0 + s_off)
            imgs.append(img)
        img1, img2 = imgs
    if spec.noise:
        imgs = []
        for img in (img1, img2):
            sigma = rng.uniform(0.0, spec.noise_sigma)
            imgs.append(img + rng.normal(0.0, sigma, img.shape) if sigma > 0 else img)
        img1, img2 = imgs
    if photometric:
        img1 = np.clip(img1, 0.0, 1.0)
        img2 = np.clip(img2, 0.0, 1.0)

    return SamplePair(img1=img1, img2=img2, gt=gt, seed=pair.seed, occlusion=occl)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def flo_write(flow: np.ndarray, path: str):
    """Middlebury .flo: f32 magic 202021.25, i32 width, i32 height, then
    row-major interleaved (u, v) float32 pairs, little-endian."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise FloFormatError(f"flo_write: expected (2,H,W) flow, got {flow.shape}")
    if not np.isfinite(flow).all():
        raise FloFormatError("flo_write: flow has non-finite values")
    _, h, w = flow.shape
    with open(path, "wb") as fh:
        fh.write(np.array([FLO_MAGIC], dtype="<f4").tobytes())
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(flow.transpose(1, 2, 0), dtype="<f4").tobytes())


def flo_read(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12:
            raise FloFormatError(f"{path}: truncated header")
        magic = np.frombuffer(head[:4], dtype="<f4")[0]
        if magic != np.float32(FLO_MAGIC):
            raise FloFormatError(f"{path}: bad magic {magic!r}")
        w, h = (int(v) for v in np.frombuffer(head[4:], dtype="<i4"))
        if not (0 < w <= 10**6 and 0 < h <= 10**6):
            raise FloFormatError(f"{path}: unreasonable dimensions {w}x{h}")
        body = fh.read(8 * w * h + 1)
        if len(body) != 8 * w * h:
            raise FloFormatError(f"{path}: payload size mismatch for {w}x{h}")
    uv = np.frombuffer(body, dtype="<f4").reshape(h, w, 2)
    return uv.transpose(2, 0, 1).astype(np.float64)


def _pnm_quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def ppm_write(img: np.ndarray, path: str):
    """Binary PPM (P6), maxval 255, linear quantization from [0,1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise PnmFormatError(f"ppm_write: expected (3,H,W) image, got {img.shape}")
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_pnm_quantize(img).transpose(1, 2, 0).tobytes())


def pgm_write(img: np.ndarray, path: str):
    """Binary PGM (P5), maxval 255."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise PnmFormatError(f"pgm_write: expected (H,W) image, got {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_pnm_quantize(img).tobytes())


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace/comment-delimited header tokens and the
    offset just past the single whitespace byte that ends the header."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise PnmFormatError("truncated header")
        ch = data[i:i + 1]
        if ch in b" \t\r\n":
            i += 1
        elif ch == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(data) and data[j:j + 1] not in b" \t\r\n#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or data[i:i + 1] not in b" \t\r\n":
        raise PnmFormatError("header not terminated by whitespace")
    return tokens, i + 1


def _pnm_read(path: str, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, off = _pnm_tokens(data, 4)
    if tokens[0] != magic:
        raise PnmFormatError(f"{path}: bad magic {tokens[0]!r}, expected {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise PnmFormatError(f"{path}: non-numeric header field") from e
    if w <= 0 or h <= 0:
        raise PnmFormatError(f"{path}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise PnmFormatError(f"{path}: unsupported maxval {maxval}")
    body = data[off:]
    if len(body) != w * h * channels:
        raise PnmFormatError(f"{path}: payload size {len(body)} != {w * h * channels}")
    arr = np.frombuffer(body, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return arr.reshape(h, w)
    return arr.reshape(h, w, channels).transpose(2, 0, 1)


def ppm_read(path: str) -> np.ndarray:
    return _pnm_read(path, b"P6", 3)


def pgm_read(path: str) -> np.ndarray:
    return _pnm_read(path, b"P5", 1)


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Deterministic lazy sequence of synthetic pairs.

    Per-sample seeds are counter-derived from the dataset seed. The
    train/val split shuffles indices once (under the dataset seed) and
    assigns by position parity; callers slice those pools to size.
    """

    seed: int
    n: int
    h: int
    w: int
    n_layers: int | None = None
    augment_spec: AugmentSpec | None = None
    scene_spec: SceneSpec | None = None
    cache: bool = True
    _cached: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dataset needs n >= 1")
        perm = np.random.default_rng([self.seed, 1]).permutation(self.n)
        self._train = [int(i) for i in perm[0::2]]
        self._val = [int(i) for i in perm[1::2]]

    def __len__(self):
        return self.n

    @property
    def train_indices(self) -> list[int]:
        return list(self._train)

    @property
    def val_indices(self) -> list[int]:
        return list(self._val)

    def sample_seed(self, i: int) -> int:
        return self.seed * _SEED_STRIDE + i

    def pair(self, i: int) -> SamplePair:
        if not 0 <= i < self.n:
            raise IndexError(i)
        if self.cache and i in self._cached:
            return self._cached[i]
        p = generate_scene(self.sample_seed(i), self.h, self.w, self.n_layers,
                           self.scene_spec)
        if self.cache:
            self._cached[i] = p
        return p

    def augmented_pair(self, i: int, aug_seed: int) -> SamplePair:
        base = self.pair(i)
        if self.augment_spec is None:
            return base
        return augment(base, self.augment_spec, aug_seed)

    def __iter__(self):
        return (self.pair(i) for i in range(self.n))


def dataset(seed: int, n: int, h: int, w: int, n_layers: int | None = None,
            augment_spec: AugmentSpec | None = None,
            scene_spec: SceneSpec | None = None) -> Dataset:
    return Dataset(seed=seed, n=n, h=h, w=w, n_layers=n_layers,
                   augment_spec=augment_spec, scene_spec=scene_spec)


# ---------------------------------------------------------------------------
# on-disk datasets (gen-data output)
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"


def write_dataset(out_dir: str, seed: int, n: int, size: int,
                  n_layers: int | None = None) -> list[str]:
    """Render n pairs into out_dir as PPM frames plus .flo ground truth,
    then write the manifest last (atomically) so a failed run leaves no
    usable manifest behind."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    ds = Dataset(seed=seed, n=n, h=size, w=size, n_layers=n_layers, cache=False)
    for i in range(n):
        pair = ds.pair(i)
        img1 = f"pair_{i:05d}_img1.ppm"
        img2 = f"pair_{i:05d}_img2.ppm"
        flo = f"pair_{i:05d}_flow.flo"
        ppm_write(pair.img1, os.path.join(out_dir, img1))
        ppm_write(pair.img2, os.path.join(out_dir, img2))
        flo_write(pair.gt, os.path.join(out_dir, flo))
        rows.append(f"{i} {ds.sample_seed(i)} {img1} {img2} {flo}")
    header = f"# smflow-dataset seed={seed} n={n} size={size} layers={n_layers or 0}"
    tmp = os.path.join(out_dir, MANIFEST_NAME + ".tmp")
    with open(tmp, "w") as fh:
        fh.write("\n".join([header] + rows) + "\n")
    os.replace(tmp, os.path.join(out_dir, MANIFEST_NAME))
    return rows


@dataclass
class DiskDataset:
    """Dataset interface over a gen-data directory; split logic matches
    the in-memory Dataset (parity of a seed-shuffled permutation)."""

    root: str
    augment_spec: AugmentSpec | None = None
    cache: bool = True
    _cached: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        path = os.path.join(self.root, MANIFEST_NAME)
        if not os.path.exists(path):
            raise FileNotFoundError(f"no {MANIFEST_NAME} in {self.root}")
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines or not lines[0].startswith("# smflow-dataset"):
            raise ValueError(f"{path}: missing dataset header")
        fields = dict(kv.split("=") for kv in lines[0].split()[2:])
        self.seed = int(fields["seed"])
        self.n = int(fields["n"])
        self.size = int(fields["size"])
        self._rows = []
        for ln in lines[1:]:
            idx, pseed, img1, img2, flo = ln.split()
            self._rows.append((int(idx), int(pseed), img1, img2, flo))
        if len(self._rows) != self.n:
            raise ValueError(f"{path}: {len(self._rows)} rows, header says n={self.n}")
        perm = np.random.default_rng([self.seed, 1]).permutation(self.n)
        self._train = [int(i) for i in perm[0::2]]
        self._val = [int(i) for i in perm[1::2]]

    def __len__(self):
        return self.n

    @property
    def train_indices(self) -> list[int]:
        return list(self._train)

    @property
    def val_indices(self) -> list[int]:
        return list(self._val)

    def pair(self, i: int) -> SamplePair:
        if self.cache and i in self._cached:
            return self._cached[i]
        idx, pseed, img1, img2, flo = self._rows[i]
        p = SamplePair(
            img1=ppm_read(os.path.join(self.root, img1)),
            img2=ppm_read(os.path.join(self.root, img2)),
            gt=flo_read(os.path.join(self.root, flo)),
            seed=pseed,
        )
        if self.cache:
            self._cached[i] = p
        return p

    def augmented_pair(self, i: int, aug_seed: int) -> SamplePair:
        base = self.pair(i)
        if self.augment_spec is None:
            return base
        return augment(base, self.augment_spec, aug_seed)
