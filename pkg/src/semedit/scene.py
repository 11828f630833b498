"""Scene data model: semantic layouts, boxes, edit windows, crop/paste.

Everything here is pure and immutable-by-convention: functions return fresh
arrays and never mutate their inputs, so the whole module is safe to call
concurrently.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

LAYOUT_ATOL = 1e-5


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


# ---------------------------------------------------------------------------
# palettes


@dataclass(frozen=True)
class Palette:
    """Class-id -> (name, display color) table; ids run 1..C, 0 means deletion."""

    names: tuple[str, ...]
    colors: tuple[tuple[int, int, int], ...]

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def name(self, class_id: int) -> str:
        return self.names[class_id - 1]

    def color(self, class_id: int) -> tuple[int, int, int]:
        return self.colors[class_id - 1]

    def to_json(self):
        return [
            {"id": i + 1, "name": n, "color": list(c)}
            for i, (n, c) in enumerate(zip(self.names, self.colors))
        ]

    @classmethod
    def from_json(cls, rows):
        rows = sorted(rows, key=lambda r: r["id"])
        return cls(tuple(r["name"] for r in rows), tuple(tuple(r["color"]) for r in rows))

    @classmethod
    def default(cls, num_classes: int) -> "Palette":
        hues = np.linspace(0.0, 1.0, num_classes, endpoint=False)
        colors = []
        for h in hues:
            i = int(h * 6) % 6
            f = h * 6 - int(h * 6)
            v, p, q, t = 230, 60, int(230 - 170 * f), int(60 + 170 * f)
            rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
            colors.append(tuple(int(x) for x in rgb))
        return cls(tuple(f"class{i + 1}" for i in range(num_classes)), tuple(colors))


# ---------------------------------------------------------------------------
# core value types


class SemanticLayout:
    """Per-pixel class distribution over C channels (H, W, C), rows sum to 1."""

    __slots__ = ("data", "palette")

    def __init__(self, data: np.ndarray, palette: Palette | None = None):
        data = np.asarray(data)
        if data.ndim != 3:
            raise ValidationError(f"layout must be HxWxC, got shape {data.shape}")
        h, w, c = data.shape
        if c < 2:
            raise ValidationError("layout needs at least 2 classes")
        if h < 1 or w < 1:
            raise ValidationError("layout needs positive spatial size")
        if data.min() < -LAYOUT_ATOL or data.max() > 1 + LAYOUT_ATOL:
            raise ValidationError("layout values must lie in [0, 1]")
        sums = data.sum(axis=-1)
        if np.abs(sums - 1.0).max() > LAYOUT_ATOL:
            raise ValidationError("per-pixel channel sums must be 1")
        self.data = data
        self.palette = palette if palette is not None else Palette.default(c)

    @property
    def shape(self):
        return self.data.shape

    @property
    def num_classes(self) -> int:
        return self.data.shape[-1]


class RasterImage:
    """RGB image (H, W, 3) with values in [0, 1]."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim != 3 or data.shape[-1] != 3:
            raise ValidationError(f"image must be HxWx3, got shape {data.shape}")
        if data.min() < 0 or data.max() > 1:
            raise ValidationError("image values must lie in [0, 1]")
        self.data = data

    @property
    def shape(self):
        return self.data.shape


Box = tuple[int, int, int, int]  # (x1, y1, x2, y2), half-open pixel coords


@dataclass(frozen=True)
class ManipulationOp:
    """One box edit: class_id >= 1 adds/replaces that class, 0 deletes."""

    box: Box
    class_id: int
    style: tuple[float, float, float] | None = None

    def validate(self, image_size: tuple[int, int], num_classes: int) -> "ManipulationOp":
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValidationError(f"degenerate box {self.box}")
        w, h = image_size
        if x2 <= 0 or y2 <= 0 or x1 >= w or y1 >= h:
            raise ValidationError(f"box {self.box} does not intersect the image")
        if not 0 <= self.class_id <= num_classes:
            raise ValidationError(f"class_id {self.class_id} outside 0..{num_classes}")
        if self.style is not None:
            s = tuple(float(v) for v in self.style)
            if len(s) != 3 or min(s) < 0 or max(s) > 1:
                raise ValidationError("style must be a 3-vector in [0,1]")
        return self


@dataclass(frozen=True)
class ManipulationWindow:
    """Square crop descriptor centered on an op box.

    origin may stick out of the image; pad records the overhang per side
    (top, bottom, left, right).  net_size is the resolution the generators
    consume after resampling the S x S crop.
    """

    origin: tuple[int, int]
    size: int
    pad: tuple[int, int, int, int]
    net_size: int

    @property
    def scale(self) -> float:
        return self.net_size / self.size


@dataclass(frozen=True)
class StructureInputs:
    """Inputs to the structure generator: masked layout and box mask, both S x S."""

    masked_layout: np.ndarray  # (S, S, C)
    box_mask: np.ndarray       # (S, S, 1) binary


@dataclass(frozen=True)
class ImageInputs:
    """Inputs to the image generator: zeroed-box image, layout, feature gate."""

    masked_image: np.ndarray   # (S, S, 3)
    layout: np.ndarray         # (S, S, C)
    feature_gate: np.ndarray   # (S/stride, S/stride, 1) binary


# ---------------------------------------------------------------------------
# layout encode/decode


def encode_layout(index_map: np.ndarray, num_classes: int,
                  palette: Palette | None = None) -> SemanticLayout:
    """One-hot a (H, W) grid of class ids in 1..C into a SemanticLayout."""
    idx = np.asarray(index_map)
    if idx.ndim != 2:
        raise ValidationError("index map must be 2-D")
    if idx.min() < 1 or idx.max() > num_classes:
        raise ValidationError(
            f"class ids must lie in 1..{num_classes}, got range "
            f"[{idx.min()}, {idx.max()}]")
    data = np.zeros((*idx.shape, num_classes), dtype=np.float32)
    np.put_along_axis(data, idx[..., None].astype(np.int64) - 1, 1.0, axis=-1)
    return SemanticLayout(data, palette)


def decode_layout(layout: SemanticLayout) -> np.ndarray:
    """Per-pixel argmax back to class ids 1..C; ties go to the lowest id."""
    return np.argmax(layout.data, axis=-1).astype(np.int32) + 1


# ---------------------------------------------------------------------------
# windows


def window_for_box(box: Box, image_size: tuple[int, int], context_factor: float = 2.0,
                   stride: int = 8, net_size: int = 64) -> ManipulationWindow:
    """Square window centered on the box with `context_factor` times its long side.

    The side S is snapped up to a multiple of `stride`; out-of-image overhang
    is recorded per side so crops can be padded and pastes can ignore it.
    """
    x1, y1, x2, y2 = box
    bw, bh = x2 - x1, y2 - y1
    if bw <= 0 or bh <= 0:
        raise ValidationError(f"degenerate box {box}")
    side = max(bw, bh)
    s0 = max(math.ceil(context_factor * side), side)
    s = int(math.ceil(s0 / stride) * stride)
    cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
    ox = math.floor(cx - s / 2.0 + 0.5)
    oy = math.floor(cy - s / 2.0 + 0.5)
    w, h = image_size
    pad = (max(0, -oy), max(0, oy + s - h), max(0, -ox), max(0, ox + s - w))
    return ManipulationWindow(origin=(ox, oy), size=s, pad=pad, net_size=net_size)


def crop_window(grid: np.ndarray, window: ManipulationWindow,
                pad_channel: int | None = None) -> np.ndarray:
    """Crop the S x S window out of (H, W, K) data.

    Out-of-image area is zero for images/masks, or one-hot `pad_channel`
    for layouts (the designated background class).
    """
    h, w, k = grid.shape
    s = window.size
    ox, oy = window.origin
    out = np.zeros((s, s, k), dtype=grid.dtype)
    if pad_channel is not None:
        out[:, :, pad_channel] = 1.0
    sx1, sy1 = max(0, ox), max(0, oy)
    sx2, sy2 = min(w, ox + s), min(h, oy + s)
    if sx1 < sx2 and sy1 < sy2:
        out[sy1 - oy:sy2 - oy, sx1 - ox:sx2 - ox] = grid[sy1:sy2, sx1:sx2]
    return out


def paste_region(full: np.ndarray, window: ManipulationWindow, patch: np.ndarray,
                 region: Box) -> np.ndarray:
    """Copy `region` (image coords) of an S x S patch back onto the full grid.

    Only pixels inside region AND the image are written; everything else is
    returned untouched.
    """
    h, w = full.shape[:2]
    s = window.size
    ox, oy = window.origin
    if patch.shape[0] != s or patch.shape[1] != s:
        raise ValidationError(f"patch must be {s}x{s}, got {patch.shape[:2]}")
    rx1, ry1, rx2, ry2 = region
    if rx1 < ox or ry1 < oy or rx2 > ox + s or ry2 > oy + s:
        raise ValidationError(f"region {region} sticks out of window")
    out = full.copy()
    x1, y1 = max(rx1, 0), max(ry1, 0)
    x2, y2 = min(rx2, w), min(ry2, h)
    if x1 < x2 and y1 < y2:
        out[y1:y2, x1:x2] = patch[y1 - oy:y2 - oy, x1 - ox:x2 - ox]
    return out


# ---------------------------------------------------------------------------
# resampling and box arithmetic


def resize_bilinear(arr: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resample (H, W, K) -> (size, size, K); rows of a layout stay on
    the simplex because output pixels are convex combinations of inputs."""
    h, w = arr.shape[:2]
    if h == size and w == size:
        return arr.copy()
    ys = (np.arange(size) + 0.5) * (h / size) - 0.5
    xs = (np.arange(size) + 0.5) * (w / size) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    a = arr[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
    b = arr[np.ix_(y0, x1)] * (1 - fy) * fx
    c = arr[np.ix_(y1, x0)] * fy * (1 - fx)
    d = arr[np.ix_(y1, x1)] * fy * fx
    return (a + b + c + d).astype(arr.dtype)


def resize_nearest(arr: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resample; preserves one-hot layouts and binary masks."""
    h, w = arr.shape[:2]
    if h == size and w == size:
        return arr.copy()
    ys = np.clip(((np.arange(size) + 0.5) * (h / size)).astype(int), 0, h - 1)
    xs = np.clip(((np.arange(size) + 0.5) * (w / size)).astype(int), 0, w - 1)
    return arr[np.ix_(ys, xs)].copy()


def clip_box(box: Box, image_size: tuple[int, int]) -> Box | None:
    x1, y1, x2, y2 = box
    w, h = image_size
    x1, y1, x2, y2 = max(0, x1), max(0, y1), min(w, x2), min(h, y2)
    if x1 >= x2 or y1 >= y2:
        return None
    return (x1, y1, x2, y2)


def box_to_window_scale(box: Box, window: ManipulationWindow) -> Box:
    """Map an image-coordinate box into the window's net-resolution grid.

    Uses floor/ceil so the mapped box covers the true region and never
    collapses; clamped to the net grid.
    """
    ox, oy = window.origin
    r = window.scale
    x1 = math.floor((box[0] - ox) * r)
    y1 = math.floor((box[1] - oy) * r)
    x2 = math.ceil((box[2] - ox) * r)
    y2 = math.ceil((box[3] - oy) * r)
    n = window.net_size
    x1, y1 = min(max(x1, 0), n - 1), min(max(y1, 0), n - 1)
    x2, y2 = max(min(x2, n), x1 + 1), max(min(y2, n), y1 + 1)
    return (x1, y1, x2, y2)


# ---------------------------------------------------------------------------
# generator input construction


def make_structure_inputs(layout: SemanticLayout, op: ManipulationOp,
                          window: ManipulationWindow,
                          background_class: int = 1) -> StructureInputs:
    """Build the masked layout and box mask the structure generator consumes.

    The window crop is resampled (nearest) to net resolution, then the box
    interior is overwritten: one-hot `op.class_id` for additions, all-zero
    channels for deletion (class 0 has no channel; the box mask still marks
    the edit region).
    """
    h, w, c = layout.shape
    op.validate((w, h), c)
    if clip_box(op.box, (w, h)) is None:
        raise ValidationError("op box does not overlap the image")
    crop = crop_window(layout.data, window, pad_channel=background_class - 1)
    net = resize_nearest(crop, window.net_size)
    bx1, by1, bx2, by2 = box_to_window_scale(op.box, window)
    masked = net.astype(np.float32, copy=True)
    masked[by1:by2, bx1:bx2, :] = 0.0
    if op.class_id >= 1:
        masked[by1:by2, bx1:bx2, op.class_id - 1] = 1.0
    box_mask = np.zeros((window.net_size, window.net_size, 1), dtype=np.float32)
    box_mask[by1:by2, bx1:bx2, 0] = 1.0
    return StructureInputs(masked_layout=masked, box_mask=box_mask)


def make_image_inputs(image: RasterImage, layout: SemanticLayout, op: ManipulationOp,
                      window: ManipulationWindow, stride: int = 8,
                      background_class: int = 1) -> ImageInputs:
    """Build the image-generator inputs: box-zeroed image window, conditioning
    layout, and the box mask max-pooled onto the (net/stride)^2 feature grid.

    `layout` is the already-composed conditioning layout; pass it either at
    full scene scale (it gets cropped like the image) or pre-cropped at net
    resolution.
    """
    h, w = image.data.shape[:2]
    crop = crop_window(image.data, window, pad_channel=None)
    net_img = resize_bilinear(crop, window.net_size).astype(np.float32)
    n = window.net_size
    if layout.data.shape[0] == n and layout.data.shape[1] == n:
        net_layout = layout.data.astype(np.float32)
    elif layout.data.shape[:2] == (h, w):
        net_layout = resize_nearest(
            crop_window(layout.data, window, pad_channel=background_class - 1),
            n).astype(np.float32)
    else:
        raise ValidationError("layout must be scene-sized or net-sized")
    bx1, by1, bx2, by2 = box_to_window_scale(op.box, window)
    masked = net_img.copy()
    masked[by1:by2, bx1:bx2, :] = 0.0
    if n % stride:
        raise ValidationError("net size must be divisible by the feature stride")
    g = n // stride
    gate = np.zeros((g, g, 1), dtype=np.float32)
    gx1, gy1 = bx1 // stride, by1 // stride
    gx2, gy2 = (bx2 + stride - 1) // stride, (by2 + stride - 1) // stride
    gate[gy1:gy2, gx1:gx2, 0] = 1.0
    return ImageInputs(masked_image=masked, layout=net_layout, feature_gate=gate)


# ---------------------------------------------------------------------------
# PNG io


def save_image_png(path, image: RasterImage) -> None:
    arr = np.clip(np.round(image.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image_png(path) -> RasterImage:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return RasterImage(arr)


def save_layout_png(path, layout: SemanticLayout) -> None:
    """Write the layout as an 8-bit single-channel class-id PNG (ids 1..C)."""
    Image.fromarray(decode_layout(layout).astype(np.uint8), mode="L").save(path, format="PNG")


def load_layout_png(path, num_classes: int, palette: Palette | None = None) -> SemanticLayout:
    idx = np.asarray(Image.open(path).convert("L"))
    return encode_layout(idx.astype(np.int32), num_classes, palette)
