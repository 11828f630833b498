"""Procedural street-flavored scenes with exact instance masks.

Scenes are horizontal strata (sky / building / walkway / road) with textured
colors under a per-scene lighting factor, plus parameterized foreground
shapes: vehicles on the road scaled by depth, persons on the walkway, shrubs
along the building line.  Class identity, vertical placement, size and color
are all correlated with context, so context-aware models have real signal to
exploit.  Generation is a pure function of (spec, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from semedit.dataset import DatasetManifest, Instance
from semedit.scene import Palette, RasterImage, save_image_png

SKY, BUILDING, WALKWAY, ROAD, VEHICLE, PERSON, SHRUB = range(1, 8)

CLASS_NAMES = ("sky", "building", "walkway", "road", "vehicle", "person", "shrub")

PALETTE = Palette(
    names=CLASS_NAMES,
    colors=((120, 180, 240), (140, 125, 115), (170, 165, 155), (90, 90, 100),
            (200, 60, 50), (240, 170, 60), (60, 160, 70)),
)

VEHICLE_COLORS = np.array([
    (0.75, 0.15, 0.12), (0.15, 0.25, 0.65), (0.85, 0.85, 0.88),
    (0.15, 0.15, 0.17), (0.70, 0.55, 0.15),
])
SHIRT_COLORS = np.array([
    (0.85, 0.30, 0.25), (0.25, 0.55, 0.80), (0.90, 0.75, 0.20), (0.45, 0.75, 0.35),
])


@dataclass(frozen=True)
class SceneSpec:
    size: int = 96
    num_classes: int = 7
    foreground_ids: tuple[int, ...] = (VEHICLE, PERSON, SHRUB)
    background_class: int = ROAD  # padding class for out-of-image layout area
    min_instances: int = 1
    max_instances: int = 4
    class_weights: tuple[float, ...] = (0.45, 0.35, 0.20)  # vehicle, person, shrub
    lighting: tuple[float, float] = (0.60, 1.05)
    noise_sigma: float = 0.015

    def to_dict(self):
        return {"size": self.size, "num_classes": self.num_classes,
                "foreground_ids": list(self.foreground_ids),
                "background_class": self.background_class,
                "min_instances": self.min_instances, "max_instances": self.max_instances,
                "class_weights": list(self.class_weights),
                "lighting": list(self.lighting), "noise_sigma": self.noise_sigma}

    @classmethod
    def from_dict(cls, d):
        return cls(size=d["size"], num_classes=d["num_classes"],
                   foreground_ids=tuple(d["foreground_ids"]),
                   background_class=d["background_class"],
                   min_instances=d["min_instances"], max_instances=d["max_instances"],
                   class_weights=tuple(d["class_weights"]),
                   lighting=tuple(d["lighting"]), noise_sigma=d["noise_sigma"])


BASE_COLORS = {
    SKY: (0.55, 0.70, 0.95),
    BUILDING: (0.55, 0.49, 0.45),
    WALKWAY: (0.66, 0.64, 0.60),
    ROAD: (0.33, 0.33, 0.38),
}


def _disk(owner, cy, cx, r, idx):
    h, w = owner.shape
    y0, y1 = max(0, int(cy - r)), min(h, int(cy + r + 1))
    x0, x1 = max(0, int(cx - r)), min(w, int(cx + r + 1))
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    owner[y0:y1, x0:x1][(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = idx


def _rect(owner, y0, y1, x0, x1, idx):
    h, w = owner.shape
    y0, y1 = max(0, int(y0)), min(h, int(y1))
    x0, x1 = max(0, int(x0)), min(w, int(x1))
    if y0 < y1 and x0 < x1:
        owner[y0:y1, x0:x1] = idx


def _draw_vehicle(owner, color_map, rng, bands, light, idx):
    h, w = owner.shape
    h3 = bands[2]
    y_base = rng.uniform(h3 + 3, h - 2)
    depth = (y_base - h3) / max(h - h3, 1)
    width = (12 + 20 * depth) * rng.uniform(0.85, 1.15)
    height = width * rng.uniform(0.42, 0.55)
    x0 = rng.uniform(1, max(w - width - 1, 2))
    body_top = y_base - height
    color = VEHICLE_COLORS[rng.integers(len(VEHICLE_COLORS))] * light
    _rect(owner, body_top, y_base, x0, x0 + width, idx)
    # cabin on top of the body
    _rect(owner, body_top - height * 0.45, body_top,
          x0 + width * 0.2, x0 + width * 0.75, idx)
    # wheels
    r = max(height * 0.22, 1.2)
    _disk(owner, y_base - r * 0.4, x0 + width * 0.22, r, idx)
    _disk(owner, y_base - r * 0.4, x0 + width * 0.78, r, idx)
    region = owner == idx
    color_map[region] = color
    # darker window strip in the cabin
    win = np.zeros_like(region)
    _rect(win, body_top - height * 0.38, body_top - height * 0.05,
          x0 + width * 0.25, x0 + width * 0.7, 1)
    color_map[region & (win > 0)] = color * 0.45
    return region


def _draw_person(owner, color_map, rng, bands, light, idx):
    h, w = owner.shape
    h2, h3 = bands[1], bands[2]
    y_base = rng.uniform(h2 + 3, min(h3 + 5, h - 2))
    rel = (y_base - h2) / max(h3 + 5 - h2, 1)
    height = (9 + 11 * rel) * rng.uniform(0.85, 1.15)
    width = height * rng.uniform(0.30, 0.40)
    cx = rng.uniform(2, w - 3)
    head_r = max(width * 0.42, 1.0)
    body_top = y_base - height * 0.72
    _rect(owner, body_top, y_base, cx - width / 2, cx + width / 2, idx)
    _disk(owner, body_top - head_r, cx, head_r, idx)
    region = owner == idx
    shirt = SHIRT_COLORS[rng.integers(len(SHIRT_COLORS))] * light
    pants = np.array([0.18, 0.18, 0.25]) * light
    skin = np.array([0.85, 0.65, 0.50]) * light
    color_map[region] = shirt
    legs = np.zeros_like(region)
    _rect(legs, y_base - height * 0.32, y_base, cx - width / 2, cx + width / 2, 1)
    color_map[region & (legs > 0)] = pants
    head = np.zeros_like(region)
    _disk(head, body_top - head_r, cx, head_r, 1)
    color_map[region & (head > 0)] = skin
    return region


def _draw_shrub(owner, color_map, rng, bands, light, idx):
    h, w = owner.shape
    h1, h2 = bands[0], bands[1]
    cy = rng.uniform(h1 + 4, h2 + 4)
    r = rng.uniform(3.0, 6.5)
    cx = rng.uniform(2, w - 3)
    _disk(owner, cy, cx, r, idx)
    _disk(owner, cy - r * 0.5, cx - r * 0.6, r * 0.7, idx)
    _disk(owner, cy - r * 0.4, cx + r * 0.6, r * 0.65, idx)
    region = owner == idx
    green = np.array([0.20 + rng.uniform(0, 0.1), 0.55 + rng.uniform(0, 0.15),
                      0.22 + rng.uniform(0, 0.08)]) * light
    color_map[region] = green
    return region


_DRAWERS = {VEHICLE: _draw_vehicle, PERSON: _draw_person, SHRUB: _draw_shrub}


def generate_scene(spec: SceneSpec, rng: np.random.Generator):
    """One scene: (image float32, layout ids, instances)."""
    n = spec.size
    h1 = int(n * rng.uniform(0.18, 0.30))
    h2 = int(n * rng.uniform(0.45, 0.58))
    h3 = int(n * rng.uniform(0.62, 0.74))
    bands = (h1, h2, h3)
    cols = np.arange(n)
    jitter = np.round(1.5 * np.sin(cols / n * 2 * np.pi * rng.uniform(0.5, 2.0)
                                   + rng.uniform(0, 6.28))).astype(int)
    rows = np.arange(n)[:, None]
    layout = np.full((n, n), ROAD, dtype=np.int32)
    layout[rows < (h3 + jitter)] = WALKWAY
    layout[rows < (h2 + jitter)] = BUILDING
    layout[rows < (h1 + jitter)] = SKY

    light = rng.uniform(*spec.lighting)
    image = np.zeros((n, n, 3), dtype=np.float64)
    for cid, base in BASE_COLORS.items():
        image[layout == cid] = np.array(base) * light
    # texture: building stripes, road center dashes, vertical shading
    stripe = (rows // 3 % 2 == 0) & (np.broadcast_to(layout == BUILDING, (n, n)))
    image[stripe] *= 0.92
    dash_col = n // 2 + rng.integers(-6, 7)
    dashes = np.zeros((n, n), dtype=bool)
    dashes[h3 + 2:n:6, max(dash_col - 1, 0):dash_col + 1] = True
    image[dashes & (layout == ROAD)] = np.array([0.8, 0.8, 0.75]) * light
    image *= (0.92 + 0.16 * (rows / n))

    owner = np.zeros((n, n), dtype=np.int32)
    count = int(rng.integers(spec.min_instances, spec.max_instances + 1))
    classes = rng.choice(list(spec.foreground_ids), size=count,
                         p=list(spec.class_weights))
    # depth rule: later-drawn instances sit in front and occlude earlier ones
    order = [(k, int(cid)) for k, cid in enumerate(classes, start=1)]
    for k, cid in order:
        _DRAWERS[cid](owner, image, rng, bands, light, k)
    instances = []
    for k, cid in order:
        visible = owner == k
        if not visible.any():
            continue
        ys, xs = np.nonzero(visible)
        box = (int(xs.min()), int(ys.min()), int(xs.max() + 1), int(ys.max() + 1))
        layout[visible] = cid
        instances.append(Instance(class_id=cid, box=box, mask=visible))

    image += rng.normal(0.0, spec.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return image, layout, instances


def generate_synthetic_dataset(spec: SceneSpec, n: int, seed: int,
                               out_dir) -> DatasetManifest:
    """Write n scenes in manifest format; byte-identical for identical (spec, seed)."""
    if n < 1:
        raise ValueError("need n >= 1 scenes")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "layouts").mkdir(exist_ok=True)
    (out / "instances").mkdir(exist_ok=True)
    item_ids = []
    from PIL import Image as PILImage
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        image, layout, instances = generate_scene(spec, rng)
        item_id = f"scene{i:05d}"
        item_ids.append(item_id)
        save_image_png(out / "images" / f"{item_id}.png", RasterImage(image))
        PILImage.fromarray(layout.astype(np.uint8), mode="L").save(
            out / "layouts" / f"{item_id}.png", format="PNG")
        rows = [inst.to_json() for inst in instances]
        (out / "instances" / f"{item_id}.json").write_text(
            json.dumps(rows, sort_keys=True))
    meta = {
        "num_classes": spec.num_classes,
        "class_names": list(CLASS_NAMES),
        "foreground_ids": list(spec.foreground_ids),
        "background_class": spec.background_class,
        "items": item_ids,
        "palette": PALETTE.to_json(),
        "scene_spec": spec.to_dict(),
        "seed": seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return DatasetManifest.read(out)
