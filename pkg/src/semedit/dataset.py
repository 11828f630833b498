"""Dataset manifest format and loading.

Directory layout::

    meta.json            num_classes, class names, foreground ids, item ids, ...
    images/{id}.png      8-bit RGB
    layouts/{id}.png     8-bit single channel, pixel value = class id (1..C)
    instances/{id}.json  [{class_id, bbox: [x1,y1,x2,y2], mask: RLE string}]

The instance mask RLE covers the bbox region, row-major, as alternating run
lengths starting with a zero-run (COCO-style uncompressed counts).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from semedit.scene import Palette, RasterImage, SemanticLayout, encode_layout, load_image_png

# The street-scene class split used by the full-scale configs; kept here so
# external manifests can reuse it.
CITYSCAPES_FOREGROUND = ("person", "rider", "car", "truck", "bus", "caravan",
                         "trailer", "train", "motorcycle", "bicycle")


class DatasetError(RuntimeError):
    pass


def rle_encode(mask: np.ndarray) -> str:
    """Run-length encode a 2-D boolean mask (row-major, first run counts zeros)."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return ""
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return " ".join(str(r) for r in runs)


def rle_decode(rle: str, height: int, width: int) -> np.ndarray:
    counts = [int(x) for x in rle.split()] if rle else []
    flat = np.zeros(height * width, dtype=bool)
    pos, val = 0, False
    for run in counts:
        if val:
            flat[pos:pos + run] = True
        pos += run
        val = not val
    if pos != height * width and counts:
        raise DatasetError(f"RLE covers {pos} pixels, expected {height * width}")
    return flat.reshape(height, width)


@dataclass(frozen=True)
class Instance:
    class_id: int
    box: tuple[int, int, int, int]
    mask: np.ndarray  # full-canvas boolean visibility mask

    def to_json(self):
        x1, y1, x2, y2 = self.box
        return {"class_id": int(self.class_id), "bbox": [int(x1), int(y1), int(x2), int(y2)],
                "mask": rle_encode(self.mask[y1:y2, x1:x2])}

    @classmethod
    def from_json(cls, d, canvas_hw):
        x1, y1, x2, y2 = d["bbox"]
        mask = np.zeros(canvas_hw, dtype=bool)
        mask[y1:y2, x1:x2] = rle_decode(d["mask"], y2 - y1, x2 - x1)
        return cls(class_id=int(d["class_id"]), box=(x1, y1, x2, y2), mask=mask)


@dataclass
class SceneExample:
    item_id: str
    image: np.ndarray       # (H, W, 3) float32 in [0,1]
    layout_index: np.ndarray  # (H, W) int class ids 1..C
    instances: list[Instance]

    def layout(self, num_classes: int, palette: Palette | None = None) -> SemanticLayout:
        return encode_layout(self.layout_index, num_classes, palette)


@dataclass
class DatasetManifest:
    root: Path
    num_classes: int
    class_names: tuple[str, ...]
    foreground_ids: tuple[int, ...]
    background_class: int
    item_ids: tuple[str, ...]
    palette: Palette

    @classmethod
    def read(cls, root) -> "DatasetManifest":
        root = Path(root)
        meta_path = root / "meta.json"
        if not meta_path.exists():
            raise DatasetError(f"no meta.json under {root}")
        meta = json.loads(meta_path.read_text())
        palette = (Palette.from_json(meta["palette"]) if "palette" in meta
                   else Palette.default(meta["num_classes"]))
        return cls(root=root, num_classes=meta["num_classes"],
                   class_names=tuple(meta["class_names"]),
                   foreground_ids=tuple(meta["foreground_ids"]),
                   background_class=meta.get("background_class", 1),
                   item_ids=tuple(meta["items"]), palette=palette)


class SceneDataset:
    """Loads every item eagerly (images as uint8) and decodes on access."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._images = []
        self._layouts = []
        self._instances = []
        for item_id in manifest.item_ids:
            try:
                img = load_image_png(manifest.root / "images" / f"{item_id}.png")
                from PIL import Image as _PILImage
                lay = np.asarray(_PILImage.open(
                    manifest.root / "layouts" / f"{item_id}.png").convert("L")).astype(np.int32)
                rows = json.loads(
                    (manifest.root / "instances" / f"{item_id}.json").read_text())
            except (OSError, json.JSONDecodeError, KeyError) as e:
                raise DatasetError(f"item '{item_id}': {e}") from e
            if lay.min() < 1 or lay.max() > manifest.num_classes:
                raise DatasetError(f"item '{item_id}': layout ids outside 1..C")
            self._images.append((img.data * 255.0 + 0.5).astype(np.uint8))
            self._layouts.append(lay)
            self._instances.append([Instance.from_json(r, lay.shape) for r in rows])

    def __len__(self):
        return len(self.manifest.item_ids)

    def __getitem__(self, i: int) -> SceneExample:
        return SceneExample(
            item_id=self.manifest.item_ids[i],
            image=self._images[i].astype(np.float32) / 255.0,
            layout_index=self._layouts[i],
            instances=self._instances[i])

    def foreground_instances(self, i: int) -> list[Instance]:
        fg = set(self.manifest.foreground_ids)
        return [inst for inst in self._instances[i] if inst.class_id in fg]


def load_dataset(root) -> SceneDataset:
    return SceneDataset(DatasetManifest.read(root))


def split_classes(manifest: DatasetManifest,
                  foreground_ids) -> tuple[set[int], set[int]]:
    """Partition 1..C into (foreground, background); both sides validated."""
    fg = set(int(i) for i in foreground_ids)
    all_ids = set(range(1, manifest.num_classes + 1))
    unknown = fg - all_ids
    if unknown:
        raise DatasetError(f"unknown class ids {sorted(unknown)}")
    if not fg:
        raise DatasetError("foreground set is empty; nothing to manipulate")
    return fg, all_ids - fg


def convert_external_dataset(*_args, **_kwargs):
    """Stub for converting external corpora (e.g. street-scene benchmarks) into
    the manifest format above: write images/ layouts/ instances/ plus meta.json
    with your class table and foreground ids.  This repo does not download or
    convert external data.
    """
    raise NotImplementedError(
        "write images/{id}.png, layouts/{id}.png (class-id PNG), "
        "instances/{id}.json and meta.json as documented in semedit.dataset")
