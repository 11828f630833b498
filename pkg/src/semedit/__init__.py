"""semedit: box-driven semantic image editing.

A labeled bounding box is expanded into a pixel-wise semantic layout by a
structure generator, then an image generator renders the edit window
conditioned on that layout and the surrounding pixels.  The package covers
the full loop: synthetic scene data, adversarial training, metrics and
ablation reports, an editing engine, and an HTTP editing service.
"""

__version__ = "0.1.0"

from semedit.scene import (
    ImageInputs,
    ManipulationOp,
    ManipulationWindow,
    RasterImage,
    SemanticLayout,
    StructureInputs,
)

__all__ = [
    "SemanticLayout",
    "RasterImage",
    "ManipulationOp",
    "ManipulationWindow",
    "StructureInputs",
    "ImageInputs",
    "__version__",
]
