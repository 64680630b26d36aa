"""PNG export for rendered images."""

from pathlib import Path

import numpy as np
from PIL import Image

from .tensorio import DatasetError


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map an H x W x 3 float image in [0, 1] to 8-bit RGB."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError(f"expected an H x W x 3 image (got shape {image.shape})")
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path: Path, image: np.ndarray, scale: int = 1) -> None:
    """Write ``image`` as PNG, optionally upscaled by nearest neighbour."""
    path = Path(path)
    pil = Image.fromarray(to_uint8(image))
    if scale > 1:
        pil = pil.resize((pil.width * scale, pil.height * scale), Image.NEAREST)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pil.save(path, format="PNG")
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e


def load_png(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as pil:
            return np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise DatasetError(path, e) from e
