import logging
import re
from pathlib import Path

import numpy as np

from src.errors import FormatError

logger = logging.getLogger(__name__)

_HEADER = re.compile(rb"\A(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s")


def write_ppm(image: np.ndarray, path: str | Path) -> Path:
    """Writes an 8-bit image as binary P6; grayscale is replicated to RGB."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise FormatError(f"PPM output needs uint8 pixels, got {image.dtype}")
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"PPM output needs (H, W) or (H, W, 3) pixels, got {image.shape}")
    height, width = image.shape[:2]
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(f"P6\n{width} {height}\n255\n".encode())
            f.write(memoryview(np.ascontiguousarray(image)))
    except OSError as e:
        raise FormatError(f"cannot write {path}: {e.strerror or e}") from e
    logger.debug("wrote %dx%d PPM to %s", width, height, path)
    return path


def read_ppm(path: str | Path) -> np.ndarray:
    """Reads binary P5 or P6 with maxval 255; returns (H, W) or (H, W, 3) uint8."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror or e}") from e
    match = _HEADER.match(raw)
    if match is None:
        raise FormatError(f"{path} is not a binary PPM/PGM file")
    tag, width, height, max_val = match.group(1), int(match.group(2)), int(match.group(3)), int(match.group(4))
    if max_val != 255:
        raise FormatError(f"{path}: only 8-bit images are supported, maxval {max_val}")
    channels = 3 if tag == b"P6" else 1
    body = raw[match.end():]
    expected = width * height * channels
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} pixel bytes, found {len(body)}")
    img = np.frombuffer(body, dtype=np.uint8)
    return img.reshape(height, width) if channels == 1 else img.reshape(height, width, 3)
