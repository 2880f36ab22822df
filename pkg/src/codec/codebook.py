import logging

import numpy as np

from src.errors import ConfigError, GeometryError, InvariantError
from src.state.grid_state import GridDims, TokenGrid

logger = logging.getLogger(__name__)

M_PIX = 4
MODULATION = 32


def _pattern_mask(k: int) -> np.ndarray:
    y, x = np.mgrid[0:M_PIX, 0:M_PIX]
    if k == 0:
        return np.zeros((M_PIX, M_PIX), dtype=np.int64)
    if k == 1:
        return y % 2
    if k == 2:
        return x % 2
    if k == 3:
        return (x + y) % 2
    # quadrant masks, bit q of (k - 3) switches quadrant q on
    bits = k - 3
    half = M_PIX // 2
    quadrant = (y >= half) * 2 + (x >= half)
    return ((bits >> quadrant) & 1).astype(np.int64)


class Codebook:
    """Procedural grayscale blocks standing in for a learned visual codebook.

    Token ``id`` paints level ``(id % 16) * 17``; ``id // 16`` picks the
    pattern (flat, horizontal stripes, vertical stripes, checker, then
    quadrant masks) whose pixels are offset by +32, or -32 where +32 would
    overflow.
    """

    def __init__(self, vocab: int = 64):
        if not 2 <= vocab <= 256:
            raise ConfigError(f"mock codebook supports 2..256 entries, got {vocab}")
        self.vocab = vocab
        blocks = np.empty((vocab, M_PIX, M_PIX), dtype=np.int64)
        for token in range(vocab):
            level = (token % 16) * 17
            offset = MODULATION if level + MODULATION <= 255 else -MODULATION
            blocks[token] = level + _pattern_mask(token // 16) * offset
        if len(np.unique(blocks.reshape(vocab, -1), axis=0)) != vocab:
            raise InvariantError("codebook blocks are not pairwise distinct")
        self.blocks = blocks.astype(np.uint8)
        self._flat = blocks.reshape(vocab, -1)

    def decode_image(self, grid: TokenGrid, frame: int = 0) -> np.ndarray:
        """Paints every token's block at its canvas position."""
        if grid.dims.vocab > self.vocab:
            raise ConfigError(f"grid vocab {grid.dims.vocab} exceeds codebook size {self.vocab}")
        canvas = grid.canvas(frame)
        h, w = canvas.shape
        return self.blocks[canvas].transpose(0, 2, 1, 3).reshape(h * M_PIX, w * M_PIX)

    def decode_video(self, grid: TokenGrid) -> list[np.ndarray]:
        return [self.decode_image(grid, frame) for frame in range(grid.dims.f)]

    def nearest(self, image: np.ndarray) -> np.ndarray:
        """Token canvas of nearest blocks under squared error; ties go to the lowest id."""
        image = np.asarray(image)
        if image.ndim != 2 or image.shape[0] % M_PIX or image.shape[1] % M_PIX:
            raise GeometryError(f"image shape {image.shape} is not a grid of {M_PIX}-pixel blocks")
        h, w = image.shape[0] // M_PIX, image.shape[1] // M_PIX
        cells = image.astype(np.int64).reshape(h, M_PIX, w, M_PIX).transpose(0, 2, 1, 3).reshape(h * w, -1)
        dist = ((cells[:, None, :] - self._flat[None, :, :]) ** 2).sum(axis=-1)
        return dist.argmin(axis=1).reshape(h, w)

    def encode_image(self, image: np.ndarray, m_side: int = 4) -> TokenGrid:
        return self.encode_video([image], m_side)

    def encode_video(self, frames: list[np.ndarray], m_side: int = 4) -> TokenGrid:
        shapes = {np.asarray(f).shape for f in frames}
        if len(shapes) != 1:
            raise GeometryError(f"frames differ in shape: {sorted(shapes)}")
        height, width = shapes.pop()[:2]
        block = m_side * M_PIX
        if height % block or width % block:
            raise GeometryError(f"image {height}x{width} is not divisible into {block}-pixel patches")
        dims = GridDims(h_p=height // block, w_p=width // block, f=len(frames), m_side=m_side, vocab=self.vocab)
        return TokenGrid.from_canvas([self.nearest(f) for f in frames], dims)
