from typing import Any, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ConfigError, RangeError


class PatchCoord(NamedTuple):
    row: int
    col: int
    frame: int = 0


class CanvasSlot(NamedTuple):
    """Token-block position on the full canvas of one frame."""

    row: int
    col: int
    frame: int = 0


class Extent(NamedTuple):
    e_w: int
    e_h: int
    e_f: int = 0

    def checked(self) -> "Extent":
        if min(self) < 0:
            raise ConfigError(f"extent components must be >= 0, got {tuple(self)}")
        return self

    @classmethod
    def parse(cls, text: str) -> "Extent":
        """Parses ``W,H,F`` (``F`` optional)."""
        try:
            parts = [int(p) for p in text.split(",")]
        except ValueError:
            raise ConfigError(f"bad extent {text!r}, expected W,H[,F]") from None
        if len(parts) not in (2, 3):
            raise ConfigError(f"bad extent {text!r}, expected W,H[,F]")
        return cls(*parts).checked()


class GridDims(BaseModel):
    model_config = ConfigDict(frozen=True)

    h_p: int = Field(..., ge=1, description="Patch rows")
    w_p: int = Field(..., ge=1, description="Patch columns")
    f: int = Field(1, ge=1, description="Frames, 1 for images")
    m_side: int = Field(4, ge=1, description="Tokens per patch side")
    vocab: int = Field(64, ge=2, description="Visual codebook size")

    @property
    def M(self) -> int:
        return self.m_side * self.m_side

    @property
    def N(self) -> int:
        return self.h_p * self.w_p * self.f

    @property
    def frame_patches(self) -> int:
        return self.h_p * self.w_p

    def contains(self, c: PatchCoord) -> bool:
        return 0 <= c.row < self.h_p and 0 <= c.col < self.w_p and 0 <= c.frame < self.f

    def coords(self) -> list[PatchCoord]:
        """All patches in storage order."""
        return [coord_of(i, self) for i in range(self.N)]

    def canvas_shape(self) -> tuple[int, int]:
        return self.h_p * self.m_side, self.w_p * self.m_side


def parse_grid(text: str) -> tuple[int, int, int]:
    """Parses ``HxW`` or ``HxWxF`` into (rows, cols, frames)."""
    try:
        parts = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}, expected HxW[xF]") from None
    if len(parts) not in (2, 3) or min(parts) < 1:
        raise ConfigError(f"bad grid {text!r}, expected HxW[xF]")
    if len(parts) == 2:
        parts.append(1)
    return parts[0], parts[1], parts[2]


def linear_index(c: PatchCoord, d: GridDims) -> int:
    """Frame-major, then row-major, then column storage index."""
    if not d.contains(c):
        raise RangeError(f"patch {tuple(c)} outside grid {d.h_p}x{d.w_p}x{d.f}")
    return c.frame * d.frame_patches + c.row * d.w_p + c.col


def coord_of(index: int, d: GridDims) -> PatchCoord:
    if not 0 <= index < d.N:
        raise RangeError(f"patch index {index} outside [0, {d.N})")
    frame, rest = divmod(index, d.frame_patches)
    row, col = divmod(rest, d.w_p)
    return PatchCoord(row, col, frame)


def token_slot(c: PatchCoord, m: int, d: GridDims) -> CanvasSlot:
    """Maps a local token (row-major inside its patch) to its canvas block."""
    if not d.contains(c):
        raise RangeError(f"patch {tuple(c)} outside grid {d.h_p}x{d.w_p}x{d.f}")
    if not 0 <= m < d.M:
        raise RangeError(f"local token {m} outside [0, {d.M})")
    local_row, local_col = divmod(m, d.m_side)
    return CanvasSlot(c.row * d.m_side + local_row, c.col * d.m_side + local_col, c.frame)


class TokenGrid(BaseModel):
    """Visual tokens of a whole canvas or video, one row of M ids per patch."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dims: GridDims
    tokens: np.ndarray = Field(..., description="(N, M) int64 ids in storage order")

    @model_validator(mode="before")
    @classmethod
    def _coerce_tokens(cls, data: Any) -> Any:
        if isinstance(data, dict) and "tokens" in data:
            data = {**data, "tokens": np.array(data["tokens"], dtype=np.int64)}
        return data

    @model_validator(mode="after")
    def _check_tokens(self) -> "TokenGrid":
        d = self.dims
        if self.tokens.shape != (d.N, d.M):
            raise RangeError(f"token array shape {self.tokens.shape} != ({d.N}, {d.M})")
        if self.tokens.size and (self.tokens.min() < 0 or self.tokens.max() >= d.vocab):
            raise RangeError(f"token ids must lie in [0, {d.vocab})")
        self.tokens.flags.writeable = False
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.tokens, other.tokens)

    __hash__ = None

    def patch(self, c: PatchCoord) -> np.ndarray:
        return self.tokens[linear_index(c, self.dims)]

    def canvas(self, frame: int = 0) -> np.ndarray:
        """Token ids laid out on the canvas of one frame."""
        d = self.dims
        if not 0 <= frame < d.f:
            raise RangeError(f"frame {frame} outside [0, {d.f})")
        blocks = self.tokens.reshape(d.f, d.h_p, d.w_p, d.m_side, d.m_side)[frame]
        return blocks.transpose(0, 2, 1, 3).reshape(d.canvas_shape())

    @classmethod
    def from_canvas(cls, frames: list[np.ndarray] | np.ndarray, dims: GridDims) -> "TokenGrid":
        stack = np.asarray(frames, dtype=np.int64)
        if stack.ndim == 2:
            stack = stack[None]
        expected = (dims.f, *dims.canvas_shape())
        if stack.shape != expected:
            raise RangeError(f"canvas shape {stack.shape} != {expected}")
        blocks = stack.reshape(dims.f, dims.h_p, dims.m_side, dims.w_p, dims.m_side)
        tokens = blocks.transpose(0, 1, 3, 2, 4).reshape(dims.N, dims.M)
        return cls(dims=dims, tokens=tokens)

    @classmethod
    def zeros(cls, dims: GridDims) -> "TokenGrid":
        return cls(dims=dims, tokens=np.zeros((dims.N, dims.M), dtype=np.int64))
