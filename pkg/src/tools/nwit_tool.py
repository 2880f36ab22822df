"""NWIT token-grid files.

Layout: magic ``NWIT``, u32 version, u32 fields h_p, w_p, f, m_side, vocab,
then N*M token ids as u16, patches in storage order and tokens row-major
inside a patch. Everything little-endian.
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from src.codec.captions import tokenize_caption
from src.errors import FormatError, RangeError
from src.state.grid_state import GridDims, TokenGrid

logger = logging.getLogger(__name__)

MAGIC = b"NWIT"
VERSION = 1
_HEADER = struct.Struct("<4s6I")


def dumps(grid: TokenGrid) -> bytes:
    d = grid.dims
    if d.vocab > 1 << 16:
        raise RangeError(f"vocab {d.vocab} does not fit u16 token ids")
    header = _HEADER.pack(MAGIC, VERSION, d.h_p, d.w_p, d.f, d.m_side, d.vocab)
    return header + grid.tokens.astype("<u2").tobytes()


def loads(raw: bytes) -> TokenGrid:
    if len(raw) < _HEADER.size:
        raise FormatError(f"NWIT data too short: {len(raw)} bytes")
    magic, version, h_p, w_p, f, m_side, vocab = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad NWIT magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported NWIT version {version}")
    if min(h_p, w_p, f, m_side) < 1 or vocab < 2:
        raise FormatError(f"bad NWIT dimensions {h_p}x{w_p}x{f}, m_side={m_side}, vocab={vocab}")
    dims = GridDims(h_p=h_p, w_p=w_p, f=f, m_side=m_side, vocab=vocab)
    body = raw[_HEADER.size:]
    if len(body) != 2 * dims.N * dims.M:
        raise FormatError(f"NWIT body holds {len(body)} bytes, expected {2 * dims.N * dims.M}")
    tokens = np.frombuffer(body, dtype="<u2").astype(np.int64).reshape(dims.N, dims.M)
    if tokens.max(initial=0) >= vocab:
        raise FormatError(f"NWIT token id {int(tokens.max())} outside vocab {vocab}")
    return TokenGrid(dims=dims, tokens=tokens)


def write_nwit(grid: TokenGrid, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(dumps(grid))
    except OSError as e:
        raise FormatError(f"cannot write {path}: {e.strerror or e}") from e
    logger.debug("wrote %s grid to %s", grid.dims, path)
    return path


def read_nwit(path: str | Path) -> TokenGrid:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror or e}") from e
    return loads(raw)


def read_dataset(directory: str | Path) -> list[tuple[TokenGrid, tuple[int, ...] | None]]:
    """Every ``*.nwit`` file in ``directory`` (sorted), with captions from an optional ``captions.json``."""
    directory = Path(directory)
    files = sorted(directory.glob("*.nwit"))
    if not files:
        raise FormatError(f"no .nwit files in {directory}")
    captions = {}
    caption_file = directory / "captions.json"
    if caption_file.exists():
        try:
            captions = json.loads(caption_file.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise FormatError(f"bad {caption_file}: {e}") from e
    data = []
    for path in files:
        text = captions.get(path.name)
        data.append((read_nwit(path), tokenize_caption(text) if text is not None else None))
    logger.info("read %d token grids from %s", len(data), directory)
    return data
