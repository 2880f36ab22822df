import numpy as np
import pytest

from src.errors import ConfigError, RangeError
from src.state.grid_state import (
    CanvasSlot,
    Extent,
    GridDims,
    PatchCoord,
    TokenGrid,
    coord_of,
    linear_index,
    parse_grid,
    token_slot,
)


def test_linear_index_is_frame_row_col_major():
    d = GridDims(h_p=2, w_p=3, f=2)
    assert linear_index(PatchCoord(0, 0, 0), d) == 0
    assert linear_index(PatchCoord(0, 2, 0), d) == 2
    assert linear_index(PatchCoord(1, 0, 0), d) == 3
    assert linear_index(PatchCoord(0, 0, 1), d) == 6
    assert [coord_of(i, d) for i in range(d.N)] == d.coords()
    assert all(linear_index(coord_of(i, d), d) == i for i in range(d.N))


def test_linear_index_rejects_outside_patch():
    d = GridDims(h_p=2, w_p=2)
    with pytest.raises(RangeError):
        linear_index(PatchCoord(2, 0), d)
    with pytest.raises(IndexError):
        coord_of(4, d)


def test_token_slot_maps_local_tokens_onto_canvas():
    d = GridDims(h_p=2, w_p=3, m_side=4)
    assert token_slot(PatchCoord(1, 2), 5, d) == CanvasSlot(5, 9, 0)
    assert token_slot(PatchCoord(0, 0), 0, d) == CanvasSlot(0, 0, 0)
    with pytest.raises(RangeError):
        token_slot(PatchCoord(0, 0), 16, d)


def test_parse_grid_and_extent():
    assert parse_grid("4x32") == (4, 32, 1)
    assert parse_grid("2X3x4") == (2, 3, 4)
    assert Extent.parse("2,2,0") == Extent(2, 2, 0)
    assert Extent.parse("1,3") == Extent(1, 3, 0)
    for bad in ("4by4", "0x3", "1x2x3x4"):
        with pytest.raises(ConfigError):
            parse_grid(bad)
    with pytest.raises(ConfigError):
        Extent.parse("-1,0,0")


def test_canvas_round_trip():
    d = GridDims(h_p=2, w_p=3, m_side=2, vocab=64)
    canvas = np.arange(4 * 6).reshape(4, 6)
    grid = TokenGrid.from_canvas(canvas, d)
    np.testing.assert_array_equal(grid.canvas(), canvas)
    np.testing.assert_array_equal(grid.patch(PatchCoord(0, 1)), [2, 3, 8, 9])
    assert grid == TokenGrid(dims=d, tokens=grid.tokens.copy())


def test_token_grid_validates_ids_and_is_read_only():
    d = GridDims(h_p=1, w_p=1, m_side=2, vocab=4)
    with pytest.raises(RangeError):
        TokenGrid(dims=d, tokens=[[0, 1, 2, 4]])
    with pytest.raises(RangeError):
        TokenGrid(dims=d, tokens=[[0, 1, 2]])
    grid = TokenGrid.zeros(d)
    with pytest.raises(ValueError):
        grid.tokens[0, 0] = 1
