import json
import struct

import numpy as np
import pytest

from src.decoder.vision_decoder import VisionDecoder
from src.errors import FormatError
from src.numerics.tensor import no_grad
from src.state.grid_state import GridDims, TokenGrid
from src.state.model_state import ModelConfig
from src.tools import nwit_tool
from src.tools.checkpoint_tool import BLOB, MANIFEST, load_checkpoint, save_checkpoint
from src.tools.ppm_tool import read_ppm, write_ppm


@pytest.fixture
def grid(random_grid) -> TokenGrid:
    return random_grid(GridDims(h_p=2, w_p=3, f=2, m_side=2, vocab=300), seed=7)


def test_nwit_layout(grid, tmp_path):
    raw = nwit_tool.dumps(grid)
    assert raw[:4] == b"NWIT"
    assert struct.unpack_from("<6I", raw, 4) == (1, 2, 3, 2, 2, 300)
    assert len(raw) == 28 + 2 * grid.dims.N * grid.dims.M
    path = nwit_tool.write_nwit(grid, tmp_path / "g.nwit")
    assert nwit_tool.read_nwit(path) == grid


def test_nwit_rejects_damaged_files(grid):
    raw = nwit_tool.dumps(grid)
    with pytest.raises(FormatError):
        nwit_tool.loads(b"NWIX" + raw[4:])
    with pytest.raises(FormatError):
        nwit_tool.loads(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(FormatError):
        nwit_tool.loads(raw[:-2])
    with pytest.raises(FormatError):
        nwit_tool.loads(raw[:10])
    with pytest.raises(FormatError):
        nwit_tool.loads(raw[:-2] + struct.pack("<H", 300))


def test_read_dataset_pairs_files_with_captions(random_grid, tmp_path):
    dims = GridDims(h_p=1, w_p=1, m_side=2, vocab=16)
    nwit_tool.write_nwit(random_grid(dims, 1), tmp_path / "b.nwit")
    nwit_tool.write_nwit(random_grid(dims, 0), tmp_path / "a.nwit")
    (tmp_path / "captions.json").write_text(json.dumps({"a.nwit": "constant zero"}))
    data = nwit_tool.read_dataset(tmp_path)
    assert [g for g, _ in data] == [random_grid(dims, 0), random_grid(dims, 1)]
    assert [c for _, c in data] == [(1, 8), None]
    with pytest.raises(FormatError):
        nwit_tool.read_dataset(tmp_path / "a.nwit")


def test_ppm_writes_gray_as_rgb(tmp_path):
    image = np.arange(12, dtype=np.uint8).reshape(3, 4)
    path = write_ppm(image, tmp_path / "x.ppm")
    assert path.read_bytes().startswith(b"P6\n4 3\n255\n")
    rgb = read_ppm(path)
    assert rgb.shape == (3, 4, 3)
    np.testing.assert_array_equal(rgb[:, :, 1], image)


def test_ppm_reads_graymaps_and_rejects_bad_files(tmp_path):
    (tmp_path / "g.pgm").write_bytes(b"P5\n2 1\n255\n" + bytes([3, 250]))
    assert read_ppm(tmp_path / "g.pgm").tolist() == [[3, 250]]
    (tmp_path / "deep.pgm").write_bytes(b"P5\n1 1\n65535\n" + bytes(2))
    (tmp_path / "short.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    (tmp_path / "text.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    for name in ("deep.pgm", "short.ppm", "text.ppm"):
        with pytest.raises(FormatError):
            read_ppm(tmp_path / name)
    with pytest.raises(FormatError):
        write_ppm(np.zeros((2, 2), dtype=np.float64), tmp_path / "f.ppm")


def test_checkpoint_round_trip(toy_config, tmp_path):
    decoder = VisionDecoder(toy_config.model_copy(update={"seed": 5}))
    save_checkpoint(decoder, tmp_path / "ckpt")
    loaded = load_checkpoint(tmp_path / "ckpt")
    assert loaded.config == decoder.config
    assert loaded.store.arrays().keys() == decoder.store.arrays().keys()
    for name, array in decoder.store.arrays().items():
        np.testing.assert_array_equal(loaded.store[name].data, array)
    tokens = np.array([1, 2, 3, 4])
    with no_grad():
        a, _ = decoder.patch_forward(tokens, [], [0])
        b, _ = loaded.patch_forward(tokens, [], [0])
    np.testing.assert_array_equal(a.data, b.data)


def test_checkpoint_rejects_corruption(toy_config, tmp_path):
    directory = save_checkpoint(VisionDecoder(toy_config), tmp_path / "ckpt")
    manifest = json.loads((directory / MANIFEST).read_text())

    manifest["bogus"] = {"shape": [1], "dtype": "<f8", "byte_offset": 0, "byte_len": 8}
    (directory / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(FormatError, match="unknown parameters"):
        load_checkpoint(directory)

    blob = (directory / BLOB).read_bytes()
    (directory / BLOB).write_bytes(blob[:-8])
    del manifest["bogus"]
    (directory / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        load_checkpoint(directory)

    (directory / MANIFEST).write_text("{not json")
    with pytest.raises(FormatError):
        load_checkpoint(directory)


@pytest.mark.parametrize(
    "damage, message",
    [
        (lambda m: m.pop("head"), "lacks parameters"),
        (lambda m: m["head"].update(shape=[m["head"]["shape"][1], m["head"]["shape"][0]]), "config implies"),
        (lambda m: m["head"].update(shape=[3, 5]), "bad manifest entry"),
        (lambda m: m["head"].update(dtype="not-a-dtype"), "bad manifest entry"),
        (lambda m: m["head"].pop("byte_len"), "bad manifest entry"),
    ],
)
def test_checkpoint_parameter_mismatch_is_a_format_error(toy_config, tmp_path, damage, message):
    directory = save_checkpoint(VisionDecoder(toy_config), tmp_path / "ckpt")
    manifest = json.loads((directory / MANIFEST).read_text())
    damage(manifest)
    (directory / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(FormatError, match=message) as caught:
        load_checkpoint(directory)
    assert caught.value.exit_code == 2


def test_unwritable_and_missing_paths_are_format_errors(random_grid, tmp_path):
    missing = tmp_path / "no" / "such" / "dir"
    with pytest.raises(FormatError):
        nwit_tool.write_nwit(random_grid(GridDims(h_p=1, w_p=1)), missing / "g.nwit")
    with pytest.raises(FormatError):
        nwit_tool.read_nwit(missing / "g.nwit")
    with pytest.raises(FormatError):
        write_ppm(np.zeros((4, 4), dtype=np.uint8), missing / "x.ppm")
    with pytest.raises(FormatError):
        read_ppm(missing / "x.ppm")
    (tmp_path / "blocker").write_text("")
    with pytest.raises(FormatError):
        save_checkpoint(VisionDecoder(ModelConfig(layers=1, d=8, heads=2, m_side=1, vocab=4)), tmp_path / "blocker" / "ckpt")
