import numpy as np
import pytest

from src.adc.direction_controller import PatchRect
from src.decoder.local_decode import local_decode
from src.decoder.vision_decoder import VisionDecoder
from src.errors import GeometryError, SequencingError, UsageError
from src.pipeline.generator import Generator
from src.pipeline.reference import reference_generate
from src.state.grid_state import Extent, GridDims, PatchCoord
from src.state.model_state import ModelConfig
from src.state.pipeline_state import GenRequest, SamplerConfig, Task


@pytest.fixture
def oracle_model() -> VisionDecoder:
    return VisionDecoder(ModelConfig(layers=2, d=32, heads=2, m_side=4, vocab=64, extent=Extent(3, 3, 0), init_scale=0.2))


def test_pooled_generation_matches_full_context(oracle_model):
    req = GenRequest(task=Task.UNCOND, dims=GridDims(h_p=3, w_p=3, m_side=4, vocab=64), seed=1)
    pooled = Generator(oracle_model).generate(req)
    assert pooled == reference_generate(oracle_model, req)


def test_text_conditioned_generation_matches_full_context():
    config = ModelConfig(layers=1, d=16, heads=2, m_side=2, vocab=8, text_vocab=16, text_len=8,
                         extent=Extent(2, 2, 0), init_scale=0.3)
    model = VisionDecoder(config)
    req = GenRequest(task=Task.T2I, dims=GridDims(h_p=2, w_p=3, m_side=2, vocab=8), text=(3, 9, 6, 8, 12))
    assert Generator(model).generate(req) == reference_generate(model, req)


def test_single_patch_canvas_is_one_local_decode(toy_config):
    model = VisionDecoder(toy_config)
    req = GenRequest(task=Task.UNCOND, dims=GridDims(h_p=1, w_p=1, m_side=2, vocab=8))
    grid = Generator(model).generate(req)
    np.testing.assert_array_equal(grid.tokens[0], local_decode(model, PatchCoord(0, 0), [], [0]).tokens)


def test_generation_is_deterministic(toy_config):
    model = VisionDecoder(toy_config)
    sampler = SamplerConfig(kind="topk", k=3, temperature=1.0)
    req = GenRequest(task=Task.UNCOND, dims=GridDims(h_p=2, w_p=3, m_side=2, vocab=8), sampler=sampler, seed=4)
    assert Generator(model).generate(req) == Generator(model).generate(req)


def test_long_canvas_keeps_attention_bounded(toy_config):
    model = VisionDecoder(toy_config)
    generator = Generator(model)
    dims = GridDims(h_p=4, w_p=16, m_side=2, vocab=8)
    generator.generate(GenRequest(task=Task.UNCOND, dims=dims))
    lane = generator.last_lane
    attended = [s.attended_tokens for s in lane.pool.steps]
    # omega order with a 1-patch extent sees the left patch and three above
    assert max(attended) == 4 * toy_config.M
    assert lane.pool.peak_size <= dims.w_p + 2
    assert lane.passes == dims.N * toy_config.M


def test_outpainting_keeps_the_condition(toy_config, random_grid):
    model = VisionDecoder(toy_config)
    condition = random_grid(GridDims(h_p=1, w_p=2, m_side=2, vocab=8), seed=2)
    req = GenRequest(
        task=Task.OUTPAINT, dims=GridDims(h_p=2, w_p=3, m_side=2, vocab=8),
        condition=condition, placement=PatchRect(row=1, col=1, rows=1, cols=2),
    )
    generator = Generator(model)
    grid = generator.generate(req)
    np.testing.assert_array_equal(grid.patch(PatchCoord(1, 1)), condition.patch(PatchCoord(0, 0)))
    np.testing.assert_array_equal(grid.patch(PatchCoord(1, 2)), condition.patch(PatchCoord(0, 1)))
    assert generator.last_trace[:5] == ["select:0", "emb:0", "decode:0", "add:0", "remove:0"]
    assert generator.last_lane.passes == 4 * toy_config.M


def test_outpainting_a_full_canvas_returns_the_condition(toy_config, random_grid):
    model = VisionDecoder(toy_config)
    dims = GridDims(h_p=2, w_p=2, m_side=2, vocab=8)
    condition = random_grid(dims, seed=6)
    req = GenRequest(task=Task.OUTPAINT, dims=dims, condition=condition, placement=PatchRect(row=0, col=0, rows=2, cols=2))
    generator = Generator(model)
    assert generator.generate(req) == condition
    assert generator.last_lane.passes == 0


def test_outpainting_geometry_errors(toy_config, random_grid):
    generator = Generator(VisionDecoder(toy_config))
    dims = GridDims(h_p=2, w_p=3, m_side=2, vocab=8)
    condition = random_grid(GridDims(h_p=1, w_p=2, m_side=2, vocab=8))
    outside = GenRequest(task=Task.OUTPAINT, dims=dims, condition=condition, placement=PatchRect(row=0, col=2, rows=1, cols=2))
    with pytest.raises(GeometryError):
        generator.generate(outside)
    wrong_size = GenRequest(task=Task.OUTPAINT, dims=dims, condition=condition, placement=PatchRect(row=0, col=0, rows=2, cols=2))
    with pytest.raises(GeometryError):
        generator.generate(wrong_size)


def test_animation_precaches_the_first_frame(random_grid):
    config = ModelConfig(layers=1, d=16, heads=2, m_side=2, vocab=8, extent=Extent(1, 1, 1), init_scale=0.2)
    model = VisionDecoder(config)
    commits = []
    model.hooks.append(lambda event, info: commits.append(info) if event == "forward" and info["kind"] == "commit" else None)
    first = random_grid(GridDims(h_p=2, w_p=2, m_side=2, vocab=8), seed=5)
    dims = GridDims(h_p=2, w_p=2, f=3, m_side=2, vocab=8)
    generator = Generator(model)
    video = generator.generate(GenRequest(task=Task.ANIMATE, dims=dims, condition=first))
    assert len(commits) == dims.frame_patches
    np.testing.assert_array_equal(video.tokens[:4], first.tokens)
    decoded = [t for t in generator.last_trace if t.startswith("decode:")]
    assert decoded == [f"decode:{s}" for s in range(dims.N)]
    assert generator.last_lane.passes == (dims.N - dims.frame_patches) * config.M
    with pytest.raises(SequencingError):
        generator.precache_condition(generator.last_lane)


def test_animation_needs_a_matching_first_frame(toy_config, random_grid):
    generator = Generator(VisionDecoder(toy_config))
    first = random_grid(GridDims(h_p=1, w_p=2, m_side=2, vocab=8))
    with pytest.raises(GeometryError):
        generator.generate(GenRequest(task=Task.ANIMATE, dims=GridDims(h_p=2, w_p=2, f=2, m_side=2, vocab=8), condition=first))
    with pytest.raises(GeometryError):
        generator.generate(GenRequest(task=Task.ANIMATE, dims=GridDims(h_p=1, w_p=2, f=1, m_side=2, vocab=8), condition=first))


def test_request_validation(toy_config, random_grid):
    dims = GridDims(h_p=2, w_p=2, m_side=2, vocab=8)
    with pytest.raises(UsageError):
        GenRequest(task=Task.UNCOND, dims=dims, text=(1,))
    with pytest.raises(UsageError):
        GenRequest(task=Task.T2I, dims=dims)
    with pytest.raises(UsageError):
        GenRequest(task=Task.OUTPAINT, dims=dims, condition=random_grid(dims))
    with pytest.raises(UsageError):
        GenRequest(task=Task.ANIMATE, dims=dims)
    with pytest.raises(UsageError):
        Generator(VisionDecoder(toy_config)).generate(GenRequest(task=Task.T2I, dims=dims, text=(1, 2)))


def test_text_to_video_matches_full_context():
    config = ModelConfig(layers=1, d=16, heads=2, m_side=2, vocab=8, text_vocab=16, text_len=8,
                         extent=Extent(1, 1, 1), init_scale=0.3)
    model = VisionDecoder(config)
    req = GenRequest(task=Task.T2V, dims=GridDims(h_p=2, w_p=2, f=2, m_side=2, vocab=8), text=(3, 9, 6))
    generator = Generator(model)
    video = generator.generate(req)
    assert video == reference_generate(model, req)
    assert [s.step for s in generator.last_lane.pool.steps] == list(range(8))
