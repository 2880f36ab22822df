import numpy as np
import pytest

from src.cache.context_pool import LayerCache
from src.decoder.local_decode import local_decode, still_masked
from src.decoder.sampling import GREEDY, sample_token
from src.decoder.vision_decoder import VisionDecoder
from src.numerics.rng import Rng
from src.state.grid_state import PatchCoord
from src.state.model_state import LocalMode
from src.state.pipeline_state import SamplerConfig


def _count_passes(decoder):
    kinds = []
    decoder.hooks.append(lambda event, info: kinds.append(info["kind"]) if event == "forward" else None)
    return kinds


@pytest.mark.parametrize(
    "mode, decode_passes, commits",
    [(LocalMode.AR, 4, 0), (LocalMode.NAR, 1, 1), (LocalMode.PNAR, 2, 1)],
)
def test_pass_counts_per_mode(toy_config, mode, decode_passes, commits):
    decoder = VisionDecoder(toy_config.model_copy(update={"local_mode": mode, "pnar_rounds": 2}))
    kinds = _count_passes(decoder)
    patch = local_decode(decoder, PatchCoord(0, 0), [], [0])
    assert kinds.count("decode") == decode_passes == patch.passes
    assert kinds.count("commit") == commits
    assert patch.tokens.shape == (toy_config.M,)
    assert ((0 <= patch.tokens) & (patch.tokens < toy_config.vocab)).all()


def test_ar_cache_matches_a_commit_pass(toy_config):
    decoder = VisionDecoder(toy_config)
    context = [LayerCache(coord=PatchCoord(0, 0), layers=Rng(1, "ctx").normal(1.0, (2, 4, 16)))]
    patch = local_decode(decoder, PatchCoord(0, 1), context, [0, 1])
    committed = decoder.commit(PatchCoord(0, 1), patch.tokens, context, [0, 1], None)
    np.testing.assert_array_equal(patch.cache.layers, committed.layers)
    assert patch.cache.coord == PatchCoord(0, 1)


def test_greedy_decoding_is_deterministic(toy_config):
    decoder = VisionDecoder(toy_config)
    a = local_decode(decoder, PatchCoord(0, 0), [], [0], rng=Rng(1, "a"))
    b = local_decode(decoder, PatchCoord(0, 0), [], [0], rng=Rng(2, "b"))
    np.testing.assert_array_equal(a.tokens, b.tokens)


def test_linear_unmasking_schedule():
    assert [still_masked(16, 4, r) for r in range(1, 5)] == [12, 8, 4, 0]
    assert still_masked(4, 3, 1) == 2
    assert still_masked(4, 3, 3) == 0


def test_greedy_breaks_ties_towards_the_lowest_id():
    assert sample_token(np.array([0.1, 0.9, 0.9, 0.2])) == 1
    assert sample_token(np.zeros(5), GREEDY) == 0


def test_topk_only_samples_the_best_k():
    sampler = SamplerConfig(kind="topk", k=2, temperature=1.0)
    logits = np.array([5.0, 0.0, 4.9, -1.0, 0.1])
    rng = Rng(0, "topk")
    picks = {sample_token(logits, sampler, rng) for _ in range(200)}
    assert picks == {0, 2}


def test_topk_splits_evenly_between_tied_logits():
    sampler = SamplerConfig(kind="topk", k=2, temperature=1.0)
    logits = np.array([0.0, 0.0, -9.0])
    rng = Rng(7, "tied")
    draws = np.array([sample_token(logits, sampler, rng) for _ in range(100_000)])
    counts = np.bincount(draws, minlength=3) / draws.size
    assert counts[2] == 0
    assert counts[0] == pytest.approx(0.5, abs=0.01)
    assert counts[1] == pytest.approx(0.5, abs=0.01)


def test_low_temperature_approaches_greedy():
    sampler = SamplerConfig(kind="topk", k=4, temperature=1e-3)
    logits = np.array([1.0, 3.0, 2.0, 2.5])
    rng = Rng(3, "cold")
    assert all(sample_token(logits, sampler, rng) == 1 for _ in range(50))
