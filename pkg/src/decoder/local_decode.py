import logging
from typing import NamedTuple, Sequence

import numpy as np

from src.cache.context_pool import LayerCache
from src.decoder.sampling import GREEDY, sample_token
from src.decoder.vision_decoder import VisionDecoder
from src.numerics.ops import softmax
from src.numerics.rng import Rng
from src.numerics.tensor import Tensor, no_grad
from src.state.grid_state import PatchCoord
from src.state.model_state import LocalMode
from src.state.pipeline_state import SamplerConfig

logger = logging.getLogger(__name__)


class DecodedPatch(NamedTuple):
    tokens: np.ndarray
    cache: LayerCache
    passes: int


def still_masked(m: int, rounds: int, r: int) -> int:
    """Positions left masked after round ``r`` (1-based) of a linear schedule."""
    return (m * (rounds - r)) // rounds


def local_decode(
    decoder: VisionDecoder,
    coord: PatchCoord,
    context: Sequence[LayerCache],
    e_ids: Sequence[int],
    text_states: Tensor | None = None,
    rng: Rng | None = None,
    sampler: SamplerConfig = GREEDY,
) -> DecodedPatch:
    """Generates the M tokens of one patch under the decoder's local mode."""
    c = decoder.config
    rng = rng or Rng(c.seed, "local_decode")
    with no_grad():
        if c.local_mode is LocalMode.AR:
            return _decode_ar(decoder, coord, context, e_ids, text_states, rng, sampler)
        if c.local_mode is LocalMode.NAR:
            inputs = np.full(c.M, c.mask_id, dtype=np.int64)
            logits, _ = decoder.patch_forward(inputs, context, e_ids, text_states, causal=False)
            tokens = np.array([sample_token(row, sampler, rng) for row in logits.data], dtype=np.int64)
            passes = 1
        else:
            tokens, passes = _decode_pnar(decoder, context, e_ids, text_states, rng, sampler)
    return DecodedPatch(tokens, decoder.commit(coord, tokens, context, e_ids, text_states), passes)


def _decode_ar(decoder, coord, context, e_ids, text_states, rng, sampler) -> DecodedPatch:
    c = decoder.config
    tokens = np.zeros(c.M, dtype=np.int64)
    cache = None
    for m in range(c.M):
        logits, cache = decoder.patch_forward(decoder.shifted(tokens), context, e_ids, text_states, causal=True, coord=coord)
        tokens[m] = sample_token(logits.data[m], sampler, rng)
    # the last pass saw [BOP, t_0 .. t_{M-2}], which is exactly the teacher-forced cache
    return DecodedPatch(tokens, cache, c.M)


def _decode_pnar(decoder, context, e_ids, text_states, rng, sampler) -> tuple[np.ndarray, int]:
    """Mask-Predict: each round re-predicts masked slots and keeps the most confident ones."""
    c = decoder.config
    rounds = c.pnar_rounds
    tokens = np.zeros(c.M, dtype=np.int64)
    masked = np.ones(c.M, dtype=bool)
    positions = np.arange(c.M)
    for r in range(1, rounds + 1):
        inputs = np.where(masked, c.mask_id, tokens)
        logits, _ = decoder.patch_forward(inputs, context, e_ids, text_states, causal=False)
        open_slots = positions[masked]
        guesses = np.array([sample_token(logits.data[m], sampler, rng) for m in open_slots], dtype=np.int64)
        confidence = softmax(logits.data[open_slots]).max(axis=-1)
        n_unmask = open_slots.size - still_masked(c.M, rounds, r)
        order = np.lexsort((open_slots, -confidence))[:n_unmask]
        tokens[open_slots[order]] = guesses[order]
        masked[open_slots[order]] = False
        logger.debug("mask-predict round %d/%d, %d positions still masked", r, rounds, int(masked.sum()))
    return tokens, rounds
