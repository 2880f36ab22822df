"""Full-context generation without a pool.

Every step rebuilds the caches of all earlier patches from their tokens and
attends to every one of them, oldest first. With an extent covering the whole
grid this is what the pooled loop must reproduce exactly.
"""

import numpy as np

from src.adc.direction_controller import OrderPlan, emb_assign
from src.cache.context_pool import LayerCache
from src.decoder.local_decode import local_decode
from src.decoder.vision_decoder import VisionDecoder
from src.numerics.rng import Rng
from src.numerics.tensor import no_grad
from src.pipeline.generator import Generator
from src.state.grid_state import TokenGrid, linear_index
from src.state.pipeline_state import GenRequest


def _prior_caches(model: VisionDecoder, plan: OrderPlan, tokens: np.ndarray, upto: int, text_states) -> list[LayerCache]:
    caches: list[LayerCache] = []
    for step in range(upto):
        c = plan.sequence[step]
        e_ids = emb_assign(plan, step, plan.sequence[:step], model.table)
        caches.append(model.commit(c, tokens[linear_index(c, plan.dims)], caches, e_ids, text_states))
    return caches


def reference_generate(model: VisionDecoder, req: GenRequest) -> TokenGrid:
    planner = Generator(model)
    plan = planner.plan_for(req)
    tokens = planner.initial_tokens(req)
    rng = Rng(req.seed, f"generate/{req.task.value}")
    with no_grad():
        text_states = model.encode_text(req.text)
    for step in range(plan.prefix_len, plan.dims.N):
        c = plan.sequence[step]
        context = _prior_caches(model, plan, tokens, step, text_states)
        e_ids = emb_assign(plan, step, plan.sequence[:step], model.table)
        out = local_decode(model, c, context, e_ids, text_states, rng, req.sampler)
        tokens[linear_index(c, plan.dims)] = out.tokens
    return TokenGrid(dims=req.dims, tokens=tokens)


def reference_losses(model: VisionDecoder, grid: TokenGrid, plan: OrderPlan, text=None, rng: Rng | None = None) -> list[float]:
    """Teacher-forced per-patch losses with all earlier patches as context."""
    losses = []
    with no_grad():
        text_states = model.encode_text(text)
        for step in range(plan.dims.N):
            c = plan.sequence[step]
            context = _prior_caches(model, plan, grid.tokens, step, text_states)
            e_ids = emb_assign(plan, step, plan.sequence[:step], model.table)
            loss, _ = model.patch_loss(c, grid.tokens[linear_index(c, plan.dims)], context, e_ids, text_states, rng)
            losses.append(loss.item())
    return losses
