import logging

import numpy as np

from src.adc.direction_controller import OrderPlan, split_base, split_outpaint
from src.cache.context_pool import ContextPool
from src.decoder.vision_decoder import VisionDecoder
from src.errors import GeometryError, SequencingError, UsageError
from src.graph.graph_builder import GraphBuilder, run_loop
from src.numerics.rng import Rng
from src.state.grid_state import PatchCoord, TokenGrid, linear_index
from src.state.pipeline_state import GenRequest, PatchLane, Task

logger = logging.getLogger(__name__)


class Generator:
    """Inference: plan the order, pre-cache any condition patches, then generate patch by patch."""

    def __init__(self, model: VisionDecoder):
        self.model = model
        self.graph = GraphBuilder(model).setup_graph()
        self.last_lane: PatchLane | None = None
        self.last_trace: list[str] = []

    def plan_for(self, req: GenRequest) -> OrderPlan:
        d = req.dims
        self.model.config.check_dims(d)
        if req.task is Task.OUTPAINT:
            cond, rect = req.condition.dims, req.placement
            if (cond.h_p, cond.w_p, cond.f) != (rect.rows, rect.cols, 1):
                raise GeometryError(
                    f"condition grid {cond.h_p}x{cond.w_p}x{cond.f} does not fill placement {rect.rows}x{rect.cols}"
                )
            return split_outpaint(d, rect)
        if req.task is Task.ANIMATE:
            cond = req.condition.dims
            if (cond.h_p, cond.w_p, cond.f) != (d.h_p, d.w_p, 1):
                raise GeometryError(f"first frame {cond.h_p}x{cond.w_p}x{cond.f} does not match a {d.h_p}x{d.w_p} frame")
            if d.f < 2:
                raise GeometryError("animation needs at least two frames")
            return split_base(d, req.order, prefix_len=d.frame_patches)
        return split_base(d, req.order)

    def initial_tokens(self, req: GenRequest) -> np.ndarray:
        d = req.dims
        tokens = np.zeros((d.N, d.M), dtype=np.int64)
        if req.task is Task.OUTPAINT:
            rect = req.placement
            for cell in rect.cells():
                source = PatchCoord(cell.row - rect.row, cell.col - rect.col, 0)
                tokens[linear_index(cell, d)] = req.condition.patch(source)
        elif req.task is Task.ANIMATE:
            tokens[:d.frame_patches] = req.condition.tokens
        return tokens

    def precache_condition(self, lane: PatchLane) -> None:
        """Feeds the plan's condition prefix through the decoder to fill the pool."""
        k = lane.plan.prefix_len
        if lane.pool.cursor != 0:
            raise SequencingError(f"pool already at step {lane.pool.cursor}; pre-caching must start the plan")
        if k == 0:
            return
        logger.info("----- Pre-caching %d condition patches ----", k)
        state = run_loop(self.graph, [lane], "precache", 0, k)
        self.last_trace.extend(state["trace"])

    def generate(self, req: GenRequest) -> TokenGrid:
        if req.text and not self.model.config.cross_attention:
            raise UsageError("text given to a model without cross-attention")
        plan = self.plan_for(req)
        pool = ContextPool(plan, self.model.config.extent, caches_enabled=self.model.config.caches_enabled)
        lane = PatchLane(
            plan=plan,
            pool=pool,
            tokens=self.initial_tokens(req),
            text_ids=tuple(req.text or ()),
            rng=Rng(req.seed, f"generate/{req.task.value}"),
            sampler=req.sampler,
        )
        self.last_lane = lane
        self.last_trace = []
        self.precache_condition(lane)
        logger.info("----- Generating %d patches (%s) ----", len(plan.generated), req.task.value)
        state = run_loop(self.graph, [lane], "generate", plan.prefix_len, req.dims.N)
        self.last_trace.extend(state["trace"])
        return TokenGrid(dims=req.dims, tokens=lane.tokens)
