import logging

from src.adc.direction_controller import emb_assign
from src.decoder.vision_decoder import VisionDecoder
from src.state.pipeline_state import PatchLoopState

logger = logging.getLogger(__name__)


class PatchStepNode:
    """Pool-side steps of the per-patch loop: Select, Emb, Add, Remove, plus the loop routers."""

    def __init__(self, model: VisionDecoder):
        self.model = model
        self.table = model.table

    def select(self, state: PatchLoopState):
        """
        Picks the extent-bounded context of the next patch in each lane
        """
        for lane in state["lanes"]:
            lane.current = lane.pool.expected()
            lane.context = lane.pool.select(lane.current)
        return {"trace": [f"select:{state['step']}"]}

    def emb(self, state: PatchLoopState):
        for lane in state["lanes"]:
            coords = [coord for coord, _ in lane.context]
            lane.e_ids = emb_assign(lane.plan, lane.pool.cursor, coords, self.table)
        return {"trace": [f"emb:{state['step']}"]}

    def add(self, state: PatchLoopState):
        for lane in state["lanes"]:
            lane.pool.add(lane.cache)
            lane.cache = None
        return {"trace": [f"add:{state['step']}"]}

    def remove(self, state: PatchLoopState):
        for lane in state["lanes"]:
            lane.pool.remove()
            lane.context = []
        logger.debug("%s step %d done, pool sizes %s", state["phase"], state["step"], [len(l.pool) for l in state["lanes"]])
        return {"step": state["step"] + 1, "trace": [f"remove:{state['step']}"]}

    def step_router(self, state: PatchLoopState):
        return "next" if state["step"] < state["stop"] else "done"

    def remove_router(self, state: PatchLoopState):
        if state["phase"] == "train":
            return "optimize"
        return self.step_router(state)
