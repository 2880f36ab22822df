import logging
from typing import Callable

from langgraph.graph import END, START, StateGraph

from src.decoder.vision_decoder import VisionDecoder
from src.nodes.decode_node import DecodeNode
from src.nodes.patch_step_node import PatchStepNode
from src.state.pipeline_state import LossMode, PatchLane, PatchLoopState

logger = logging.getLogger(__name__)


class GraphBuilder:
    def __init__(self, model: VisionDecoder, loss_mode: LossMode = LossMode.PATCH, schedule: Callable[[int], float] | None = None):
        self.model = model
        self.loss_mode = loss_mode
        self.schedule = schedule
        self.builder = StateGraph(PatchLoopState)

    def build_graph(self):
        """
            Wire the per-patch loop: select -> emb -> decode -> add -> remove (-> optimize)
        """
        self.step_node = PatchStepNode(model=self.model)
        self.decode_node = DecodeNode(model=self.model, loss_mode=self.loss_mode, schedule=self.schedule)

        # Nodes
        self.builder.add_node("select", self.step_node.select)
        self.builder.add_node("emb", self.step_node.emb)
        self.builder.add_node("decode", self.decode_node.decode)
        self.builder.add_node("add", self.step_node.add)
        self.builder.add_node("remove", self.step_node.remove)  # Routing node
        self.builder.add_node("optimize", self.decode_node.optimize)  # Routing node

        # Edges
        self.builder.add_conditional_edges(
            START,
            self.step_node.step_router,
            {
                "next": "select",
                "done": END
            }
        )
        self.builder.add_edge("select", "emb")
        self.builder.add_edge("emb", "decode")
        self.builder.add_edge("decode", "add")
        self.builder.add_edge("add", "remove")
        self.builder.add_conditional_edges(
            "remove",
            self.step_node.remove_router,
            {
                "optimize": "optimize",
                "next": "select",
                "done": END
            }
        )
        self.builder.add_conditional_edges(
            "optimize",
            self.step_node.step_router,
            {
                "next": "select",
                "done": END
            }
        )

        return self.builder

    def setup_graph(self):
        self.graph = self.build_graph()
        return self.graph.compile()


def run_loop(graph, lanes: list[PatchLane], phase: str, start: int, stop: int) -> PatchLoopState:
    """Drives every lane through plan steps ``start``..``stop - 1`` in one graph run."""
    state: PatchLoopState = {"phase": phase, "step": start, "stop": stop, "lanes": lanes, "trace": []}
    return graph.invoke(state, config={"recursion_limit": 6 * max(stop - start, 0) + 10})
