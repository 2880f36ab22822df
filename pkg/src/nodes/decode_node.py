import logging
from typing import Callable

import numpy as np

from src.decoder.local_decode import local_decode
from src.decoder.vision_decoder import VisionDecoder
from src.errors import SequencingError
from src.numerics.optim import adam_step
from src.numerics.tensor import no_grad
from src.state.grid_state import linear_index
from src.state.pipeline_state import LossMode, PatchLoopState

logger = logging.getLogger(__name__)


class DecodeNode:
    """Network-side steps: run the decoder on the selected patch, and optimize when training."""

    def __init__(
        self,
        model: VisionDecoder,
        loss_mode: LossMode = LossMode.PATCH,
        schedule: Callable[[int], float] | None = None,
    ):
        self.model = model
        self.loss_mode = loss_mode
        self.schedule = schedule or (lambda step: 1e-3)

    def decode(self, state: PatchLoopState):
        """
        Teacher-forced forward (precache, train, score) or local decoding (generate)
        """
        phase = state["phase"]
        for lane in state["lanes"]:
            c = lane.current
            row = linear_index(c, lane.plan.dims)
            context = [cache for _, cache in lane.context]
            if phase == "generate":
                if lane.pool.cursor < lane.plan.prefix_len:
                    raise SequencingError(f"step {lane.pool.cursor} is a condition patch; pre-cache it first")
                with no_grad():
                    text_states = self.model.encode_text(lane.text_ids)
                out = local_decode(self.model, c, context, lane.e_ids, text_states, lane.rng, lane.sampler)
                lane.tokens[row] = out.tokens
                lane.cache = out.cache
                lane.passes += out.passes
            elif phase == "precache":
                with no_grad():
                    text_states = self.model.encode_text(lane.text_ids)
                    lane.cache = self.model.commit(c, lane.tokens[row], context, lane.e_ids, text_states)
            elif phase == "train":
                text_states = self.model.encode_text(lane.text_ids)
                lane.loss, lane.cache = self.model.patch_loss(c, lane.tokens[row], context, lane.e_ids, text_states, lane.rng)
                lane.losses.append(lane.loss.item())
            else:
                with no_grad():
                    text_states = self.model.encode_text(lane.text_ids)
                    loss, lane.cache = self.model.patch_loss(c, lane.tokens[row], context, lane.e_ids, text_states, lane.rng)
                lane.losses.append(loss.item())
        return {"trace": [f"decode:{state['step']}"]}

    def optimize(self, state: PatchLoopState):
        """
        Back-propagates each lane's patch loss at once; steps Adam per patch in PATCH mode
        """
        lanes = state["lanes"]
        for lane in lanes:
            weight = 1.0 / len(lanes)
            if self.loss_mode is LossMode.ACCUMULATED:
                weight /= lane.plan.dims.N
            lane.loss.backward(np.asarray(weight))
            lane.loss = None
        if self.loss_mode is LossMode.PATCH:
            adam_step(self.model.store, self.schedule(self.model.store.step_count))
        return {"trace": [f"optimize:{state['step'] - 1}"]}
