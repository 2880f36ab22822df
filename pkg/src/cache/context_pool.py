import logging
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.adc.direction_controller import OrderPlan
from src.errors import EvictionError, PoolStateError, SequencingError, ShapeError
from src.state.grid_state import Extent, PatchCoord

logger = logging.getLogger(__name__)


class LayerCache(BaseModel):
    """Activations a later patch attends to: slot 0 is the input embedding, slot l the output of layer l."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coord: PatchCoord
    layers: np.ndarray

    @model_validator(mode="after")
    def _check_layers(self) -> "LayerCache":
        if self.layers.ndim != 3:
            raise ShapeError(f"layer cache must be (L, M, d), got shape {self.layers.shape}")
        if not np.isfinite(self.layers).all():
            raise ShapeError(f"layer cache for patch {tuple(self.coord)} holds non-finite values")
        self.layers.flags.writeable = False
        return self

    @property
    def depth(self) -> int:
        return self.layers.shape[0]

    def slot(self, layer: int) -> np.ndarray:
        return self.layers[layer]


class PoolStep(NamedTuple):
    step: int
    n_context: int
    attended_tokens: int
    pool_size: int
    evictions: int


def box_neighbours(c: PatchCoord, plan: OrderPlan, extent: Extent) -> list[PatchCoord]:
    """Grid patches inside the extent box of ``c`` (same or earlier frames), ``c`` excluded."""
    d = plan.dims
    e_w, e_h, e_f = extent
    out = []
    for frame in range(max(0, c.frame - e_f), c.frame + 1):
        for row in range(max(0, c.row - e_h), min(d.h_p - 1, c.row + e_h) + 1):
            for col in range(max(0, c.col - e_w), min(d.w_p - 1, c.col + e_w) + 1):
                n = PatchCoord(row, col, frame)
                if n != c:
                    out.append(n)
    return out


class ContextPool:
    """Bounded store of patch caches for one generation or training sequence.

    Lifetimes come from the full plan up front: a patch stays pooled until the
    last later patch whose extent box contains it has been added.
    """

    def __init__(self, plan: OrderPlan, extent: Extent, caches_enabled: bool = True):
        self.plan = plan
        self.extent = Extent(*extent).checked()
        self.caches_enabled = caches_enabled
        self.entries: dict[PatchCoord, LayerCache] = {}
        self.cursor = 0
        self.peak_size = 0
        self.steps: list[PoolStep] = []
        self.last_use = self._lifetimes()
        self._n_context: dict[int, int] = {}

    def _lifetimes(self) -> dict[PatchCoord, int]:
        last_use = {c: step for step, c in enumerate(self.plan.sequence)}
        for step, c in enumerate(self.plan.sequence):
            for n in box_neighbours(c, self.plan, self.extent):
                if self.plan.step_of(n) < step and last_use[n] < step:
                    last_use[n] = step
        return last_use

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.plan.sequence)

    def expected(self) -> PatchCoord:
        if self.done:
            raise SequencingError("plan exhausted, no patch left to generate")
        return self.plan.sequence[self.cursor]

    def select(self, c: PatchCoord) -> list[tuple[PatchCoord, LayerCache]]:
        """Pooled caches inside the extent of ``c``, oldest generation step first."""
        if c != self.expected():
            raise SequencingError(f"select({tuple(c)}) out of order, step {self.cursor} is {tuple(self.expected())}")
        needed = sorted(
            (n for n in box_neighbours(c, self.plan, self.extent) if self.plan.step_of(n) < self.cursor),
            key=self.plan.step_of,
        )
        missing = [n for n in needed if n not in self.entries]
        if missing:
            raise EvictionError(f"context {[tuple(n) for n in missing]} for patch {tuple(c)} already evicted")
        self._n_context[self.cursor] = len(needed)
        context = [(n, self.entries[n]) for n in needed]
        if not self.caches_enabled:
            context = [
                (n, LayerCache(coord=n, layers=np.repeat(cache.layers[:1], cache.depth, axis=0)))
                for n, cache in context
            ]
        return context

    def add(self, cache: LayerCache) -> None:
        if cache.coord in self.entries:
            raise PoolStateError(f"patch {tuple(cache.coord)} already pooled")
        if cache.coord != self.expected():
            raise SequencingError(f"add({tuple(cache.coord)}) out of order, step {self.cursor} is {tuple(self.expected())}")
        self.entries[cache.coord] = cache
        self.cursor += 1
        self.peak_size = max(self.peak_size, len(self.entries))

    def remove(self) -> list[PatchCoord]:
        """Evicts every entry no later patch can select; a second call at the same cursor is a no-op."""
        size = len(self.entries)
        evicted = [c for c in self.entries if self.last_use[c] < self.cursor]
        for c in evicted:
            del self.entries[c]
        step = self.cursor - 1
        if step >= 0 and (not self.steps or self.steps[-1].step < step):
            n_context = self._n_context.get(step, 0)
            self.steps.append(PoolStep(step, n_context, n_context * self.plan.dims.M, size, len(evicted)))
        if evicted:
            logger.debug("step %d evicted %s", step, [tuple(c) for c in evicted])
        return evicted


def pool_new(plan: OrderPlan, extent: Extent, caches_enabled: bool = True) -> ContextPool:
    return ContextPool(plan, extent, caches_enabled=caches_enabled)
