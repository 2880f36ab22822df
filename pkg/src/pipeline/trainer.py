import logging
import math
from typing import Sequence

import numpy as np
from tqdm import tqdm

from src.adc.direction_controller import BASE_FAMILIES, ScanOrder, reachable_offsets, split_base
from src.cache.context_pool import ContextPool
from src.codec.patterns import Sample
from src.decoder.vision_decoder import VisionDecoder
from src.errors import ConfigError
from src.graph.graph_builder import GraphBuilder, run_loop
from src.numerics.optim import adam_step, warmup_lr
from src.numerics.rng import Rng
from src.state.grid_state import Extent, TokenGrid
from src.state.pipeline_state import LossMode, PatchLane, TrainConfig

logger = logging.getLogger(__name__)

Example = tuple[TokenGrid, Sequence[int] | None]


class Trainer:
    """Per-patch training: every sample walks a randomly chosen base order through the patch loop."""

    def __init__(self, model: VisionDecoder, config: TrainConfig):
        self.model = model
        self.config = config
        self.extent = Extent(*(config.extent or model.config.extent)).checked()
        needed = set(reachable_offsets(BASE_FAMILIES, self.extent).offsets)
        missing = needed - set(model.table.offsets)
        if missing:
            raise ConfigError(f"training extent {tuple(self.extent)} reaches offsets outside the model table: {sorted(missing)}")
        self.rng = Rng(config.seed, "train")
        self.total_optimizer_steps = 1
        self.batches_seen = 0
        self.history: list[dict] = []
        self.graph = GraphBuilder(model, loss_mode=config.loss_mode, schedule=self.learning_rate).setup_graph()

    def learning_rate(self, optimizer_step: int) -> float:
        return warmup_lr(self.config.lr, optimizer_step, self.total_optimizer_steps, self.config.warmup)

    def _lane(self, grid: TokenGrid, text: Sequence[int] | None, order: ScanOrder, rng: Rng) -> PatchLane:
        self.model.config.check_dims(grid.dims)
        plan = split_base(grid.dims, order)
        pool = ContextPool(plan, self.extent, caches_enabled=self.model.config.caches_enabled)
        text_ids = tuple(text or ()) if self.model.config.cross_attention else ()
        return PatchLane(plan=plan, pool=pool, tokens=grid.tokens.copy(), text_ids=text_ids, rng=rng)

    def train_batch(self, batch: Sequence[Example]) -> list[list[float]]:
        """One optimizer pass over a batch of independent sequences; returns per-patch losses per sequence."""
        dims = {grid.dims for grid, _ in batch}
        if len(dims) != 1:
            raise ConfigError("a training batch must share one grid shape")
        rng = self.rng.child(f"batch/{self.batches_seen}")
        self.batches_seen += 1
        orders = self.config.orders
        lanes = [
            self._lane(grid, text, orders[int(rng.integers(0, len(orders)))], rng.child(f"lane/{i}"))
            for i, (grid, text) in enumerate(batch)
        ]
        n = lanes[0].plan.dims.N
        run_loop(self.graph, lanes, "train", 0, n)
        if self.config.loss_mode is LossMode.ACCUMULATED:
            adam_step(self.model.store, self.learning_rate(self.model.store.step_count))
        return [lane.losses for lane in lanes]

    def train_sample(self, grid: TokenGrid, text: Sequence[int] | None = None) -> list[float]:
        return self.train_batch([(grid, text)])[0]

    def fit(self, data: Sequence[Sample | Example], heldout: Sequence[Sample | Example] = ()) -> list[dict]:
        """Trains for ``steps`` batches (or ``epochs`` passes) and evaluates held-out CE at the end."""
        cfg = self.config
        examples = [(s[0], s[1]) for s in data]
        batches = cfg.steps or math.ceil(cfg.epochs * len(examples) / cfg.batch_size)
        total = batches * cfg.batch_size
        per_batch = examples[0][0].dims.N if cfg.loss_mode is LossMode.PATCH else 1
        self.total_optimizer_steps = batches * per_batch
        logger.info("----- Training %d samples in %d batches (%s loss) ----", total, batches, cfg.loss_mode.value)
        order = self.rng.child("shuffle").permutation(len(examples))
        for b in tqdm(range(batches), desc="train", disable=not cfg.progress):
            idx = [order[(b * cfg.batch_size + i) % len(examples)] for i in range(cfg.batch_size)]
            losses = self.train_batch([examples[i] for i in idx])
            self.history.append({"batch": b, "loss": float(np.mean([np.mean(l) for l in losses]))})
        if heldout:
            ce = self.eval_heldout(heldout)
            self.history.append({"batch": batches, "heldout_ce": ce})
            logger.info("held-out cross-entropy %.4f nats", ce)
        return self.history

    def eval_heldout(self, data: Sequence[Sample | Example], chunk: int = 16) -> float:
        """Teacher-forced mean per-token CE in omega order, without touching parameters."""
        examples = [(s[0], s[1]) for s in data]
        if len({grid.dims for grid, _ in examples}) > 1:
            raise ConfigError("held-out grids must share one grid shape")
        losses: list[float] = []
        for start in range(0, len(examples), chunk):
            part = examples[start:start + chunk]
            lanes = [
                self._lane(grid, text, ScanOrder.OMEGA, Rng(self.config.seed, f"eval/{start + i}"))
                for i, (grid, text) in enumerate(part)
            ]
            run_loop(self.graph, lanes, "score", 0, lanes[0].plan.dims.N)
            for lane in lanes:
                losses.extend(lane.losses)
        return float(np.mean(losses))
