"""Short training runs that vary one design choice at a time."""

import logging
import time
from typing import Any

from pydantic import BaseModel

from src.adc.direction_controller import split_base
from src.codec.patterns import PatternFamily, synth_dataset
from src.decoder.vision_decoder import VisionDecoder
from src.errors import UsageError
from src.pipeline.bench import bench_pool
from src.pipeline.trainer import Trainer
from src.state.grid_state import Extent, GridDims
from src.state.model_state import ModelConfig
from src.state.pipeline_state import TrainConfig

logger = logging.getLogger(__name__)

CANVAS_TOKENS = 8

SWEEPS: dict[str, list[tuple[str, dict[str, Any], dict[str, Any]]]] = {
    "patch-size": [
        ("m_side=2", {"m_side": 2}, {}),
        ("m_side=4", {"m_side": 4}, {}),
    ],
    "extent": [
        ("0,0,0", {"extent": Extent(0, 0, 0)}, {}),
        ("1,1,0", {"extent": Extent(1, 1, 0)}, {}),
        ("2,2,0", {"extent": Extent(2, 2, 0)}, {}),
    ],
    "rpe-feed": [
        ("pre", {"rpe_feed": "pre"}, {}),
        ("post", {"rpe_feed": "post"}, {}),
    ],
    "caches": [
        ("on", {"caches_enabled": True}, {}),
        ("off", {"caches_enabled": False}, {}),
    ],
    "decoder": [
        ("ar", {"local_mode": "ar"}, {}),
        ("nar", {"local_mode": "nar"}, {}),
        ("pnar", {"local_mode": "pnar", "pnar_rounds": 4}, {}),
    ],
    "loss": [
        ("patch", {}, {"loss_mode": "patch"}),
        ("accumulated", {}, {"loss_mode": "accumulated"}),
    ],
}


class AblationRow(BaseModel):
    sweep: str
    setting: str
    heldout_ce: float
    peak_attended_tokens: int
    optimizer_steps: int
    seconds: float


def run_sweep(
    sweep: str,
    steps: int = 60,
    seed: int = 0,
    families: tuple[str, ...] = ("v_stripes", "checker"),
    heldout: int = 8,
    vocab: int = 64,
) -> list[AblationRow]:
    """Trains the ``tiny`` preset once per setting on the same data and reports held-out CE."""
    try:
        settings = SWEEPS[sweep]
    except KeyError:
        raise UsageError(f"unknown sweep {sweep!r}, expected one of {sorted(SWEEPS)}") from None
    rows = []
    logger.info("----- Ablation sweep %s (%d settings) ----", sweep, len(settings))
    for label, model_overrides, train_overrides in settings:
        started = time.perf_counter()
        config = ModelConfig.preset("tiny", vocab=vocab, seed=seed, **{"m_side": 2, **model_overrides})
        side = CANVAS_TOKENS // config.m_side
        dims = GridDims(h_p=side, w_p=side, m_side=config.m_side, vocab=vocab)
        mix = [PatternFamily(f) for f in families]
        data = synth_dataset(mix, steps, dims, seed)
        held = synth_dataset(mix, heldout, dims, seed + 1)
        model = VisionDecoder(config)
        trainer = Trainer(model, TrainConfig(steps=steps, seed=seed, progress=False, **train_overrides))
        trainer.fit(data)
        ce = trainer.eval_heldout(held)
        peak = max(s.attended_tokens for s in bench_pool(split_base(dims), config.extent))
        rows.append(AblationRow(
            sweep=sweep,
            setting=label,
            heldout_ce=ce,
            peak_attended_tokens=peak,
            optimizer_steps=model.store.step_count,
            seconds=time.perf_counter() - started,
        ))
        logger.info("%s %s: held-out CE %.4f, peak attended %d", sweep, label, ce, peak)
    return rows
