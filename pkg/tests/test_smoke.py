"""Desk-scale learning runs. Minutes on a laptop CPU; run with ``pytest -m slow``."""

import math

import pytest

from src.codec.captions import CAPTION_LEN, WORDS
from src.codec.patterns import classify_pattern, synth_dataset
from src.decoder.vision_decoder import VisionDecoder
from src.pipeline.generator import Generator
from src.pipeline.trainer import Trainer
from src.state.grid_state import Extent
from src.state.model_state import ModelConfig
from src.state.pipeline_state import GenRequest, LossMode, Task, TrainConfig

pytestmark = pytest.mark.slow

FAMILIES = ("v_stripes", "checker")
BASELINE = math.log(64)
BATCH = 16


def _config(captions: bool) -> ModelConfig:
    text = {"text_len": CAPTION_LEN, "text_vocab": len(WORDS)} if captions else {}
    return ModelConfig.preset("large", m_side=4, vocab=64, extent=Extent(1, 1, 0), seed=0, **text)


def _train(config: ModelConfig, loss_mode: LossMode, steps: int = 500):
    dims = config.grid(2, 2)
    data = synth_dataset(FAMILIES, steps * BATCH, dims, seed=0)
    heldout = synth_dataset(FAMILIES, 16, dims, seed=1)
    model = VisionDecoder(config)
    train_config = TrainConfig(
        steps=steps, batch_size=BATCH, lr=1e-3, warmup=0.1, loss_mode=loss_mode, seed=0, progress=False,
    )
    trainer = Trainer(model, train_config)
    history = trainer.fit(data, heldout)
    return model, history[-1]["heldout_ce"], heldout


@pytest.fixture(scope="module")
def captioned_run():
    return _train(_config(captions=True), LossMode.PATCH)


def test_training_halves_the_uniform_cross_entropy(captioned_run):
    _, ce, _ = captioned_run
    assert ce <= 0.5 * BASELINE


def test_captions_steer_greedy_generation(captioned_run):
    model, _, heldout = captioned_run
    generator = Generator(model)
    hits = 0
    for sample in heldout:
        req = GenRequest(task=Task.T2I, dims=sample.grid.dims, text=sample.caption)
        hits += classify_pattern(generator.generate(req)) is sample.spec.family
    assert hits >= 0.8 * len(heldout)


@pytest.mark.parametrize("loss_mode", list(LossMode))
def test_both_loss_modes_beat_the_baseline(loss_mode):
    _, ce, _ = _train(_config(captions=False), loss_mode, steps=200)
    assert ce < BASELINE
