import logging
from enum import Enum
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.codec.captions import octal_words, tokenize_caption
from src.errors import ConfigError
from src.numerics.rng import Rng
from src.state.grid_state import GridDims, TokenGrid

logger = logging.getLogger(__name__)


class PatternFamily(str, Enum):
    CONSTANT = "constant"
    H_STRIPES = "h_stripes"
    V_STRIPES = "v_stripes"
    CHECKER = "checker"
    RAMP = "ramp"
    UNKNOWN = "unknown"


FAMILY_WORDS = {
    PatternFamily.CONSTANT: "constant",
    PatternFamily.H_STRIPES: "horizontal",
    PatternFamily.V_STRIPES: "vertical",
    PatternFamily.CHECKER: "checker",
    PatternFamily.RAMP: "ramp",
}
PERIODIC = frozenset({PatternFamily.H_STRIPES, PatternFamily.V_STRIPES, PatternFamily.CHECKER})
MAX_PERIOD = 4
MAX_DELTA = 7


class PatternSpec(BaseModel):
    """Procedural token pattern. Video frames shift the pattern one token per frame."""

    model_config = ConfigDict(frozen=True)

    family: PatternFamily
    period: int = Field(1, ge=1, le=7)
    base: int = Field(..., ge=0)
    delta: int = Field(0, ge=0)

    def canvas(self, height: int, width: int, vocab: int, frame: int = 0) -> np.ndarray:
        y, x = np.mgrid[0:height, 0:width]
        f = self.family
        if f is PatternFamily.CONSTANT:
            values = np.full((height, width), self.base)
        elif f is PatternFamily.V_STRIPES:
            values = self.base + ((x + frame) % self.period) * self.delta
        elif f is PatternFamily.H_STRIPES:
            values = self.base + ((y + frame) % self.period) * self.delta
        elif f is PatternFamily.CHECKER:
            values = self.base + ((x + y + frame) % self.period) * self.delta
        elif f is PatternFamily.RAMP:
            values = self.base + (x + frame) * self.delta
        else:
            raise ConfigError("cannot render an UNKNOWN pattern")
        return (values % vocab).astype(np.int64)

    def render(self, dims: GridDims) -> TokenGrid:
        height, width = dims.canvas_shape()
        frames = [self.canvas(height, width, dims.vocab, frame) for frame in range(dims.f)]
        return TokenGrid.from_canvas(frames, dims)

    def caption_words(self) -> list[str]:
        return [
            FAMILY_WORDS[self.family], octal_words(self.period)[1],
            "base", *octal_words(self.base), "delta", *octal_words(self.delta),
        ]

    def caption(self) -> tuple[int, ...]:
        return tokenize_caption(self.caption_words())


class Sample(NamedTuple):
    grid: TokenGrid
    caption: tuple[int, ...]
    spec: PatternSpec


def random_spec(family: PatternFamily, rng: Rng, vocab: int) -> PatternSpec:
    """Random parameters for ``family``; periodic steps are one octal digit, periods at most 4."""
    base = int(rng.integers(0, vocab))
    if family is PatternFamily.CONSTANT:
        return PatternSpec(family=family, base=base)
    if family is PatternFamily.RAMP:
        return PatternSpec(family=family, base=base, delta=int(rng.integers(1, 4)))
    period = int(rng.integers(2, min(MAX_PERIOD, vocab) + 1))
    while True:
        delta = int(rng.integers(1, min(MAX_DELTA, vocab - 1) + 1))
        if all((i * delta) % vocab for i in range(1, period)):
            return PatternSpec(family=family, period=period, base=base, delta=delta)


def synth_dataset(
    mix: Mapping[PatternFamily | str, float] | Sequence[PatternFamily | str],
    count: int,
    dims: GridDims,
    seed: int,
) -> list[Sample]:
    """Deterministic pattern grids with captions; families drawn according to ``mix``."""
    if count < 1:
        raise ConfigError(f"dataset count must be >= 1, got {count}")
    weights = dict(mix) if isinstance(mix, Mapping) else {f: 1.0 for f in mix}
    families = [PatternFamily(f) for f in weights]
    if PatternFamily.UNKNOWN in families or not families:
        raise ConfigError(f"bad family mix {list(weights)}")
    probs = np.asarray(list(weights.values()), dtype=np.float64)
    probs = probs / probs.sum()
    rng = Rng(seed, "synth_dataset")
    samples = []
    for _ in range(count):
        family = families[int(rng.choice(len(families), p=probs))]
        spec = random_spec(family, rng, dims.vocab)
        samples.append(Sample(spec.render(dims), spec.caption(), spec))
    logger.info("----- Synthesized %d pattern grids (%s) ----", count, ", ".join(f.value for f in families))
    return samples


def _period(seq: np.ndarray) -> int | None:
    """Smallest period p >= 2 with p <= len/2 and p distinct leading values."""
    n = len(seq)
    for p in range(2, n // 2 + 1):
        if len(set(seq[:p].tolist())) == p and np.array_equal(seq, seq[np.arange(n) % p]):
            return p
    return None


def _classify_canvas(c: np.ndarray, vocab: int) -> PatternFamily:
    if (c == c[0, 0]).all():
        return PatternFamily.CONSTANT
    rows_equal = (c == c[0]).all()
    if rows_equal and _period(c[0]) is not None:
        return PatternFamily.V_STRIPES
    if (c == c[:, :1]).all() and _period(c[:, 0]) is not None:
        return PatternFamily.H_STRIPES
    h, w = c.shape
    y, x = np.mgrid[0:h, 0:w]
    j = np.arange(h + w - 1)
    first_row = np.maximum(0, j - (w - 1))
    diagonals = c[first_row, j - first_row]
    if (c == diagonals[x + y]).all() and _period(diagonals) is not None:
        return PatternFamily.CHECKER
    if rows_equal and w > 1:
        steps = np.diff(c[0]) % vocab
        if steps[0] != 0 and (steps == steps[0]).all():
            return PatternFamily.RAMP
    return PatternFamily.UNKNOWN


def classify_pattern(grid: TokenGrid) -> PatternFamily:
    """Strict rule-based family detector; every frame must show the same family."""
    families = {_classify_canvas(grid.canvas(frame), grid.dims.vocab) for frame in range(grid.dims.f)}
    return families.pop() if len(families) == 1 else PatternFamily.UNKNOWN
