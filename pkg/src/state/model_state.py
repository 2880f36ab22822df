from enum import Enum
from functools import cached_property
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.adc.direction_controller import ALL_FAMILIES, RelOffset, RpeTable, reachable_offsets
from src.errors import ConfigError
from src.state.grid_state import Extent, GridDims

DEFAULT_EXTENT = Extent(2, 2, 0)


class RpeFeed(str, Enum):
    PRE = "pre"    # added to keys before QK^T
    POST = "post"  # added to the scores after QK^T


class LocalMode(str, Enum):
    AR = "ar"
    NAR = "nar"
    PNAR = "pnar"


PRESETS: dict[str, dict[str, int]] = {
    "tiny": {"layers": 1, "d": 16, "heads": 2},
    "base": {"layers": 2, "d": 32, "heads": 2},
    "large": {"layers": 2, "d": 64, "heads": 4},
}


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    layers: int = Field(2, ge=1, description="Decoder layers L")
    d: int = Field(32, ge=2, description="Model width")
    heads: int = Field(2, ge=1)
    m_side: int = Field(4, ge=1, description="Tokens per patch side")
    vocab: int = Field(64, ge=2, description="Visual codebook size")
    text_vocab: int = Field(0, ge=0, description="Caption vocabulary, 0 without text")
    text_len: int = Field(0, ge=0, description="Caption length T, 0 disables cross-attention")
    extent: Extent = DEFAULT_EXTENT
    rpe_offsets: tuple[RelOffset, ...] | None = Field(
        None, description="Relative offset table; derived from every supported plan when omitted"
    )
    rpe_feed: RpeFeed = RpeFeed.PRE
    rpe_every_layer: bool = True
    local_mode: LocalMode = LocalMode.AR
    pnar_rounds: int = Field(8, ge=1)
    caches_enabled: bool = True
    ffn_mult: int = Field(4, ge=1)
    init_scale: float = Field(0.02, gt=0)
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _fill_offsets(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("rpe_offsets") is None:
            extent = Extent(*data.get("extent", DEFAULT_EXTENT)).checked()
            data = {**data, "rpe_offsets": reachable_offsets(ALL_FAMILIES, extent).offsets}
        return data

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        self.extent.checked()
        if self.d % self.heads:
            raise ConfigError(f"width {self.d} is not divisible by {self.heads} heads")
        if self.text_len and self.text_vocab < 2:
            raise ConfigError("cross-attention needs a caption vocabulary of at least 2 words")
        if self.local_mode is LocalMode.PNAR and self.pnar_rounds > self.M:
            raise ConfigError(f"pnar_rounds {self.pnar_rounds} exceeds {self.M} tokens per patch")
        return self

    @property
    def M(self) -> int:
        return self.m_side * self.m_side

    @property
    def bop_id(self) -> int:
        return self.vocab

    @property
    def mask_id(self) -> int:
        return self.vocab + 1

    @property
    def embedding_rows(self) -> int:
        return self.vocab + 2

    @property
    def cross_attention(self) -> bool:
        return self.text_len > 0

    @cached_property
    def rpe_table(self) -> RpeTable:
        return RpeTable(offsets=self.rpe_offsets)

    def grid(self, h_p: int, w_p: int, f: int = 1) -> GridDims:
        return GridDims(h_p=h_p, w_p=w_p, f=f, m_side=self.m_side, vocab=self.vocab)

    def check_dims(self, dims: GridDims) -> None:
        if dims.m_side != self.m_side or dims.vocab != self.vocab:
            raise ConfigError(
                f"grid has m_side={dims.m_side}, vocab={dims.vocab}; model expects {self.m_side}, {self.vocab}"
            )

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "ModelConfig":
        try:
            base = PRESETS[name]
        except KeyError:
            raise ConfigError(f"unknown model preset {name!r}, expected one of {sorted(PRESETS)}") from None
        return cls(**{**base, **overrides})
