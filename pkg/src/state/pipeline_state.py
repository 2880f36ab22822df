import json
import operator
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Literal, TypedDict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.adc.direction_controller import OrderPlan, PatchRect, ScanOrder
from src.cache.context_pool import ContextPool, LayerCache
from src.errors import UsageError
from src.numerics.rng import Rng
from src.numerics.tensor import Tensor
from src.state.grid_state import Extent, GridDims, PatchCoord, TokenGrid
from src.state.model_state import ModelConfig


class LossMode(str, Enum):
    PATCH = "patch"              # optimizer step after every patch
    ACCUMULATED = "accumulated"  # one optimizer step per sample


class Task(str, Enum):
    UNCOND = "uncond"
    T2I = "t2i"
    OUTPAINT = "outpaint"
    ANIMATE = "animate"
    T2V = "t2v"


CONDITIONED_TASKS = frozenset({Task.OUTPAINT, Task.ANIMATE})
TEXT_TASKS = frozenset({Task.T2I, Task.T2V})


TASK_EXTENTS = {
    Task.UNCOND: Extent(2, 2, 0),
    Task.T2I: Extent(2, 2, 0),
    Task.OUTPAINT: Extent(2, 2, 0),
    Task.ANIMATE: Extent(1, 1, 3),
    Task.T2V: Extent(2, 2, 3),
}


def default_extent(task: Task, dims: GridDims) -> Extent:
    """Per-task extent, clipped to the canvas in use."""
    e = TASK_EXTENTS[task]
    return Extent(min(e.e_w, dims.w_p - 1), min(e.e_h, dims.h_p - 1), min(e.e_f, dims.f - 1))


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(1, ge=1)
    steps: int | None = Field(None, ge=1, description="Stop after this many training steps (batches) when set")
    batch_size: int = Field(1, ge=1)
    lr: float = Field(1e-3, gt=0)
    warmup: float = Field(0.05, ge=0, le=1, description="Fraction of optimizer steps spent warming up")
    loss_mode: LossMode = LossMode.PATCH
    orders: tuple[ScanOrder, ...] = tuple(ScanOrder)
    extent: Extent | None = Field(None, description="Overrides the model extent when set")
    seed: int = 0
    progress: bool = True


class SamplerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["greedy", "topk"] = "greedy"
    k: int = Field(1, ge=1)
    temperature: float = Field(1.0, gt=0)


class GenRequest(BaseModel):
    """One generation job. Outpainting conditions are placed by ``placement``; animation takes a first frame."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    task: Task
    dims: GridDims
    condition: TokenGrid | None = None
    placement: PatchRect | None = None
    text: tuple[int, ...] | None = None
    sampler: SamplerConfig = SamplerConfig()
    order: ScanOrder = ScanOrder.OMEGA
    seed: int = 0

    @model_validator(mode="after")
    def _check_inputs(self) -> "GenRequest":
        if (self.condition is not None) != (self.task in CONDITIONED_TASKS):
            raise UsageError(f"task {self.task.value} {'needs' if self.task in CONDITIONED_TASKS else 'takes no'} condition")
        if (self.text is not None) != (self.task in TEXT_TASKS):
            raise UsageError(f"task {self.task.value} {'needs' if self.task in TEXT_TASKS else 'takes no'} text")
        if self.task is Task.OUTPAINT and self.placement is None:
            raise UsageError("outpainting needs a placement for the condition")
        return self


class DataConfig(BaseModel):
    families: tuple[str, ...] = ("v_stripes", "checker")
    count: int = Field(256, ge=1)
    heldout: int = Field(32, ge=0)
    grid: str = "4x4"
    captions: bool = True


class RunConfig(BaseModel):
    """Run configuration file; command-line flags override these values."""

    seed: int = 0
    model: dict[str, Any] = Field(default_factory=dict, description="ModelConfig fields or a 'preset' name")
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()
    gradcheck_cases: int = Field(50, ge=1)
    ablate_steps: int = Field(60, ge=1)

    def model_settings(self, **overrides: Any) -> ModelConfig:
        fields = {**self.model, **{k: v for k, v in overrides.items() if v is not None}}
        preset = fields.pop("preset", None)
        return ModelConfig.preset(preset, **fields) if preset else ModelConfig(**fields)


class RuntimeSettings(BaseModel):
    """Process settings read from the environment (after ``load_dotenv``)."""

    precision: Literal["float64", "float32"] = "float64"
    log_level: str = "WARNING"
    ckpt: str | None = None

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        return cls(
            precision=os.getenv("PATCHLOOM_PRECISION", "float64"),
            log_level=os.getenv("PATCHLOOM_LOG_LEVEL", "WARNING").upper(),
            ckpt=os.getenv("PATCHLOOM_CKPT") or None,
        )


class RunReport(BaseModel):
    command: str
    seed: int
    config_hash: str
    seconds: float = 0.0
    exit_code: int = 0
    metrics: dict[str, Any] = Field(default_factory=dict)
    outputs: list[str] = Field(default_factory=list)


class ReportEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, BaseModel):
            return obj.model_dump(mode="json")
        if isinstance(obj, np.generic):
            return obj.item()
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, Path):
            return str(obj)
        if isinstance(obj, Enum):
            return obj.value
        return super().default(obj)


@dataclass
class PatchLane:
    """One sequence moving through the per-patch loop with its own pool."""

    plan: OrderPlan
    pool: ContextPool
    tokens: np.ndarray
    text_ids: tuple[int, ...] = ()
    rng: Rng | None = None
    current: PatchCoord | None = None
    sampler: SamplerConfig = SamplerConfig()
    context: list[tuple[PatchCoord, LayerCache]] = field(default_factory=list)
    e_ids: list[int] = field(default_factory=list)
    cache: LayerCache | None = None
    loss: Tensor | None = None
    losses: list[float] = field(default_factory=list)
    passes: int = 0


class PatchLoopState(TypedDict):
    phase: Literal["precache", "train", "generate", "score"]
    step: int
    stop: int
    lanes: list[PatchLane]
    trace: Annotated[list[str], operator.add]
