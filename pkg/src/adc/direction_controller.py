import functools
import logging
from enum import Enum
from typing import Any, Iterable, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from src.errors import ConfigError, GeometryError, MissingOffsetError, SequencingError
from src.state.grid_state import Extent, GridDims, PatchCoord

logger = logging.getLogger(__name__)


class ScanOrder(str, Enum):
    OMEGA = "omega"            # rows down, each row left to right
    OMEGA_STAR = "omega_star"  # rows down, each row right to left
    ZETA = "zeta"              # columns right, each column top to bottom
    ZETA_STAR = "zeta_star"    # columns right, each column bottom to top


class PlanFamily(str, Enum):
    """Plans the relative-offset table has to cover."""

    OMEGA = "omega"
    OMEGA_STAR = "omega_star"
    ZETA = "zeta"
    ZETA_STAR = "zeta_star"
    RING = "ring"

    @property
    def scan_order(self) -> ScanOrder | None:
        return None if self is PlanFamily.RING else ScanOrder(self.value)


BASE_FAMILIES = frozenset(PlanFamily(o.value) for o in ScanOrder)
ALL_FAMILIES = frozenset(PlanFamily)


class RelOffset(NamedTuple):
    """Context position relative to the patch being generated.

    Row and column deltas are context minus current; the frame delta is
    current minus context, so it is never negative.
    """

    d_row: int
    d_col: int
    d_frame: int = 0


SELF_OFFSET = RelOffset(0, 0, 0)


class PatchRect(BaseModel):
    model_config = ConfigDict(frozen=True)

    row: int = Field(..., description="Top patch row")
    col: int = Field(..., description="Left patch column")
    rows: int = Field(..., ge=1)
    cols: int = Field(..., ge=1)
    frame: int = 0

    @property
    def last_row(self) -> int:
        return self.row + self.rows - 1

    @property
    def last_col(self) -> int:
        return self.col + self.cols - 1

    def inside(self, d: GridDims) -> bool:
        return (
            self.row >= 0 and self.col >= 0 and 0 <= self.frame < d.f
            and self.last_row < d.h_p and self.last_col < d.w_p
        )

    def cells(self) -> list[PatchCoord]:
        return [
            PatchCoord(r, c, self.frame)
            for r in range(self.row, self.last_row + 1)
            for c in range(self.col, self.last_col + 1)
        ]


class OrderPlan(BaseModel):
    """A total generation order over the patches of a grid.

    The first ``prefix_len`` entries are condition patches, fed teacher-forced
    before anything is generated.
    """

    model_config = ConfigDict(frozen=True)

    dims: GridDims
    sequence: tuple[PatchCoord, ...]
    prefix_len: int = Field(0, ge=0)

    _step_of: dict[PatchCoord, int] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_permutation(self) -> "OrderPlan":
        d = self.dims
        if len(self.sequence) != d.N or len(set(self.sequence)) != d.N:
            raise GeometryError(f"plan must visit each of the {d.N} patches exactly once")
        if any(not d.contains(c) for c in self.sequence):
            raise GeometryError("plan holds a patch outside the grid")
        if self.prefix_len > d.N:
            raise GeometryError(f"prefix_len {self.prefix_len} exceeds {d.N} patches")
        return self

    def model_post_init(self, __context: Any) -> None:
        self._step_of = {c: i for i, c in enumerate(self.sequence)}

    def step_of(self, c: PatchCoord) -> int:
        try:
            return self._step_of[c]
        except KeyError:
            raise SequencingError(f"patch {tuple(c)} is not part of the plan") from None

    @property
    def generated(self) -> tuple[PatchCoord, ...]:
        return self.sequence[self.prefix_len:]


def _frame_scan(h: int, w: int, order: ScanOrder, frame: int) -> list[PatchCoord]:
    if order is ScanOrder.OMEGA:
        return [PatchCoord(r, c, frame) for r in range(h) for c in range(w)]
    if order is ScanOrder.OMEGA_STAR:
        return [PatchCoord(r, c, frame) for r in range(h) for c in reversed(range(w))]
    if order is ScanOrder.ZETA:
        return [PatchCoord(r, c, frame) for c in range(w) for r in range(h)]
    return [PatchCoord(r, c, frame) for c in range(w) for r in reversed(range(h))]


def split_base(d: GridDims, order: ScanOrder | str = ScanOrder.OMEGA, prefix_len: int = 0) -> OrderPlan:
    """Frames in ascending order, each frame scanned in ``order``."""
    order = ScanOrder(order)
    sequence: list[PatchCoord] = []
    for frame in range(d.f):
        sequence.extend(_frame_scan(d.h_p, d.w_p, order, frame))
    return OrderPlan(dims=d, sequence=tuple(sequence), prefix_len=prefix_len)


def _ring_cells(h: int, w: int, rect: PatchRect) -> list[tuple[int, int]]:
    """Rings around ``rect``: above, below, left, right, clipped to the canvas."""
    cells: list[tuple[int, int]] = []
    depth = max(rect.row, h - 1 - rect.last_row, rect.col, w - 1 - rect.last_col)
    for k in range(1, depth + 1):
        top, bottom = rect.row - k, rect.last_row + k
        left, right = rect.col - k, rect.last_col + k
        col_span = range(max(left, 0), min(right, w - 1) + 1)
        row_span = range(max(top + 1, 0), min(bottom - 1, h - 1) + 1)
        if top >= 0:
            cells.extend((top, c) for c in col_span)
        if bottom < h:
            cells.extend((bottom, c) for c in col_span)
        if left >= 0:
            cells.extend((r, left) for r in row_span)
        if right < w:
            cells.extend((r, right) for r in row_span)
    return cells


def _outpaint_sequence(d: GridDims, condition: PatchRect) -> list[PatchCoord]:
    spatial = [(c.row, c.col) for c in condition.cells()] + _ring_cells(d.h_p, d.w_p, condition)
    return [PatchCoord(r, c, frame) for frame in range(d.f) for r, c in spatial]


def split_outpaint(d: GridDims, condition: PatchRect) -> OrderPlan:
    """Condition patches first, then expanding rectangular rings around them.

    Later frames of a video canvas repeat the frame-0 spatial order; only the
    frame-0 condition patches form the prefix.
    """
    if not condition.inside(d):
        raise GeometryError(
            f"condition rows {condition.row}..{condition.last_row}, cols {condition.col}..{condition.last_col} "
            f"not inside a {d.h_p}x{d.w_p} canvas"
        )
    if condition.frame != 0:
        raise GeometryError("outpainting conditions must sit in frame 0")
    sequence = _outpaint_sequence(d, condition)
    return OrderPlan(dims=d, sequence=tuple(sequence), prefix_len=condition.rows * condition.cols)


def extend_plan(d: GridDims, direction: str, condition_size: int) -> OrderPlan:
    """Single-direction outpainting: the condition sits flush against the opposite edge."""
    if direction in ("right", "left"):
        if not 1 <= condition_size <= d.w_p:
            raise GeometryError(f"condition width {condition_size} does not fit {d.w_p} columns")
        col = 0 if direction == "right" else d.w_p - condition_size
        rect = PatchRect(row=0, col=col, rows=d.h_p, cols=condition_size)
    elif direction in ("down", "up"):
        if not 1 <= condition_size <= d.h_p:
            raise GeometryError(f"condition height {condition_size} does not fit {d.h_p} rows")
        row = 0 if direction == "down" else d.h_p - condition_size
        rect = PatchRect(row=row, col=0, rows=condition_size, cols=d.w_p)
    else:
        raise GeometryError(f"unknown extend direction {direction!r}")
    return split_outpaint(d, rect)


class RpeTable(BaseModel):
    """Dense ids for the relative offsets a model can meet; the self offset is id 0."""

    model_config = ConfigDict(frozen=True)

    offsets: tuple[RelOffset, ...]

    _ids: dict[RelOffset, int] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_offsets(self) -> "RpeTable":
        if not self.offsets or self.offsets[0] != SELF_OFFSET:
            raise ConfigError("relative offset table must start with the self offset (0, 0, 0)")
        if len(set(self.offsets)) != len(self.offsets):
            raise ConfigError("relative offset table holds duplicates")
        return self

    def model_post_init(self, __context: Any) -> None:
        self._ids = {o: i for i, o in enumerate(self.offsets)}

    def __len__(self) -> int:
        return len(self.offsets)

    def __contains__(self, offset: object) -> bool:
        return offset in self._ids

    def id_of(self, offset: RelOffset) -> int:
        try:
            return self._ids[offset]
        except KeyError:
            raise MissingOffsetError(f"relative offset {tuple(offset)} is not in the table") from None

    @classmethod
    def from_offsets(cls, offsets: Iterable[RelOffset | tuple[int, int, int]]) -> "RpeTable":
        rest = sorted({RelOffset(*o) for o in offsets} - {SELF_OFFSET}, key=lambda o: (o.d_frame, o.d_row, o.d_col))
        return cls(offsets=(SELF_OFFSET, *rest))


def _scan_plans(scratch: GridDims, families: frozenset[PlanFamily]) -> Iterable[list[PatchCoord]]:
    for family in sorted(families, key=lambda f: f.value):
        if family.scan_order is not None:
            yield list(split_base(scratch, family.scan_order).sequence)
            continue
        for row in range(scratch.h_p):
            for col in range(scratch.w_p):
                for rows in range(1, scratch.h_p - row + 1):
                    for cols in range(1, scratch.w_p - col + 1):
                        yield _outpaint_sequence(scratch, PatchRect(row=row, col=col, rows=rows, cols=cols))


@functools.lru_cache(maxsize=64)
def _reachable(families: frozenset[PlanFamily], extent: Extent) -> tuple[RelOffset, ...]:
    e_w, e_h, e_f = extent
    scratch = GridDims(h_p=2 * e_h + 3, w_p=2 * e_w + 3, f=e_f + 2)
    H, W, F = scratch.h_p, scratch.w_p, scratch.f
    box = [
        RelOffset(dr, dc, df)
        for df in range(e_f + 1)
        for dr in range(-e_h, e_h + 1)
        for dc in range(-e_w, e_w + 1)
    ]
    found = {SELF_OFFSET}
    steps = np.empty((F, H, W), dtype=np.int64)
    for sequence in _scan_plans(scratch, families):
        for i, c in enumerate(sequence):
            steps[c.frame, c.row, c.col] = i
        for o in box:
            if o in found:
                continue
            dr, dc, df = o
            current = steps[df:, max(0, -dr):H - max(0, dr), max(0, -dc):W - max(0, dc)]
            context = steps[:F - df, max(0, dr):H + min(0, dr), max(0, dc):W + min(0, dc)]
            if np.any(context < current):
                found.add(o)
        if len(found) == len(box):
            break
    return tuple(found)


def reachable_offsets(families: Iterable[PlanFamily | ScanOrder | str], extent: Extent) -> RpeTable:
    """Offsets that some supported plan can select as context, by simulation on a scratch grid."""
    extent = Extent(*extent).checked()
    family_set = frozenset(PlanFamily(getattr(f, "value", f)) for f in families)
    table = RpeTable.from_offsets(_reachable(family_set, extent))
    logger.debug("relative offset table for %s at extent %s: %d entries",
                 sorted(f.value for f in family_set), tuple(extent), len(table))
    return table


def emb_assign(plan: OrderPlan, step: int, context: Iterable[PatchCoord], table: RpeTable) -> list[int]:
    """Embedding ids for [current patch; context], self id first."""
    current = plan.sequence[step]
    ids = [table.id_of(SELF_OFFSET)]
    for c in context:
        if plan.step_of(c) >= step:
            raise SequencingError(f"context patch {tuple(c)} is not earlier than step {step}")
        ids.append(table.id_of(RelOffset(c.row - current.row, c.col - current.col, current.frame - c.frame)))
    return ids


def render_plan(plan: OrderPlan) -> str:
    """1-based generation indices as a text matrix, frames separated by a blank line."""
    d = plan.dims
    width = len(str(d.N))
    grid = np.zeros((d.f, d.h_p, d.w_p), dtype=np.int64)
    for i, c in enumerate(plan.sequence):
        grid[c.frame, c.row, c.col] = i + 1
    frames = [
        "\n".join(" ".join(str(v).rjust(width) for v in row) for row in grid[f])
        for f in range(d.f)
    ]
    return "\n\n".join(frames)


def plan_heatmap(plan: OrderPlan, block: int = 8) -> np.ndarray:
    """Grayscale image, generation index mapped to intensity; frames stacked vertically."""
    d = plan.dims
    grid = np.zeros((d.f, d.h_p, d.w_p), dtype=np.float64)
    for i, c in enumerate(plan.sequence):
        grid[c.frame, c.row, c.col] = (i + 1) / d.N
    image = np.round(grid * 255).astype(np.uint8).reshape(d.f * d.h_p, d.w_p)
    return np.kron(image, np.ones((block, block), dtype=np.uint8))
