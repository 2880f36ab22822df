import csv
import io
import logging
from pathlib import Path

import numpy as np

from src.adc.direction_controller import OrderPlan
from src.cache.context_pool import ContextPool, LayerCache, PoolStep
from src.errors import FormatError
from src.state.grid_state import Extent

logger = logging.getLogger(__name__)

COLUMNS = ("step", "n_context", "attended_tokens", "pool_size", "evictions")


def bench_pool(plan: OrderPlan, extent: Extent, no_pool: bool = False) -> list[PoolStep]:
    """Per-step context and pool statistics of a plan, without running a model.

    ``no_pool`` reports the full-context alternative: every earlier patch is
    context and nothing is ever evicted.
    """
    m = plan.dims.M
    if no_pool:
        return [PoolStep(step, step, step * m, step + 1, 0) for step in range(plan.dims.N)]
    pool = ContextPool(plan, extent)
    blank = np.zeros((1, 1, 1))
    for c in plan.sequence:
        pool.select(c)
        pool.add(LayerCache(coord=c, layers=blank))
        pool.remove()
    logger.info("bench %s extent %s: peak pool %d patches", plan.dims, tuple(extent), pool.peak_size)
    return pool.steps


def csv_text(rows: list[PoolStep]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COLUMNS)
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv(rows: list[PoolStep], path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(csv_text(rows))
    except OSError as e:
        raise FormatError(f"cannot write {path}: {e.strerror or e}") from e
    return path
