import numpy as np
import pytest

from src.adc.direction_controller import (
    ALL_FAMILIES,
    PatchRect,
    ScanOrder,
    emb_assign,
    reachable_offsets,
    split_base,
    split_outpaint,
)
from src.cache.context_pool import ContextPool, LayerCache, box_neighbours, pool_new
from src.errors import EvictionError, PoolStateError, SequencingError, ShapeError
from src.numerics.rng import Rng
from src.pipeline.bench import bench_pool
from src.state.grid_state import Extent, GridDims, PatchCoord


def _cache(c: PatchCoord, layers: int = 2, value: float = 0.0) -> LayerCache:
    data = np.full((layers, 1, 1), value)
    data[:, 0, 0] += np.arange(layers)
    return LayerCache(coord=c, layers=data)


def _walk(plan, extent, table=None):
    pool = pool_new(plan, extent)
    sizes = []
    for step, c in enumerate(plan.sequence):
        context = pool.select(c)
        if table is not None:
            emb_assign(plan, step, [n for n, _ in context], table)
        sizes.append(len(context))
        pool.add(_cache(c))
        pool.remove()
    return pool, sizes


def test_context_sizes_on_omega_3x3(dims_3x3):
    pool, sizes = _walk(split_base(dims_3x3), Extent(1, 1, 0))
    assert sizes == [0, 1, 1, 2, 4, 3, 2, 4, 3]
    assert [s.n_context for s in pool.steps] == sizes
    assert len(pool) == 0


def test_context_is_ordered_by_generation_step(dims_3x3):
    plan = split_base(dims_3x3, ScanOrder.ZETA_STAR)
    pool = ContextPool(plan, Extent(1, 1, 0))
    for c in plan.sequence[:4]:
        pool.select(c)
        pool.add(_cache(c))
        pool.remove()
    context = pool.select(plan.sequence[4])
    steps = [plan.step_of(n) for n, _ in context]
    assert steps == sorted(steps)


def test_selection_must_follow_the_plan(dims_3x3):
    pool = ContextPool(split_base(dims_3x3), Extent(1, 1, 0))
    with pytest.raises(SequencingError):
        pool.select(PatchCoord(1, 1))
    pool.select(PatchCoord(0, 0))
    pool.add(_cache(PatchCoord(0, 0)))
    with pytest.raises(PoolStateError):
        pool.add(_cache(PatchCoord(0, 0)))
    with pytest.raises(SequencingError):
        pool.add(_cache(PatchCoord(2, 2)))


def test_select_after_evict_is_detected(dims_3x3):
    pool = ContextPool(split_base(dims_3x3), Extent(1, 1, 0))
    for c in (PatchCoord(0, 0), PatchCoord(0, 1)):
        pool.select(c)
        pool.add(_cache(c))
        pool.remove()
    del pool.entries[PatchCoord(0, 1)]
    with pytest.raises(EvictionError):
        pool.select(PatchCoord(0, 2))


def test_remove_is_idempotent_per_step(dims_3x3):
    pool = ContextPool(split_base(dims_3x3), Extent(0, 0, 0))
    pool.select(PatchCoord(0, 0))
    pool.add(_cache(PatchCoord(0, 0)))
    assert pool.remove() == [PatchCoord(0, 0)]
    assert pool.remove() == []
    assert len(pool.steps) == 1


def test_disabled_caches_replicate_the_embedding_slot(dims_3x3):
    pool = ContextPool(split_base(dims_3x3), Extent(1, 1, 0), caches_enabled=False)
    pool.select(PatchCoord(0, 0))
    pool.add(_cache(PatchCoord(0, 0), layers=3, value=5.0))
    pool.remove()
    [(_, cache)] = pool.select(PatchCoord(0, 1))
    np.testing.assert_array_equal(cache.layers[:, 0, 0], [5.0, 5.0, 5.0])


def test_layer_cache_rejects_bad_arrays():
    with pytest.raises(ShapeError):
        LayerCache(coord=PatchCoord(0, 0), layers=np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        LayerCache(coord=PatchCoord(0, 0), layers=np.full((1, 1, 1), np.nan))


def test_box_neighbours_never_look_ahead_in_time():
    plan = split_base(GridDims(h_p=3, w_p=3, f=3))
    around = box_neighbours(PatchCoord(1, 1, 1), plan, Extent(1, 1, 1))
    assert {n.frame for n in around} == {0, 1}
    assert len(around) == 9 + 8


def _random_plan(rng: Rng):
    d = GridDims(h_p=int(rng.integers(1, 7)), w_p=int(rng.integers(1, 7)), f=int(rng.integers(1, 4)))
    if rng.random() < 0.2:
        rows, cols = int(rng.integers(1, d.h_p + 1)), int(rng.integers(1, d.w_p + 1))
        rect = PatchRect(
            row=int(rng.integers(0, d.h_p - rows + 1)), col=int(rng.integers(0, d.w_p - cols + 1)), rows=rows, cols=cols,
        )
        return split_outpaint(d, rect)
    return split_base(d, list(ScanOrder)[int(rng.integers(0, 4))])


def test_eviction_fuzz():
    rng = Rng(7, "test/eviction_fuzz")
    for _ in range(1000):
        plan = _random_plan(rng)
        extent = Extent(*(int(v) for v in rng.integers(0, 3, size=3)))
        table = reachable_offsets(ALL_FAMILIES, extent)
        pool, _ = _walk(plan, extent, table)
        assert pool.done
        assert len(pool) == 0


def _brute_peak(plan, extent: Extent) -> int:
    e_w, e_h, e_f = extent

    def near(p, q):
        return abs(p.row - q.row) <= e_h and abs(p.col - q.col) <= e_w and 0 <= q.frame - p.frame <= e_f

    seq = plan.sequence
    return max(1 + sum(1 for p in seq[:s] if any(near(p, q) for q in seq[s:])) for s in range(len(seq)))


def test_peak_pool_matches_lifetime_simulation():
    rng = Rng(11, "test/peak")
    for _ in range(200):
        d = GridDims(h_p=int(rng.integers(1, 5)), w_p=int(rng.integers(1, 5)), f=int(rng.integers(1, 3)))
        plan = split_base(d, list(ScanOrder)[int(rng.integers(0, 4))])
        extent = Extent(*(int(v) for v in rng.integers(0, 3, size=3)))
        pool, _ = _walk(plan, extent)
        assert pool.peak_size == _brute_peak(plan, extent)


def test_attended_tokens_do_not_grow_with_canvas_length():
    peaks = {}
    for length in (4, 8, 16, 32):
        rows = bench_pool(split_base(GridDims(h_p=4, w_p=length)), Extent(2, 2, 0))
        peaks[length] = max(r.attended_tokens for r in rows)
    assert peaks[8] == peaks[16] == peaks[32] == 12 * 16
    assert peaks[4] <= peaks[8]
