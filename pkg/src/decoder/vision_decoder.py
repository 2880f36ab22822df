import logging
from typing import Callable, Sequence

import numpy as np

from src.cache.context_pool import LayerCache
from src.decoder.text_encoder import TextEncoder
from src.errors import ConfigError, UsageError
from src.numerics import ops
from src.numerics.gradcheck import Case, register_case
from src.numerics.optim import ParamStore
from src.numerics.rng import Rng
from src.numerics.tensor import Tensor, no_grad
from src.state.grid_state import Extent, PatchCoord
from src.state.model_state import LocalMode, ModelConfig, RpeFeed

logger = logging.getLogger(__name__)

Hook = Callable[[str, dict], None]


class VisionDecoder:
    """The per-patch network.

    Every layer attends from the current patch's tokens to [current patch;
    context caches at the same layer slot], with relative position vectors
    (one per patch) fed into the keys or into the scores, then optionally
    cross-attends to the caption and applies a GELU feed-forward block.
    """

    def __init__(self, config: ModelConfig, store: ParamStore | None = None):
        self.config = config
        self.table = config.rpe_table
        fresh = store is None
        self.store = store if store is not None else ParamStore()
        if fresh:
            self._init_params(Rng(config.seed, "init/vision"))
        self.text_encoder = TextEncoder(config, self.store) if config.cross_attention else None
        self.hooks: list[Hook] = []

    def _init_params(self, rng: Rng) -> None:
        c, d = self.config, self.config.d
        s = self.store
        s.add("tok_emb", rng.normal(c.init_scale, (c.embedding_rows, d)))
        s.add("pos_emb", rng.normal(c.init_scale, (c.M, d)))
        s.add("rpe", rng.normal(c.init_scale, (len(self.table), d)))
        s.add("rpe_post", rng.normal(c.init_scale, (d, c.heads)))
        for l in range(c.layers):
            s.add(f"layers.{l}.ln1.g", np.ones(d))
            s.add(f"layers.{l}.ln1.b", np.zeros(d))
            for name in ("wq", "wk", "wv", "wo"):
                s.add(f"layers.{l}.{name}", rng.normal(c.init_scale, (d, d)))
            if c.cross_attention:
                s.add(f"layers.{l}.lnc.g", np.ones(d))
                s.add(f"layers.{l}.lnc.b", np.zeros(d))
                for name in ("cq", "ck", "cv", "co"):
                    s.add(f"layers.{l}.{name}", rng.normal(c.init_scale, (d, d)))
            s.add(f"layers.{l}.ln2.g", np.ones(d))
            s.add(f"layers.{l}.ln2.b", np.zeros(d))
            s.add(f"layers.{l}.ff1", rng.normal(c.init_scale, (d, c.ffn_mult * d)))
            s.add(f"layers.{l}.ff1_b", np.zeros(c.ffn_mult * d))
            s.add(f"layers.{l}.ff2", rng.normal(c.init_scale, (c.ffn_mult * d, d)))
            s.add(f"layers.{l}.ff2_b", np.zeros(d))
        s.add("lnf.g", np.ones(d))
        s.add("lnf.b", np.zeros(d))
        s.add("head", rng.normal(c.init_scale, (d, c.vocab)))
        s.add("head_b", np.zeros(c.vocab))

    def _emit(self, event: str, **info) -> None:
        for hook in self.hooks:
            hook(event, info)

    def encode_text(self, text_ids: Sequence[int] | None) -> Tensor | None:
        """Caption states for cross-attention; ``None`` for models without it."""
        if self.text_encoder is None:
            if text_ids:
                raise UsageError("text given to a model without cross-attention")
            return None
        return self.text_encoder.encode(list(text_ids or ()))

    def patch_forward(
        self,
        tokens_in: np.ndarray,
        context: Sequence[LayerCache],
        e_ids: Sequence[int],
        text_states: Tensor | None = None,
        causal: bool = True,
        kind: str = "decode",
        coord: PatchCoord = PatchCoord(0, 0),
    ) -> tuple[Tensor, LayerCache]:
        """Logits for the M local positions plus the patch's layer cache.

        ``tokens_in`` holds M embedding ids (visual ids, BOP or MASK);
        ``e_ids`` are the relative position ids for [self; context].
        """
        c = self.config
        p = self.store.params
        tokens_in = np.asarray(tokens_in, dtype=np.int64)
        if tokens_in.shape != (c.M,):
            raise ConfigError(f"patch input must hold {c.M} ids, got shape {tokens_in.shape}")
        if len(e_ids) != 1 + len(context):
            raise ConfigError(f"{len(e_ids)} position ids for {len(context)} context patches")
        for cache in context:
            if cache.layers.shape != (c.layers, c.M, c.d):
                raise ConfigError(f"context cache shape {cache.layers.shape} != {(c.layers, c.M, c.d)}")
        if c.cross_attention and text_states is None:
            raise UsageError("cross-attention needs encoded text; pass an empty caption for none")
        if not c.cross_attention and text_states is not None:
            raise UsageError("text given to a model without cross-attention")
        self._emit("forward", kind=kind, context=len(context))

        n_keys = c.M * (1 + len(context))
        x = ops.add(ops.gather_rows(p["tok_emb"], tokens_in), p["pos_emb"])
        slots = [x.data]
        rpe_keys = ops.gather_rows(p["rpe"], np.repeat(np.asarray(e_ids, dtype=np.int64), c.M))
        mask = np.ones((c.M, n_keys), dtype=bool)
        if causal:
            mask[:, :c.M] = np.tril(np.ones((c.M, c.M), dtype=bool))

        for l in range(c.layers):
            slot = l if c.caches_enabled else 0
            h = ops.layer_norm(x, p[f"layers.{l}.ln1.g"], p[f"layers.{l}.ln1.b"])
            kv_in = h
            if context:
                self._emit("context_slot", layer=l, slot=slot)
                ctx = Tensor(np.concatenate([cache.slot(slot) for cache in context], axis=0), copy=False)
                ctx = ops.layer_norm(ctx, p[f"layers.{l}.ln1.g"], p[f"layers.{l}.ln1.b"])
                kv_in = ops.concat_rows([h, ctx])
            q = ops.matmul(h, p[f"layers.{l}.wq"])
            k = ops.matmul(kv_in, p[f"layers.{l}.wk"])
            v = ops.matmul(kv_in, p[f"layers.{l}.wv"])
            bias = None
            if c.rpe_every_layer or l == 0:
                if c.rpe_feed is RpeFeed.PRE:
                    self._emit("rpe_pre", layer=l)
                    k = ops.add(k, rpe_keys)
                else:
                    self._emit("rpe_post", layer=l)
                    bias = ops.matmul(rpe_keys, p["rpe_post"])
            a = ops.attention(q, k, v, mask, c.heads, bias=bias)
            x = ops.add(x, ops.matmul(a, p[f"layers.{l}.wo"]))

            if text_states is not None and text_states.shape[0]:
                hc = ops.layer_norm(x, p[f"layers.{l}.lnc.g"], p[f"layers.{l}.lnc.b"])
                visible = np.ones((c.M, text_states.shape[0]), dtype=bool)
                ca = ops.attention(
                    ops.matmul(hc, p[f"layers.{l}.cq"]),
                    ops.matmul(text_states, p[f"layers.{l}.ck"]),
                    ops.matmul(text_states, p[f"layers.{l}.cv"]),
                    visible,
                    c.heads,
                )
                x = ops.add(x, ops.matmul(ca, p[f"layers.{l}.co"]))

            h2 = ops.layer_norm(x, p[f"layers.{l}.ln2.g"], p[f"layers.{l}.ln2.b"])
            f = ops.gelu(ops.add(ops.matmul(h2, p[f"layers.{l}.ff1"]), p[f"layers.{l}.ff1_b"]))
            x = ops.add(x, ops.add(ops.matmul(f, p[f"layers.{l}.ff2"]), p[f"layers.{l}.ff2_b"]))
            if l < c.layers - 1:
                slots.append(x.data)

        out = ops.layer_norm(x, p["lnf.g"], p["lnf.b"])
        logits = ops.add(ops.matmul(out, p["head"]), p["head_b"])
        cache = LayerCache(coord=coord, layers=np.stack(slots))
        return logits, cache

    def shifted(self, tokens: np.ndarray) -> np.ndarray:
        """Teacher-forced AR input: BOP followed by all but the last token."""
        return np.concatenate([[self.config.bop_id], np.asarray(tokens, dtype=np.int64)[:-1]])

    def commit(
        self, coord: PatchCoord, tokens: np.ndarray, context: Sequence[LayerCache], e_ids: Sequence[int],
        text_states: Tensor | None,
    ) -> LayerCache:
        """Cache of a finished patch as later patches see it."""
        with no_grad():
            if self.config.local_mode is LocalMode.AR:
                _, cache = self.patch_forward(
                    self.shifted(tokens), context, e_ids, text_states, causal=True, kind="commit", coord=coord
                )
            else:
                _, cache = self.patch_forward(tokens, context, e_ids, text_states, causal=False, kind="commit", coord=coord)
        return cache

    def patch_loss(
        self,
        coord: PatchCoord,
        tokens: np.ndarray,
        context: Sequence[LayerCache],
        e_ids: Sequence[int],
        text_states: Tensor | None = None,
        rng: Rng | None = None,
    ) -> tuple[Tensor, LayerCache]:
        """Training loss of one patch under the configured local mode, plus its cache."""
        c = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        if c.local_mode is LocalMode.AR:
            logits, cache = self.patch_forward(
                self.shifted(tokens), context, e_ids, text_states, causal=True, kind="train", coord=coord
            )
            return ops.softmax_ce(logits, tokens), cache
        if c.local_mode is LocalMode.NAR:
            masked = np.arange(c.M)
        else:
            rng = rng or Rng(c.seed, "pnar_mask")
            k = int(rng.integers(1, c.M + 1))
            masked = np.sort(rng.permutation(c.M)[:k])
        inputs = tokens.copy()
        inputs[masked] = c.mask_id
        logits, _ = self.patch_forward(inputs, context, e_ids, text_states, causal=False, kind="train")
        loss = ops.softmax_ce(logits, tokens, positions=masked)
        return loss, self.commit(coord, tokens, context, e_ids, text_states)


@register_case("patch_loss")
def _patch_loss_case(rng: Rng) -> Case:
    config = ModelConfig(
        layers=2, d=8, heads=2, m_side=2, vocab=6, extent=Extent(1, 1, 0),
        seed=int(rng.integers(0, 2**31)), init_scale=0.3,
    )
    decoder = VisionDecoder(config)
    ctx_rng = rng.child("context")
    context = [
        LayerCache(coord=PatchCoord(0, 0), layers=ctx_rng.normal(1.0, (config.layers, config.M, config.d))),
        LayerCache(coord=PatchCoord(0, 1), layers=ctx_rng.normal(1.0, (config.layers, config.M, config.d))),
    ]
    e_ids = [0, *rng.integers(1, len(decoder.table), size=2).tolist()]
    tokens = rng.integers(0, config.vocab, size=config.M)
    names = sorted(decoder.store.params)
    theta = decoder.store[names[int(rng.integers(0, len(names)))]]
    return (lambda t: decoder.patch_loss(PatchCoord(1, 1), tokens, context, e_ids)[0]), theta
