import numpy as np

from src.errors import ConfigError, RangeError
from src.numerics import ops
from src.numerics.optim import ParamStore
from src.numerics.rng import Rng
from src.numerics.tensor import Tensor
from src.state.model_state import ModelConfig

PAD_ID = 0


class TextEncoder:
    """Caption encoder: token + position embeddings, one bidirectional attention layer, layer norm.

    Trained jointly with the vision decoder; its parameters live in the same
    store under the ``text.`` prefix. Pad ids are dropped, so they never reach
    cross-attention.
    """

    def __init__(self, config: ModelConfig, store: ParamStore, rng: Rng | None = None):
        self.config = config
        self.store = store
        if "text.tok_emb" not in store:
            self._init_params(rng or Rng(config.seed, "init/text"))

    def _init_params(self, rng: Rng) -> None:
        c, d = self.config, self.config.d
        s = self.store
        s.add("text.tok_emb", rng.normal(c.init_scale, (c.text_vocab, d)))
        s.add("text.pos_emb", rng.normal(c.init_scale, (c.text_len, d)))
        s.add("text.ln1.g", np.ones(d))
        s.add("text.ln1.b", np.zeros(d))
        for name in ("wq", "wk", "wv", "wo"):
            s.add(f"text.{name}", rng.normal(c.init_scale, (d, d)))
        s.add("text.lnf.g", np.ones(d))
        s.add("text.lnf.b", np.zeros(d))

    def encode(self, tokens) -> Tensor:
        ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.text_vocab):
            raise RangeError(f"caption ids must lie in [0, {self.config.text_vocab})")
        if ids.size > self.config.text_len:
            raise ConfigError(f"caption of {ids.size} tokens exceeds text_len {self.config.text_len}")
        keep = np.flatnonzero(ids != PAD_ID)
        if keep.size == 0:
            return Tensor(np.zeros((0, self.config.d)))
        p = self.store.params
        x = ops.add(ops.gather_rows(p["text.tok_emb"], ids[keep]), ops.gather_rows(p["text.pos_emb"], keep))
        h = ops.layer_norm(x, p["text.ln1.g"], p["text.ln1.b"])
        visible = np.ones((keep.size, keep.size), dtype=bool)
        a = ops.attention(h @ p["text.wq"], h @ p["text.wk"], h @ p["text.wv"], visible, self.config.heads)
        x = ops.add(x, ops.matmul(a, p["text.wo"]))
        return ops.layer_norm(x, p["text.lnf.g"], p["text.lnf.b"])
