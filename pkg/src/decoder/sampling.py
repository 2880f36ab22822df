import numpy as np

from src.numerics.ops import softmax
from src.numerics.rng import Rng
from src.state.pipeline_state import SamplerConfig

GREEDY = SamplerConfig()


def sample_token(logits: np.ndarray, sampler: SamplerConfig = GREEDY, rng: Rng | None = None) -> int:
    """Greedy picks the lowest id among maxima; top-k renormalizes over the k best logits / T."""
    logits = np.asarray(logits, dtype=np.float64)
    if sampler.kind == "greedy" or sampler.k == 1:
        return int(np.argmax(logits))
    top = np.argsort(-logits, kind="stable")[:sampler.k]
    probs = softmax(logits[top] / sampler.temperature)
    rng = rng or Rng(0, "sample_token")
    return int(top[rng.choice(len(top), p=probs)])
