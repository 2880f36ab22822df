import hashlib

import numpy as np


class Rng:
    """Named, seedable counter-based generator.

    Each stream name maps to its own Philox key, so sub-streams (``child``)
    never depend on how much another stream has been consumed.
    """

    def __init__(self, seed: int, stream: str = "root"):
        self.seed = int(seed)
        self.stream = stream
        digest = hashlib.blake2b(f"{self.seed}:{stream}".encode(), digest_size=16).digest()
        self.generator = np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))

    def child(self, name: str) -> "Rng":
        return Rng(self.seed, f"{self.stream}/{name}")

    def integers(self, low: int, high: int | None = None, size=None):
        return self.generator.integers(low, high, size=size)

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, scale: float, size) -> np.ndarray:
        return self.generator.normal(0.0, scale, size=size)

    def choice(self, options, p=None):
        return self.generator.choice(options, p=p)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)
