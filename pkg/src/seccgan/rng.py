"""Named, independently seeded random streams on top of numpy's PCG64.

Every source of randomness in a run (weight init, real-batch sampling, noise,
augmentation, ...) owns a stream addressed by name. Streams derived from the
same master seed are statistically independent and individually restorable,
so e.g. disabling the noise stream in one method leaves the real-sampling
stream of another method bit-for-bit aligned.
"""

import hashlib

import numpy as np

# canonical stream names used by the trainer
INIT = "init"
REAL = "real-sampling"
NOISE = "noise"
AUGMENT = "augmentation"


def _entropy_words(name):
    # stable 128-bit hash of the stream name, as four uint32 words
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4)]


class RngStream:
    """One named PCG64 substream of a master seed."""

    def __init__(self, name, master_seed):
        if master_seed < 0:
            raise ValueError(f"master_seed must be >= 0, got {master_seed}")
        self.name = name
        self.master_seed = int(master_seed)
        seq = np.random.SeedSequence([self.master_seed] + _entropy_words(name))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def normal(self, shape, dtype=np.float32):
        return self._gen.standard_normal(shape, dtype=dtype)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high, size=None):
        """Integers in [low, high), like Generator.integers(endpoint=False)."""
        return self._gen.integers(low, high, size=size)

    def choice(self, n, size=None, p=None):
        return self._gen.choice(n, size=size, p=p)

    def permutation(self, n):
        return self._gen.permutation(n)

    def get_state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state


class StreamSet:
    """Lazily created family of named streams sharing one master seed."""

    def __init__(self, master_seed):
        self.master_seed = int(master_seed)
        self._streams = {}

    def __getitem__(self, name):
        if name not in self._streams:
            self._streams[name] = RngStream(name, self.master_seed)
        return self._streams[name]

    def capture(self):
        """Snapshot {name: bit-generator state} for every stream touched so far."""
        return {name: s.get_state() for name, s in self._streams.items()}

    def restore(self, captured):
        for name, state in captured.items():
            self[name].set_state(state)
