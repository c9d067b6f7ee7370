"""Reproducible random number streams.

A :class:`RngStream` names a point in a tree of independent generators.
Identical (seed, stream_id, path) always yields identical draws; distinct
paths give statistically independent streams (numpy SeedSequence spawning).
Streams are cheap immutable values; call :meth:`RngStream.generator` to get a
stateful ``numpy.random.Generator`` to consume.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = ["RngStream", "as_generator"]

_MASK64 = (1 << 64) - 1


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    if isinstance(tag, str):
        h = hashlib.blake2s(tag.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(h, "little")
    raise TypeError(f"stream tags must be int or str, got {type(tag)!r}")


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    Parameters
    ----------
    seed : int
        64-bit root seed shared by the whole experiment.
    stream_id : int
        Top-level stream index; distinct ids are independent.
    path : tuple of int
        Derivation path below (seed, stream_id), built with :meth:`child`.
    """

    seed: int
    stream_id: int = 0
    path: tuple = field(default_factory=tuple)

    def child(self, *tags) -> "RngStream":
        """Derive an independent sub-stream named by ``tags`` (ints or strings)."""
        extra = tuple(_tag_to_int(t) for t in tags)
        return RngStream(self.seed, self.stream_id, self.path + extra)

    def generator(self) -> np.random.Generator:
        """Fresh stateful generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & _MASK64,
            spawn_key=(int(self.stream_id) & _MASK64,) + self.path,
        )
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream or a Generator and return a Generator.

    Streams yield a fresh generator; generators pass through (stateful), so a
    caller that needs one sequential layout converts once and threads it.
    """
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng)!r}")
