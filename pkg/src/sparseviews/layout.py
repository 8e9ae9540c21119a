"""Partition of a feature vector into modality blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class ModalityLayout:
    """Ordered ``(name, length)`` pairs splitting a ``d``-dimensional vector.

    >>> lay = ModalityLayout.from_pairs([("color", 64), ("lbp", 59)])
    >>> lay.d, lay.m
    (123, 2)
    """

    entries: tuple[tuple[str, int], ...]
    _offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple((str(name), int(length)) for name, length in self.entries)
        if not entries:
            raise InvalidInputError("layout needs at least one modality")
        names = [name for name, _ in entries]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"duplicate modality names in {names}")
        for name, length in entries:
            if length <= 0:
                raise InvalidInputError(f"modality {name!r} has length {length}")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(
            self, "_offsets", tuple(np.cumsum([0] + [n for _, n in entries]).tolist())
        )

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, int]]) -> "ModalityLayout":
        return cls(tuple(pairs))

    @classmethod
    def uniform(cls, m: int, block: int, prefix: str = "block") -> "ModalityLayout":
        """``m`` blocks of equal length named ``prefix0``, ``prefix1``, ..."""
        return cls(tuple((f"{prefix}{i}", block) for i in range(m)))

    @property
    def d(self) -> int:
        return self._offsets[-1]

    @property
    def m(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    @property
    def lengths(self) -> list[int]:
        return [n for _, n in self.entries]

    def slices(self) -> list[slice]:
        o = self._offsets
        return [slice(o[i], o[i + 1]) for i in range(self.m)]

    def block_index(self) -> np.ndarray:
        """Length-``d`` array mapping each coordinate to its block number."""
        return np.repeat(np.arange(self.m), self.lengths)

    def block_norms(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d,):
            raise InvalidInputError(f"expected vector of length {self.d}, got {v.shape}")
        return np.array([np.linalg.norm(v[s]) for s in self.slices()])

    def to_string(self) -> str:
        return ",".join(f"{name}={n}" for name, n in self.entries)

    @classmethod
    def from_string(cls, text: str) -> "ModalityLayout":
        pairs = []
        for item in text.strip().split(","):
            name, _, n = item.partition("=")
            if not _:
                raise InvalidInputError(f"bad layout entry {item!r}")
            pairs.append((name.strip(), int(n)))
        return cls(tuple(pairs))


@dataclass(frozen=True)
class FeatureVector:
    """A descriptor together with the layout that partitions it."""

    values: np.ndarray
    layout: ModalityLayout

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.layout.d,):
            raise InvalidInputError(
                f"feature vector has shape {values.shape}, layout needs ({self.layout.d},)"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("feature vector contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def block(self, name: str) -> np.ndarray:
        i = self.layout.names.index(name)
        return self.values[self.layout.slices()[i]]


def normalize_blocks(v: np.ndarray, layout: ModalityLayout) -> np.ndarray:
    """Rescale every block of ``v`` to unit l2-norm; all-zero blocks stay zero."""
    out = np.array(v, dtype=float)
    for s in layout.slices():
        norm = np.linalg.norm(out[s])
        if norm > 0:
            out[s] /= norm
    return out

