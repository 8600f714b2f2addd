"""Flat parameter vectors with a named, non-overlapping segment layout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, UsageError

__all__ = ["Segment", "ParamVector"]


@dataclass(frozen=True)
class Segment:
    """One layer's slice of the flat vector."""

    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1


class ParamVector:
    """Immutable flat view of all network parameters.

    The buffer is marked read-only on construction; training produces new
    vectors via :meth:`with_data`.  Segment offsets must tile [0, dim)
    exactly, which makes the flat <-> per-layer round trip lossless.
    """

    __slots__ = ("segments", "data", "dim")

    def __init__(self, segments: tuple[Segment, ...], data: np.ndarray):
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 1:
            raise UsageError("ParamVector data must be 1D")
        expected = 0
        for seg in segments:
            if seg.offset != expected:
                raise UsageError(
                    f"segment {seg.name!r} at offset {seg.offset}, expected {expected}"
                )
            expected += seg.size
        if expected != data.size:
            raise UsageError(
                f"segments cover {expected} entries but data has {data.size}"
            )
        if not np.all(np.isfinite(data)):
            raise NumericalError("non-finite parameter values")
        data.setflags(write=False)
        self.segments = tuple(segments)
        self.data = data
        self.dim = data.size

    @classmethod
    def from_arrays(cls, named_arrays: list[tuple[str, np.ndarray]]) -> "ParamVector":
        """Build from (name, array) pairs in layout order."""
        segments = []
        chunks = []
        offset = 0
        for name, arr in named_arrays:
            arr = np.asarray(arr, dtype=np.float64)
            segments.append(Segment(name=name, shape=tuple(arr.shape), offset=offset))
            chunks.append(arr.ravel())
            offset += arr.size
        flat = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(tuple(segments), flat)

    def view(self, name: str) -> np.ndarray:
        """Read-only view of one segment, reshaped to its layer shape."""
        for seg in self.segments:
            if seg.name == name:
                return self.data[seg.offset : seg.offset + seg.size].reshape(seg.shape)
        raise UsageError(f"no segment named {name!r}")

    def views(self) -> dict[str, np.ndarray]:
        return {
            seg.name: self.data[seg.offset : seg.offset + seg.size].reshape(seg.shape)
            for seg in self.segments
        }

    def with_data(self, data: np.ndarray) -> "ParamVector":
        """Same layout, new values."""
        return ParamVector(self.segments, data)

    def __len__(self) -> int:
        return self.dim

    def __repr__(self) -> str:  # pragma: no cover
        return f"ParamVector(dim={self.dim}, segments={len(self.segments)})"
