"""Product-space linear algebra for block-structured vectors.

A point lives in a direct sum of ``m`` real coordinate blocks with declared
dimensions.  Vectors are stored as one flat float64 array with per-block
views, are immutable after construction, and every operation here is a pure
function, so values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "BlockDims",
    "BlockVector",
    "ActivationMask",
    "WeightedNormSpec",
    "construct",
    "combine",
    "reduce",
    "masked_update",
    "distance",
    "ReduceResult",
]


@dataclass(frozen=True)
class BlockDims:
    """Dimensions of the coordinate blocks of the product space."""

    dims: tuple[int, ...]

    def __init__(self, dims: Sequence[int]):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 1:
            raise ShapeError("need at least one block")
        if any(d < 1 for d in dims):
            raise ShapeError(f"every block dimension must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def total(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Start offset of each block in the flat layout (plus the end)."""
        out = [0]
        for d in self.dims:
            out.append(out[-1] + d)
        return tuple(out)

    def slice(self, i: int) -> slice:
        off = self.offsets
        return slice(off[i], off[i + 1])

    def concat(self, other: "BlockDims") -> "BlockDims":
        return BlockDims(self.dims + other.dims)


class BlockVector:
    """An immutable element of the product space.

    Stored flat; ``block(i)`` returns a read-only view of block ``i``.
    """

    __slots__ = ("dims", "flat")

    def __init__(self, dims: BlockDims, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (dims.total,):
            raise ShapeError(
                f"flat data has shape {flat.shape}, expected ({dims.total},)"
            )
        if not np.all(np.isfinite(flat)):
            raise ShapeError("block entries must be finite")
        flat = flat.copy()
        flat.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "flat", flat)

    def __setattr__(self, name, value):  # pragma: no cover - guard
        raise AttributeError("BlockVector is immutable")

    def block(self, i: int) -> np.ndarray:
        return self.flat[self.dims.slice(i)]

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        return tuple(self.block(i) for i in range(self.dims.m))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockVector):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.flat, other.flat)

    __hash__ = None  # mutable-looking container semantics

    def __repr__(self) -> str:
        inner = ", ".join(np.array2string(b, separator=",") for b in self.blocks)
        return f"BlockVector({inner})"


@dataclass(frozen=True)
class ActivationMask:
    """Nonzero 0/1 activation pattern: which blocks update this iteration."""

    bits: tuple[int, ...]

    def __init__(self, bits: Sequence[int]):
        bits = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in bits):
            raise ShapeError(f"mask bits must be 0 or 1, got {bits}")
        if not any(bits):
            raise ShapeError("mask must activate at least one block")
        object.__setattr__(self, "bits", bits)

    @property
    def m(self) -> int:
        return len(self.bits)

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    def as_string(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class WeightedNormSpec:
    """Per-block activation probabilities defining the weighted norm.

    The squared weighted norm of ``x`` is ``sum_i ||x_i||^2 / weights[i]``,
    which upper-bounds the plain squared norm because weights lie in (0, 1].
    """

    weights: tuple[float, ...]

    def __init__(self, weights: Sequence[float]):
        weights = tuple(float(w) for w in weights)
        if any(not (0.0 < w <= 1.0) for w in weights):
            raise ShapeError(f"weights must lie in (0, 1], got {weights}")
        object.__setattr__(self, "weights", weights)


class ReduceResult(NamedTuple):
    inner: float
    norm_sq_x: float
    weighted_norm_sq_x: float | None


def construct(dims: BlockDims, init: Sequence[Sequence[float]] | None = None) -> BlockVector:
    """Build a block vector from per-block data, or the zero vector."""
    if init is None:
        return BlockVector(dims, np.zeros(dims.total))
    if len(init) != dims.m:
        raise ShapeError(f"expected {dims.m} blocks of data, got {len(init)}")
    parts = []
    for i, data in enumerate(init):
        arr = np.atleast_1d(np.asarray(data, dtype=np.float64))
        if arr.shape != (dims.dims[i],):
            raise ShapeError(
                f"block {i} has shape {arr.shape}, expected ({dims.dims[i]},)"
            )
        parts.append(arr)
    return BlockVector(dims, np.concatenate(parts))


def _check_same_dims(x: BlockVector, y: BlockVector) -> None:
    if x.dims != y.dims:
        raise ShapeError(f"block dims differ: {x.dims.dims} vs {y.dims.dims}")


def combine(a: float, x: BlockVector, b: float, y: BlockVector) -> BlockVector:
    """Blockwise linear combination ``a*x + b*y``."""
    _check_same_dims(x, y)
    return BlockVector(x.dims, a * x.flat + b * y.flat)


def reduce(
    x: BlockVector,
    y: BlockVector,
    weights: WeightedNormSpec | None = None,
) -> ReduceResult:
    """Inner product, squared norm of ``x``, and its weighted squared norm.

    ``inner = sum_i <x_i, y_i>`` and ``norm_sq_x = ||x||^2``.  When weights
    are given, ``weighted_norm_sq_x = sum_i ||x_i||^2 / weights[i]``.
    """
    _check_same_dims(x, y)
    inner = float(x.flat @ y.flat)
    norm_sq = float(x.flat @ x.flat)
    weighted = None
    if weights is not None:
        if len(weights.weights) != x.dims.m:
            raise ShapeError(
                f"got {len(weights.weights)} weights for {x.dims.m} blocks"
            )
        weighted = 0.0
        for i, w in enumerate(weights.weights):
            bi = x.block(i)
            weighted += float(bi @ bi) / w
    return ReduceResult(inner, norm_sq, weighted)


def masked_update(
    x: BlockVector,
    mask: ActivationMask,
    relax: float,
    target: BlockVector,
) -> BlockVector:
    """Relaxed update of the active blocks toward ``target``.

    Active block ``i`` becomes ``x_i + relax*(target_i - x_i)``; inactive
    blocks are bit-identical copies of ``x_i``.  With ``relax == 1`` active
    blocks are exact copies of the target.
    """
    _check_same_dims(x, target)
    if mask.m != x.dims.m:
        raise ShapeError(f"mask has {mask.m} bits for {x.dims.m} blocks")
    out = x.flat.copy()
    for i in mask.active:
        sl = x.dims.slice(i)
        if relax == 1.0:
            out[sl] = target.flat[sl]
        else:
            out[sl] = x.flat[sl] + relax * (target.flat[sl] - x.flat[sl])
    return BlockVector(x.dims, out)


def distance(x: BlockVector, y: BlockVector) -> float:
    """Euclidean distance ``||x - y||`` on the product space."""
    _check_same_dims(x, y)
    return float(np.linalg.norm(x.flat - y.flat))
