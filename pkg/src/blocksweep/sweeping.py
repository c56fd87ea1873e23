"""Random activation of coordinate blocks and summable stochastic errors.

Masks are drawn from a fixed law on the nonzero 0/1 patterns with strictly
positive per-block activation probabilities.  All randomness is keyed only by
``(seed, iteration, stream)``, never by the iterate, so the draws at
different iterations are identically distributed and independent of the
iterate history by construction.  Error models produce vectors whose root
mean squared norms form a convergent geometric series.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .blockspace import ActivationMask, BlockDims, BlockVector
from .errors import CapacityError, InvalidRuleError

__all__ = [
    "SweepingRule",
    "single_block",
    "independent_bernoulli",
    "fixed_subset_size",
    "MaskLaw",
    "sample_mask",
    "mask_law",
    "ErrorModel",
    "sample_error",
    "error_norm_series",
]

_MASK_STREAM = 0x6D61736B  # "mask"
_ERROR_STREAM = 0x65727273  # "errs"

_ENUMERATION_LIMIT = 20


@dataclass(frozen=True)
class SweepingRule:
    """A probability law on the nonzero activation patterns of ``m`` blocks.

    Schemes:

    * ``single_block``: exactly one block, block ``i`` with probability
      proportional to ``weights[i]``.
    * ``independent_bernoulli``: bit ``i`` is Bernoulli(``probabilities[i]``),
      the all-zero pattern is rejected and redrawn.
    * ``fixed_subset_size``: a uniformly random subset of ``size`` blocks.

    Every block must end up with a strictly positive activation probability.
    """

    scheme: str
    m: int
    weights: tuple[float, ...] | None = None        # single_block
    probabilities: tuple[float, ...] | None = None  # independent_bernoulli
    size: int | None = None                         # fixed_subset_size

    def __post_init__(self):
        if self.m < 1:
            raise InvalidRuleError("rule needs at least one block")
        if self.scheme == "single_block":
            w = self.weights
            if w is None or len(w) != self.m:
                raise InvalidRuleError("single_block needs one weight per block")
            if any(wi <= 0 for wi in w):
                raise InvalidRuleError(
                    "single_block weights must be > 0 so that every marginal "
                    "activation probability is > 0"
                )
        elif self.scheme == "independent_bernoulli":
            q = self.probabilities
            if q is None or len(q) != self.m:
                raise InvalidRuleError(
                    "independent_bernoulli needs one probability per block"
                )
            if any(not (0.0 < qi <= 1.0) for qi in q):
                raise InvalidRuleError(
                    "independent_bernoulli probabilities must lie in (0, 1]; "
                    "a zero entry would give that block a zero marginal"
                )
        elif self.scheme == "fixed_subset_size":
            s = self.size
            if s is None or not (1 <= s <= self.m):
                raise InvalidRuleError(
                    f"fixed_subset_size needs 1 <= size <= m, got {s}"
                )
        else:
            raise InvalidRuleError(f"unknown sweeping scheme {self.scheme!r}")


def single_block(m: int, weights: Sequence[float] | None = None) -> SweepingRule:
    w = tuple(float(v) for v in (weights if weights is not None else [1.0] * m))
    return SweepingRule("single_block", m, weights=w)


def independent_bernoulli(probabilities: Sequence[float]) -> SweepingRule:
    q = tuple(float(v) for v in probabilities)
    return SweepingRule("independent_bernoulli", len(q), probabilities=q)


def fixed_subset_size(m: int, size: int) -> SweepingRule:
    return SweepingRule("fixed_subset_size", m, size=int(size))


def _rng(seed: int, iteration: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(iteration), stream])
    )


def sample_mask(rule: SweepingRule, iteration: int, seed: int) -> ActivationMask:
    """Draw the activation mask for one iteration.

    Deterministic given ``(rule, iteration, seed)`` and independent of
    anything else; the law is the same for every iteration.
    """
    rng = _rng(seed, iteration, _MASK_STREAM)
    m = rule.m
    if rule.scheme == "single_block":
        w = np.asarray(rule.weights)
        i = int(rng.choice(m, p=w / w.sum()))
        bits = [0] * m
        bits[i] = 1
        return ActivationMask(bits)
    if rule.scheme == "independent_bernoulli":
        q = np.asarray(rule.probabilities)
        while True:
            bits = rng.random(m) < q
            if bits.any():
                return ActivationMask(bits.astype(int))
    # fixed_subset_size
    chosen = rng.choice(m, size=rule.size, replace=False)
    bits = [0] * m
    for i in chosen:
        bits[int(i)] = 1
    return ActivationMask(bits)


class MaskLaw(NamedTuple):
    support: tuple[tuple[ActivationMask, float], ...]
    marginals: tuple[float, ...]


def mask_law(rule: SweepingRule) -> MaskLaw:
    """Exact law of the rule: support probabilities and block marginals.

    Enumerates the nonzero patterns, so this is gated at ``m <= 20``.
    Bernoulli probabilities are renormalized by the rejection of the all-zero
    pattern.
    """
    m = rule.m
    if m > _ENUMERATION_LIMIT:
        raise CapacityError(
            f"mask law enumeration supports m <= {_ENUMERATION_LIMIT}, got {m}"
        )
    support: list[tuple[ActivationMask, float]] = []
    if rule.scheme == "single_block":
        w = np.asarray(rule.weights)
        probs = w / w.sum()
        for i in range(m):
            bits = [0] * m
            bits[i] = 1
            support.append((ActivationMask(bits), float(probs[i])))
    elif rule.scheme == "independent_bernoulli":
        q = rule.probabilities
        keep = 1.0 - math.prod(1.0 - qi for qi in q)
        for bits in itertools.product((0, 1), repeat=m):
            if not any(bits):
                continue
            p = math.prod(qi if b else 1.0 - qi for qi, b in zip(q, bits))
            if p > 0.0:
                support.append((ActivationMask(bits), p / keep))
    else:  # fixed_subset_size
        count = math.comb(m, rule.size)
        for subset in itertools.combinations(range(m), rule.size):
            bits = [0] * m
            for i in subset:
                bits[i] = 1
            support.append((ActivationMask(bits), 1.0 / count))
    marginals = [0.0] * m
    for mask, p in support:
        for i in mask.active:
            marginals[i] += p
    return MaskLaw(tuple(support), tuple(marginals))


@dataclass(frozen=True)
class ErrorModel:
    """Additive perturbation with geometrically decaying magnitude.

    * ``none``: always the zero vector.
    * ``deterministic_decay``: a fixed unit direction scaled by
      ``scale * decay**n``.
    * ``gaussian_decay``: i.i.d. normal entries with standard deviation
      ``scale * decay**n``.

    ``decay`` must satisfy ``0 <= decay < 1`` so the root mean squared norms
    are summable over the iterations.
    """

    kind: str = "none"
    scale: float = 0.0
    decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "deterministic_decay", "gaussian_decay"):
            raise InvalidRuleError(f"unknown error model kind {self.kind!r}")
        if self.kind != "none":
            if self.scale < 0:
                raise InvalidRuleError("error scale must be >= 0")
            if not (0.0 <= self.decay < 1.0):
                raise InvalidRuleError(
                    "error decay must lie in [0, 1); otherwise the root mean "
                    "squared norms are not summable"
                )


def sample_error(
    model: ErrorModel,
    dims: BlockDims,
    iteration: int,
    seed: int,
    stream: int = 0,
) -> BlockVector:
    """Draw the error vector for one iteration of one error slot.

    Deterministic given ``(model, dims, iteration, seed, stream)``.  Distinct
    slots use distinct streams so their draws are independent.
    """
    d = dims.total
    if model.kind == "none":
        return BlockVector(dims, np.zeros(d))
    if model.kind == "deterministic_decay":
        direction = np.full(d, 1.0 / math.sqrt(d))
        return BlockVector(dims, (model.scale * model.decay**iteration) * direction)
    rng = _rng(seed, iteration, _ERROR_STREAM + stream)
    sigma = model.scale * model.decay**iteration
    return BlockVector(dims, sigma * rng.standard_normal(d))


def error_norm_series(model: ErrorModel, dims: BlockDims) -> float:
    """Closed form of ``sum_n sqrt(E ||e_n||^2)`` for the model."""
    if model.kind == "none" or model.scale == 0.0:
        return 0.0
    per_step = model.scale
    if model.kind == "gaussian_decay":
        per_step *= math.sqrt(dims.total)
    return per_step / (1.0 - model.decay)
