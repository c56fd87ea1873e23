"""Random-sweeping block-coordinate fixed point drivers.

Every driver advances only the randomly activated blocks at each iteration,
evaluates operators at the full pre-update iterate (synchronous reads), and
emits a complete per-iteration trace.  Runs are deterministic given the
configuration and seed: masks and stochastic errors are drawn from streams
keyed only by ``(seed, iteration, stream)``.

Drivers
-------
``run_single_layer``
    Relaxed iteration of one quasinonexpansive operator family,
    ``x_i <- x_i + eps_i * lambda_n * (T_i(x) + a_i - x_i)``.
``run_double_layer``
    Two averaged layers, ``y = R_n x + b_n`` followed by the masked relaxed
    update toward ``T_n y + a_n``.
``run_dr``
    Splitting for ``0 in A_i x_i + B_i(x)`` from the resolvent of the coupled
    operator and per-block resolvents of the ``A_i``.
``run_pd_dr``
    The same splitting run on the paired space of primal and image blocks,
    coupling them through the projector onto ``{(x, y): Lx = y}``.
``run_fb``, ``run_fb_min``
    Forward-backward steps with a cocoercive forward operator, and its
    minimization form built from proximal terms plus smooth coupled terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .blockspace import (
    ActivationMask,
    BlockDims,
    BlockVector,
    combine,
    construct,
    distance,
    masked_update,
)
from .errors import ParameterError, ShapeError
from .operators import (
    BlockOperatorFamily,
    CocoerciveOperator,
    GraphSubspace,
    LinearBlockOperator,
    MonotoneOperator,
    ProxFunction,
    SmoothTerm,
    Subdifferential,
    coupling_forward_operator,
    forward_step_family,
    graph_projection,
    resolvent_family,
)
from .sweeping import ErrorModel, SweepingRule, sample_error, sample_mask

__all__ = [
    "Schedule",
    "as_schedule",
    "SolverConfig",
    "TraceRecord",
    "IterateTrace",
    "PrimalDualSolution",
    "KmProblem",
    "FbProblem",
    "DrProblem",
    "PdDrProblem",
    "CoupledMinProblem",
    "run_single_layer",
    "run_double_layer",
    "run_dr",
    "assemble_pd_problem",
    "run_pd_dr",
    "run_fb",
    "run_fb_min",
]

_SLOT_STREAMS = {"a": 1, "b": 2, "c": 3, "d": 4}


# ---------------------------------------------------------------------------
# schedules and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """A constant value or a two-point linear ramp over the iterations.

    With ``end`` and ``ramp`` set, the value moves linearly from ``start`` at
    iteration 0 to ``end`` at iteration ``ramp`` and stays there.
    """

    start: float
    end: float | None = None
    ramp: int | None = None

    def __post_init__(self):
        if (self.end is None) != (self.ramp is None):
            raise ParameterError("a ramp schedule needs both end and ramp")
        if self.ramp is not None and self.ramp < 1:
            raise ParameterError("ramp length must be >= 1")

    def at(self, n: int) -> float:
        if self.end is None:
            return self.start
        t = min(n, self.ramp) / self.ramp
        return self.start + (self.end - self.start) * t

    def bounds(self) -> tuple[float, float]:
        if self.end is None:
            return (self.start, self.start)
        return (min(self.start, self.end), max(self.start, self.end))

    def scaled(self, factor: float) -> "Schedule":
        if self.end is None:
            return Schedule(self.start * factor)
        return Schedule(self.start * factor, self.end * factor, self.ramp)


def as_schedule(value) -> Schedule:
    if isinstance(value, Schedule):
        return value
    return Schedule(float(value))


def _bounds_of(value) -> tuple[float, float]:
    if hasattr(value, "bounds"):
        return value.bounds()
    v = float(value)
    return (v, v)


@dataclass(frozen=True)
class SolverConfig:
    """Shared driver configuration.

    ``relaxation`` is the masked-update relaxation (each driver enforces its
    own admissible range), ``dr_relaxation`` the splitting relaxation in
    ]0, 2[, ``stepsize`` the forward stepsize sequence, and ``gamma`` the
    fixed resolvent parameter forwarded to the splitting drivers by the
    orchestration layer.  ``errors`` maps slot names ("a", "b", "c", "d") to
    error models; missing slots are error-free.
    """

    sweeping: SweepingRule
    relaxation: Schedule = Schedule(0.5)
    dr_relaxation: Schedule = Schedule(1.0)
    stepsize: Schedule | None = None
    gamma: float = 1.0
    max_iterations: int = 100_000
    tolerance: float = 1e-8
    seed: int = 0
    errors: Mapping[str, ErrorModel] = field(default_factory=dict)
    reference: BlockVector | None = None
    snapshot_stride: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if self.tolerance < 0:
            raise ParameterError("tolerance must be >= 0")
        if self.snapshot_stride < 1:
            raise ParameterError("snapshot_stride must be >= 1")
        object.__setattr__(self, "errors", dict(self.errors))
        for slot in self.errors:
            if slot not in _SLOT_STREAMS:
                raise ParameterError(f"unknown error slot {slot!r}")
        if self.gamma <= 0:
            raise ParameterError("gamma must be > 0")


@dataclass(frozen=True)
class TraceRecord:
    """One iteration of a run.

    ``residual`` is measured at the pre-update iterate; ``mask`` and
    ``relaxation`` are absent on the final record of a run that stopped at
    tolerance (no update was applied).
    """

    n: int
    residual: float
    mask: tuple[int, ...] | None
    relaxation: float | None
    stepsize: float | None
    distance_to_reference: float | None
    objective: float | None
    snapshot: BlockVector | None


@dataclass(frozen=True)
class IterateTrace:
    records: tuple[TraceRecord, ...]
    final: BlockVector
    termination: str  # "tolerance" | "max_iterations"

    @property
    def iterations(self) -> int:
        """Number of masked updates actually applied."""
        return sum(1 for r in self.records if r.mask is not None)

    @property
    def final_residual(self) -> float:
        return self.records[-1].residual if self.records else 0.0

    def snapshots(self) -> list[BlockVector]:
        """Stored iterates in order, ending with the final iterate."""
        xs = [r.snapshot for r in self.records if r.snapshot is not None]
        xs.append(self.final)
        return xs


@dataclass(frozen=True)
class PrimalDualSolution:
    primal: BlockVector
    dual: BlockVector


# ---------------------------------------------------------------------------
# problem containers (consumed by the diagnostics layer and the CLI)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KmProblem:
    """Fixed point problem for one operator family, with a starting point."""

    family: BlockOperatorFamily
    x0: BlockVector


@dataclass(frozen=True)
class FbProblem:
    """Blockwise inclusion ``0 in A_i x_i + B_i(x)`` with cocoercive ``B``."""

    A: tuple[MonotoneOperator, ...]
    B: CocoerciveOperator | None
    dims: BlockDims


@dataclass(frozen=True)
class DrProblem:
    """Inclusion ``0 in A_i x_i + B_i(x)`` given the coupled resolvent.

    ``B_forward`` optionally provides a single-valued evaluation of the
    coupled operator for residual diagnostics.
    """

    A: tuple[MonotoneOperator, ...]
    JB: Callable[[BlockVector], BlockVector]
    gamma: float
    dims: BlockDims
    B_forward: CocoerciveOperator | None = None


@dataclass(frozen=True)
class PdDrProblem:
    """Primal-dual splitting data over the paired space.

    Primal blocks carry the ``A_i``, image blocks the ``B_k``, and the
    linear grid couples them through its graph subspace.
    """

    h_ops: tuple[MonotoneOperator, ...]
    g_ops: tuple[MonotoneOperator, ...]
    L: LinearBlockOperator
    V: GraphSubspace

    @property
    def h_dims(self) -> BlockDims:
        return self.L.source_dims

    @property
    def g_dims(self) -> BlockDims:
        return self.L.target_dims

    @property
    def k_dims(self) -> BlockDims:
        return self.h_dims.concat(self.g_dims)

    @property
    def k_ops(self) -> tuple[MonotoneOperator, ...]:
        return self.h_ops + self.g_ops


@dataclass(frozen=True)
class CoupledMinProblem:
    """Minimize ``sum_i f_i(x_i) + sum_k g_k(sum_i L_ki x_i)``."""

    fs: tuple[ProxFunction, ...]
    smooth: tuple[SmoothTerm, ...]
    L: LinearBlockOperator

    @property
    def dims(self) -> BlockDims:
        return self.L.source_dims

    def forward(self) -> CocoerciveOperator:
        return coupling_forward_operator(self.L, self.smooth)

    def objective(self, x: BlockVector) -> float | None:
        if any(g.value is None for g in self.smooth):
            return None
        total = sum(f.value(x.block(i)) for i, f in enumerate(self.fs))
        y = self.L.apply(x)
        total += sum(g.value(y.block(k)) for k, g in enumerate(self.smooth))
        return float(total)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ParameterError(message)


def _check_slots(cfg: SolverConfig, allowed: tuple[str, ...],
                 driver: str) -> None:
    extra = sorted(set(cfg.errors) - set(allowed))
    if extra:
        raise ParameterError(
            f"{driver} supports error slots {list(allowed)}, got {extra}"
        )


def _check_rule(rule: SweepingRule, m: int, context: str) -> None:
    if rule.m != m:
        raise ShapeError(
            f"{context}: sweeping rule covers {rule.m} blocks, iteration "
            f"has {m}"
        )


def _error_sampler(
    cfg: SolverConfig, slot: str, dims: BlockDims
) -> Callable[[int], BlockVector] | None:
    model = cfg.errors.get(slot)
    if model is None or model.kind == "none":
        return None
    stream = _SLOT_STREAMS[slot]
    seed = cfg.seed
    return lambda n: sample_error(model, dims, n, seed, stream=stream)


def _paired_error_sampler(
    cfg: SolverConfig,
    slot_first: str,
    slot_second: str,
    first_dims: BlockDims,
    second_dims: BlockDims,
    paired_dims: BlockDims,
) -> Callable[[int], BlockVector] | None:
    """Concatenate two slot samplers over a paired space."""
    first = _error_sampler(cfg, slot_first, first_dims)
    second = _error_sampler(cfg, slot_second, second_dims)
    if first is None and second is None:
        return None

    def sample(n: int) -> BlockVector:
        f = first(n).flat if first else np.zeros(first_dims.total)
        s = second(n).flat if second else np.zeros(second_dims.total)
        return BlockVector(paired_dims, np.concatenate([f, s]))

    return sample


def _distance_to(reference: BlockVector | None) -> Callable[[BlockVector], float] | None:
    if reference is None:
        return None
    return lambda v: distance(v, reference)


def _km_engine(
    target_fn: Callable[[int, BlockVector], BlockVector],
    relaxation: Schedule,
    cfg: SolverConfig,
    x0: BlockVector,
    sampler_a: Callable[[int], BlockVector] | None,
    distance_fn: Callable[[BlockVector], float] | None,
    objective_fn: Callable[[BlockVector], float] | None,
    stepsize: Schedule | None,
) -> IterateTrace:
    records: list[TraceRecord] = []
    x = x0
    termination = "max_iterations"
    for n in range(cfg.max_iterations):
        target = target_fn(n, x)
        residual = distance(target, x)
        dist = distance_fn(x) if distance_fn else None
        obj = objective_fn(x) if objective_fn else None
        g = stepsize.at(n) if stepsize is not None else None
        if residual < cfg.tolerance:
            records.append(
                TraceRecord(n, residual, None, None, g, dist, obj, None)
            )
            termination = "tolerance"
            break
        mask = sample_mask(cfg.sweeping, n, cfg.seed)
        lam = relaxation.at(n)
        cand = target if sampler_a is None else combine(1.0, target, 1.0,
                                                        sampler_a(n))
        snap = x if n % cfg.snapshot_stride == 0 else None
        records.append(
            TraceRecord(n, residual, mask.bits, lam, g, dist, obj, snap)
        )
        x = masked_update(x, mask, lam, cand)
    return IterateTrace(tuple(records), x, termination)


# ---------------------------------------------------------------------------
# single layer
# ---------------------------------------------------------------------------


def run_single_layer(
    T: BlockOperatorFamily,
    cfg: SolverConfig,
    x0: BlockVector,
) -> IterateTrace:
    """Masked relaxed iteration of a quasinonexpansive family.

    Active blocks follow ``x_i <- x_i + lambda_n (T_i(x) + a_i - x_i)`` with
    every ``T_i`` evaluated at the full pre-update iterate.  Stops when the
    full fixed point residual ``||T_n(x) - x||`` falls below the tolerance.

    For plain families the relaxations must satisfy ``inf lambda_n > 0`` and
    ``sup lambda_n < 1``.  Averaged families with constant ``alpha_n`` widen
    the admissible range to relaxations with ``alpha_n * lambda_n`` bounded
    inside ]0, 1[; the update itself is unchanged.
    """
    if x0.dims != T.dims:
        raise ShapeError("starting point does not match the operator family")
    _check_rule(cfg.sweeping, T.dims.m, "single-layer driver")
    _check_slots(cfg, ("a",), "single-layer driver")
    lam = cfg.relaxation
    lo, hi = lam.bounds()
    if T.regularity == "averaged":
        alo, ahi = _bounds_of(T.averaging)
        corners = [alo * lo, alo * hi, ahi * lo, ahi * hi]
        _require(
            min(corners) > 0 and max(corners) < 1,
            "averaged driver requires alpha_n * lambda_n inside ]0, 1[, "
            f"got bounds [{min(corners)}, {max(corners)}]",
        )
    else:
        _require(lo > 0, "single-layer driver requires inf lambda_n > 0")
        _require(hi < 1, f"sup lambda_n < 1 required by the single-layer "
                         f"driver, got {hi}")
    sampler_a = _error_sampler(cfg, "a", T.dims)
    return _km_engine(
        T.evaluate, lam, cfg, x0, sampler_a,
        _distance_to(cfg.reference), None, None,
    )


# ---------------------------------------------------------------------------
# double layer
# ---------------------------------------------------------------------------


def run_double_layer(
    T: BlockOperatorFamily,
    R: BlockOperatorFamily,
    cfg: SolverConfig,
    x0: BlockVector,
    inner_error_sampler: Callable[[int], BlockVector] | None = None,
    objective_fn: Callable[[BlockVector], float] | None = None,
    stepsize_for_trace: Schedule | None = None,
) -> IterateTrace:
    """Two averaged layers per iteration.

    Computes ``y_n = R_n(x_n) + b_n`` in full (the mask never applies to the
    inner layer) and then updates the active blocks toward
    ``T_n(y_n) + a_n``.  Requires ``sup alpha_n < 1`` and ``sup beta_n < 1``
    for the two averaging sequences and relaxations in ]0, 1] bounded away
    from zero.

    ``inner_error_sampler`` overrides the "b" error slot with a caller-built
    sampler; ``stepsize_for_trace`` only fills the trace stepsize column.
    """
    if x0.dims != T.dims or x0.dims != R.dims:
        raise ShapeError("starting point does not match the operator families")
    _check_rule(cfg.sweeping, T.dims.m, "double-layer driver")
    _check_slots(cfg, ("a", "b"), "double-layer driver")
    _require(T.regularity == "averaged",
             "double-layer driver needs an averaged outer family")
    _require(R.regularity == "averaged",
             "double-layer driver needs an averaged inner family")
    _require(_bounds_of(T.averaging)[1] < 1,
             "double-layer driver requires sup alpha_n < 1")
    _require(_bounds_of(R.averaging)[1] < 1,
             "double-layer driver requires sup beta_n < 1")
    lo, hi = cfg.relaxation.bounds()
    _require(lo > 0 and hi <= 1,
             "double-layer driver requires lambda_n in ]0, 1] with "
             f"inf lambda_n > 0, got bounds [{lo}, {hi}]")
    sampler_a = _error_sampler(cfg, "a", T.dims)
    sampler_b = inner_error_sampler
    if sampler_b is None:
        sampler_b = _error_sampler(cfg, "b", R.dims)

    def target_fn(n: int, x: BlockVector) -> BlockVector:
        y = R.evaluate(n, x)
        if sampler_b is not None:
            y = combine(1.0, y, 1.0, sampler_b(n))
        return T.evaluate(n, y)

    return _km_engine(
        target_fn, cfg.relaxation, cfg, x0, sampler_a,
        _distance_to(cfg.reference), objective_fn, stepsize_for_trace,
    )


# ---------------------------------------------------------------------------
# splitting from the coupled resolvent
# ---------------------------------------------------------------------------


def _spot_check_resolvent(
    jb: Callable[[BlockVector], BlockVector],
    dims: BlockDims,
    samples: int = 8,
    tolerance: float = 1e-9,
) -> None:
    """Sampled nonexpansiveness check of a user-supplied coupled resolvent."""
    rng = np.random.default_rng(0x4A42)
    for _ in range(samples):
        x = BlockVector(dims, rng.standard_normal(dims.total))
        y = BlockVector(dims, rng.standard_normal(dims.total))
        slack = distance(jb(x), jb(y)) ** 2 - distance(x, y) ** 2
        if slack > tolerance:
            raise ParameterError(
                "the supplied coupled resolvent is not nonexpansive "
                f"(sampled slack {slack:.3e}); it cannot be the resolvent of "
                "a monotone operator"
            )


def _dr_engine(
    A_ops: Sequence[MonotoneOperator],
    jb: Callable[[BlockVector], BlockVector],
    gamma: float,
    cfg: SolverConfig,
    x0: BlockVector,
    z0: BlockVector,
    sampler_a: Callable[[int], BlockVector] | None,
    sampler_b: Callable[[int], BlockVector] | None,
    distance_fn: Callable[[BlockVector], float] | None,
) -> tuple[IterateTrace, BlockVector]:
    dims = x0.dims
    records: list[TraceRecord] = []
    x, z = x0, z0
    termination = "max_iterations"
    mu_sched = cfg.dr_relaxation
    for n in range(cfg.max_iterations):
        q = jb(x)
        refl = combine(2.0, q, -1.0, x)
        ja = construct(
            dims,
            [A_ops[i].resolvent(refl.block(i), gamma) for i in range(dims.m)],
        )
        residual = 2.0 * distance(ja, q)
        dist = distance_fn(q) if distance_fn else None
        if residual < cfg.tolerance:
            records.append(
                TraceRecord(n, residual, None, None, gamma, dist, None, None)
            )
            termination = "tolerance"
            break
        mask = sample_mask(cfg.sweeping, n, cfg.seed)
        mu = mu_sched.at(n)
        zt = q if sampler_b is None else combine(1.0, q, 1.0, sampler_b(n))
        z = masked_update(z, mask, 1.0, zt)
        a_n = sampler_a(n) if sampler_a is not None else None
        out = x.flat.copy()
        for i in mask.active:
            sl = dims.slice(i)
            arg = 2.0 * z.flat[sl] - x.flat[sl]
            ji = A_ops[i].resolvent(arg, gamma)
            step = ji - z.flat[sl]
            if a_n is not None:
                step = step + a_n.flat[sl]
            out[sl] = x.flat[sl] + mu * step
        snap = x if n % cfg.snapshot_stride == 0 else None
        records.append(
            TraceRecord(n, residual, mask.bits, mu, gamma, dist, None, snap)
        )
        x = BlockVector(dims, out)
    return IterateTrace(tuple(records), x, termination), z


def run_dr(
    A: Sequence[MonotoneOperator],
    JB: Callable[[BlockVector], BlockVector],
    gamma: float,
    cfg: SolverConfig,
    x0: BlockVector,
    z0: BlockVector | None = None,
    check_resolvent: bool = True,
) -> tuple[IterateTrace, PrimalDualSolution]:
    """Masked splitting iteration for ``0 in A_i x_i + B_i(x)``.

    Each iteration refreshes the active blocks of the shadow state from the
    coupled resolvent, ``z_i <- Q_i(x) + b_i``, and then relaxes
    ``x_i <- x_i + mu_n (J_{gamma A_i}(2 z_i - x_i) + a_i - z_i)``, reading
    the already refreshed ``z_i``.  The coupled resolvent is always evaluated
    on the full vector and sliced.

    Returns the trace of the governing sequence together with the primal
    point ``z = JB(x_final)`` and the dual point ``(x_final - z) / gamma``.
    """
    dims = x0.dims
    if len(A) != dims.m:
        raise ShapeError(f"need {dims.m} blockwise operators, got {len(A)}")
    for i, op in enumerate(A):
        if op.dim != dims.dims[i]:
            raise ShapeError(f"operator {i} has dim {op.dim}, expected "
                             f"{dims.dims[i]}")
    _check_rule(cfg.sweeping, dims.m, "splitting driver")
    _check_slots(cfg, ("a", "b"), "splitting driver")
    _require(gamma > 0, "gamma must be > 0")
    lo, hi = cfg.dr_relaxation.bounds()
    _require(lo > 0 and hi < 2,
             f"mu_n must lie in ]0, 2[ with inf mu_n > 0 and sup mu_n < 2, "
             f"got bounds [{lo}, {hi}]")
    if z0 is None:
        z0 = construct(dims)
    if z0.dims != dims:
        raise ShapeError("shadow state dims do not match the iterate")
    if check_resolvent:
        _spot_check_resolvent(JB, dims)
    trace, _ = _dr_engine(
        A, JB, gamma, cfg, x0, z0,
        _error_sampler(cfg, "a", dims),
        _error_sampler(cfg, "b", dims),
        _distance_to(cfg.reference),
    )
    z = JB(trace.final)
    u = combine(1.0 / gamma, trace.final, -1.0 / gamma, z)
    return trace, PrimalDualSolution(primal=z, dual=u)


# ---------------------------------------------------------------------------
# primal-dual splitting on the paired space
# ---------------------------------------------------------------------------


def assemble_pd_problem(
    primal_terms: Sequence[MonotoneOperator | ProxFunction],
    dual_terms: Sequence[MonotoneOperator | ProxFunction],
    L: LinearBlockOperator | Sequence[Sequence],
) -> PdDrProblem:
    """Package a linearly coupled primal-dual problem.

    Proximal functions are wrapped as subdifferentials.  Every image row of
    the grid must carry a nonzero operator.
    """
    if not isinstance(L, LinearBlockOperator):
        L = LinearBlockOperator(L)

    def wrap(term) -> MonotoneOperator:
        if isinstance(term, ProxFunction):
            return Subdifferential(term)
        if isinstance(term, MonotoneOperator):
            return term
        raise ShapeError(f"expected a function or monotone operator, got "
                         f"{type(term).__name__}")

    h_ops = tuple(wrap(t) for t in primal_terms)
    g_ops = tuple(wrap(t) for t in dual_terms)
    if len(h_ops) != L.m:
        raise ShapeError(f"need {L.m} primal terms, got {len(h_ops)}")
    if len(g_ops) != L.p:
        raise ShapeError(f"need {L.p} dual terms, got {len(g_ops)}")
    for i, op in enumerate(h_ops):
        if op.dim != L.source_dims.dims[i]:
            raise ShapeError(f"primal term {i} has dim {op.dim}, expected "
                             f"{L.source_dims.dims[i]}")
    for k, op in enumerate(g_ops):
        if op.dim != L.target_dims.dims[k]:
            raise ShapeError(f"dual term {k} has dim {op.dim}, expected "
                             f"{L.target_dims.dims[k]}")
    for k in range(L.p):
        if float(np.trace(L.row_gram(k))) <= 0.0:
            raise ParameterError(
                f"image row {k} of the coupling grid is zero; every row "
                "must satisfy min_k sum_i ||L_ki||^2 > 0"
            )
    return PdDrProblem(h_ops, g_ops, L, GraphSubspace(L))


def _split_pair(v: BlockVector, h: BlockDims, g: BlockDims) -> tuple[BlockVector, BlockVector]:
    return (
        BlockVector(h, v.flat[: h.total]),
        BlockVector(g, v.flat[h.total:]),
    )


def _join_pair(x: BlockVector, y: BlockVector, k: BlockDims) -> BlockVector:
    return BlockVector(k, np.concatenate([x.flat, y.flat]))


def run_pd_dr(
    problem: PdDrProblem,
    gamma: float,
    cfg: SolverConfig,
    x0: BlockVector,
    z0: BlockVector | None = None,
    y0: BlockVector | None = None,
    w0: BlockVector | None = None,
) -> tuple[IterateTrace, PrimalDualSolution]:
    """Primal-dual splitting with masks over all ``m + p`` blocks.

    Runs the coupled-resolvent splitting on the paired space where the
    coupled operator is the normal cone of the graph subspace, so its
    resolvent is the graph projector.  The shadow states track the projector
    refresh of the governing state, so the reported primal point is the
    primal part of the final refresh and the reported dual point is
    ``(w - y_final) / gamma`` with ``w`` its image part.
    """
    h, g, k = problem.h_dims, problem.g_dims, problem.k_dims
    if x0.dims != h:
        raise ShapeError("x0 must live on the primal blocks")
    y0 = y0 if y0 is not None else problem.L.apply(x0)
    if y0.dims != g:
        raise ShapeError("y0 must live on the image blocks")
    z0 = z0 if z0 is not None else construct(h)
    w0 = w0 if w0 is not None else construct(g)
    if z0.dims != h or w0.dims != g:
        raise ShapeError("shadow states must match the primal/image blocks")
    _check_rule(cfg.sweeping, k.m, "primal-dual driver")
    _check_slots(cfg, ("a", "b", "c", "d"), "primal-dual driver")
    _require(gamma > 0, "gamma must be > 0")
    lo, hi = cfg.dr_relaxation.bounds()
    _require(lo > 0 and hi < 2,
             f"mu_n must lie in ]0, 2[ with inf mu_n > 0 and sup mu_n < 2, "
             f"got bounds [{lo}, {hi}]")

    V = problem.V

    def jb(v: BlockVector) -> BlockVector:
        xv, yv = _split_pair(v, h, g)
        t, lt = graph_projection(V, xv, yv)
        return _join_pair(t, lt, k)

    distance_fn = None
    if cfg.reference is not None:
        if cfg.reference.dims != h:
            raise ShapeError("reference must live on the primal blocks")
        ref = cfg.reference

        def distance_fn(q: BlockVector) -> float:
            return distance(_split_pair(q, h, g)[0], ref)

    trace, _ = _dr_engine(
        problem.k_ops, jb, gamma, cfg,
        _join_pair(x0, y0, k), _join_pair(z0, w0, k),
        _paired_error_sampler(cfg, "a", "b", h, g, k),
        _paired_error_sampler(cfg, "c", "d", h, g, k),
        distance_fn,
    )
    z_final, w_final = _split_pair(jb(trace.final), h, g)
    _, y_final = _split_pair(trace.final, h, g)
    dual = combine(1.0 / gamma, w_final, -1.0 / gamma, y_final)
    return trace, PrimalDualSolution(primal=z_final, dual=dual)


# ---------------------------------------------------------------------------
# forward-backward
# ---------------------------------------------------------------------------


def _spot_check_cocoercive(
    B: CocoerciveOperator, samples: int = 16, tolerance: float = 1e-9
) -> None:
    rng = np.random.default_rng(0x4642)
    d = B.dims.total
    for _ in range(samples):
        x = BlockVector(B.dims, rng.standard_normal(d))
        y = BlockVector(B.dims, rng.standard_normal(d))
        dbx = B.apply(x).flat - B.apply(y).flat
        slack = B.theta * float(dbx @ dbx) - float((x.flat - y.flat) @ dbx)
        if slack > tolerance:
            raise ParameterError(
                f"forward operator fails its cocoercivity constant "
                f"{B.theta} (sampled slack {slack:.3e})"
            )


def run_fb(
    A: Sequence[MonotoneOperator],
    B: CocoerciveOperator | None,
    cfg: SolverConfig,
    x0: BlockVector,
    objective_fn: Callable[[BlockVector], float] | None = None,
    check_cocoercivity: bool = True,
) -> IterateTrace:
    """Masked forward-backward iteration.

    Active blocks follow
    ``x_i <- x_i + lambda_n (J_{gamma_n A_i}(x_i - gamma_n (B_i(x) + c_i))
    + a_i - x_i)``.  Stepsizes must stay inside ]0, 2*theta[ for the
    cocoercivity constant theta of ``B`` (checked on a sample of pairs), and
    relaxations inside ]0, 1] bounded away from zero.  Runs as two averaged
    layers: the backward layer is the blockwise resolvent and the forward
    layer is ``x - gamma_n B x``.
    """
    dims = x0.dims
    if len(A) != dims.m:
        raise ShapeError(f"need {dims.m} blockwise operators, got {len(A)}")
    _check_slots(cfg, ("a", "c"), "forward-backward driver")
    gamma = cfg.stepsize
    if gamma is None:
        raise ParameterError("forward-backward needs a stepsize schedule")
    lo, hi = gamma.bounds()
    if B is not None:
        two_theta = 2.0 * B.theta
        _require(
            lo > 0 and hi < two_theta,
            f"gamma_n must be a sequence in ]0, 2*theta[ = ]0, {two_theta}[ "
            f"with inf > 0 and sup < 2*theta, got bounds [{lo}, {hi}]",
        )
        if B.dims != dims:
            raise ShapeError("forward operator dims do not match the iterate")
        if check_cocoercivity:
            _spot_check_cocoercive(B)
    else:
        _require(lo > 0, "gamma_n must satisfy inf gamma_n > 0")
    T = resolvent_family(A, gamma)
    if T.dims != dims:
        raise ShapeError("blockwise operators do not match the iterate dims")
    R = forward_step_family(B, gamma, dims)
    sampler_c = _error_sampler(cfg, "c", dims)
    inner_sampler = None
    if sampler_c is not None:
        # the forward perturbation c enters through the step as -gamma_n * c
        def inner_sampler(n: int) -> BlockVector:
            return BlockVector(dims, (-gamma.at(n)) * sampler_c(n).flat)

    layer_cfg = replace(
        cfg, errors={k: v for k, v in cfg.errors.items() if k == "a"}
    )
    return run_double_layer(
        T, R, layer_cfg, x0,
        inner_error_sampler=inner_sampler,
        objective_fn=objective_fn,
        stepsize_for_trace=gamma,
    )


def run_fb_min(
    fs: Sequence[ProxFunction],
    smooth: Sequence[SmoothTerm],
    L: LinearBlockOperator | Sequence[Sequence],
    cfg: SolverConfig,
    x0: BlockVector,
) -> IterateTrace:
    """Proximal-gradient minimization of a linearly coupled objective.

    Minimizes ``sum_i f_i(x_i) + sum_k g_k(sum_i L_ki x_i)`` by delegating to
    the forward-backward driver with the subdifferentials of the ``f_i`` and
    the chain-rule gradient of the coupled smooth part, whose cocoercivity
    constant comes from the grid.  The objective value is recorded on every
    iteration when all smooth terms expose values.
    """
    if not isinstance(L, LinearBlockOperator):
        L = LinearBlockOperator(L)
    problem = CoupledMinProblem(tuple(fs), tuple(smooth), L)
    if x0.dims != problem.dims:
        raise ShapeError("starting point does not match the coupling grid")
    for i, f in enumerate(problem.fs):
        if f.dim != problem.dims.dims[i]:
            raise ShapeError(f"function {i} has dim {f.dim}, expected "
                             f"{problem.dims.dims[i]}")
    B = problem.forward()
    A = [Subdifferential(f) for f in problem.fs]
    objective_fn = None
    if all(g.value is not None for g in problem.smooth):
        objective_fn = problem.objective
    return run_fb(A, B, cfg, x0, objective_fn=objective_fn,
                  check_cocoercivity=False)
