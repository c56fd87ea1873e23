"""Empirical verification: monotonicity monitors, exact activation-averaged
identities, inclusion residuals, deterministic reference solutions, and
Monte Carlo summaries across seeds.

The expectation utilities enumerate the activation law exactly, so their
claims are equalities up to floating point rather than statistical tests.
Almost-sure convergence is operationalized as a success fraction of 1.0 over
many seeds at a fixed tolerance; this is an empirical surrogate, not a proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .blockspace import (
    BlockDims,
    BlockVector,
    WeightedNormSpec,
    combine,
    construct,
    distance,
    masked_update,
    reduce,
)
from .errors import (
    CapabilityError,
    CapacityError,
    OracleFailureError,
    ParameterError,
    ShapeError,
)
from .operators import (
    BlockOperatorFamily,
    MonotoneOperator,
    Subdifferential,
    graph_projection,
)
from .solvers import (
    CoupledMinProblem,
    DrProblem,
    FbProblem,
    IterateTrace,
    KmProblem,
    PdDrProblem,
    PrimalDualSolution,
)
from .sweeping import SweepingRule, mask_law

__all__ = [
    "FejerReport",
    "fejer_monitor",
    "expected_fejer_check",
    "IdentityReport",
    "expectation_identity_check",
    "InclusionReport",
    "inclusion_residual",
    "oracle_reference",
    "SeedOutcome",
    "ConvergenceReport",
    "monte_carlo_summary",
]

_EXPECTED_SLACK_BLOCK_LIMIT = 10
_ORACLE_DIM_LIMIT = 200


# ---------------------------------------------------------------------------
# monotonicity monitors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FejerReport:
    """Per-step slack of the distance-decrease inequality along one path.

    ``slacks[j]`` compares consecutive stored iterates:
    ``phi(||x_{j+1} - z||) - (1 + chi_j) * phi(||x_j - z||) - eta_j``.
    A single realized path may show positive slack when stochastic errors
    are active; the report flags violations but deciding is left to the
    caller.
    """

    slacks: tuple[float, ...]
    violations: int
    max_positive_slack: float


def _phi(name: str) -> Callable[[float], float]:
    if name == "t":
        return lambda t: t
    if name == "t2":
        return lambda t: t * t
    raise ParameterError(f"phi must be 't' or 't2', got {name!r}")


def _envelope(values, count: int) -> list[float]:
    if values is None:
        return [0.0] * count
    if callable(values):
        return [float(values(j)) for j in range(count)]
    values = list(values)
    if len(values) < count:
        raise ShapeError(f"envelope has {len(values)} entries, need {count}")
    return [float(v) for v in values[:count]]


def fejer_monitor(
    trace: IterateTrace,
    z: BlockVector,
    phi: str = "t2",
    chi=None,
    eta=None,
    tolerance: float = 0.0,
) -> FejerReport:
    """Check the distance-decrease inequality along the stored iterates."""
    xs = trace.snapshots()
    if len(xs) < 2:
        raise ParameterError(
            "trace stores no iterate snapshots; rerun with a snapshot "
            "stride that keeps at least two iterates"
        )
    f = _phi(phi)
    count = len(xs) - 1
    chis = _envelope(chi, count)
    etas = _envelope(eta, count)
    slacks = []
    for j in range(count):
        before = f(distance(xs[j], z))
        after = f(distance(xs[j + 1], z))
        slacks.append(after - (1.0 + chis[j]) * before - etas[j])
    violations = sum(1 for s in slacks if s > tolerance)
    return FejerReport(tuple(slacks), violations,
                       max(0.0, max(slacks)))


def _weighted_sq(d: BlockVector, weights: WeightedNormSpec) -> float:
    return reduce(d, d, weights).weighted_norm_sq_x


def expected_fejer_check(
    T: BlockOperatorFamily,
    trace: IterateTrace,
    z: BlockVector,
    rule: SweepingRule,
) -> list[float]:
    """Exact expected decrease of the weighted distance at each stored step.

    For every record with a stored iterate, re-expands all activation
    patterns of the rule at the recorded relaxation and returns the exact
    expected change of the squared weighted distance to ``z``.  For an
    error-free run of a quasinonexpansive family and a fixed point ``z``
    every entry is nonpositive up to floating point.
    """
    if rule.m > _EXPECTED_SLACK_BLOCK_LIMIT:
        raise CapacityError(
            f"expected-slack expansion supports m <= "
            f"{_EXPECTED_SLACK_BLOCK_LIMIT}, got {rule.m}"
        )
    law = mask_law(rule)
    weights = WeightedNormSpec(law.marginals)
    slacks = []
    for rec in trace.records:
        if rec.snapshot is None or rec.relaxation is None:
            continue
        x = rec.snapshot
        tx = T.evaluate(rec.n, x)
        base = _weighted_sq(combine(1.0, x, -1.0, z), weights)
        expected = 0.0
        for mask, prob in law.support:
            cand = masked_update(x, mask, rec.relaxation, tx)
            expected += prob * _weighted_sq(combine(1.0, cand, -1.0, z), weights)
        slacks.append(expected - base)
    return slacks


# ---------------------------------------------------------------------------
# exact activation-averaged identities
# ---------------------------------------------------------------------------


class IdentityReport(NamedTuple):
    target_lhs: float
    target_rhs: float
    target_abs_err: float
    step_lhs: float
    step_rhs: float
    step_abs_err: float


def expectation_identity_check(
    T: BlockOperatorFamily,
    x: BlockVector,
    z: BlockVector,
    rule: SweepingRule,
    iteration: int = 0,
) -> IdentityReport:
    """Exact second-moment identities of the masked update candidate.

    With ``t(mask)`` the unrelaxed masked candidate built from ``T(x)`` and
    the weighted norm using the rule's marginals, enumeration over the
    activation law gives two exact identities:

    * target: ``E |||t - z|||^2 = |||x - z|||^2 + ||Tx - z||^2 - ||x - z||^2``
    * step:   ``E |||t - x|||^2 = ||Tx - x||^2``

    Both are pure algebra for any operator and any points, so the absolute
    errors are floating-point small.
    """
    if x.dims != T.dims or z.dims != T.dims:
        raise ShapeError("points must match the operator family dims")
    law = mask_law(rule)
    if rule.m != x.dims.m:
        raise ShapeError("rule must cover the same number of blocks")
    weights = WeightedNormSpec(law.marginals)
    tx = T.evaluate(iteration, x)
    lhs_target = 0.0
    lhs_step = 0.0
    for mask, prob in law.support:
        t = masked_update(x, mask, 1.0, tx)
        lhs_target += prob * _weighted_sq(combine(1.0, t, -1.0, z), weights)
        lhs_step += prob * _weighted_sq(combine(1.0, t, -1.0, x), weights)
    diff_xz = combine(1.0, x, -1.0, z)
    r = reduce(diff_xz, diff_xz, weights)
    diff_txz = combine(1.0, tx, -1.0, z)
    diff_txx = combine(1.0, tx, -1.0, x)
    # group the weighted/plain difference first: with one block the two
    # norms cancel bitwise and the identity is exactly a tautology
    rhs_target = ((r.weighted_norm_sq_x - r.norm_sq_x)
                  + reduce(diff_txz, diff_txz).norm_sq_x)
    rhs_step = reduce(diff_txx, diff_txx).norm_sq_x
    return IdentityReport(
        lhs_target, rhs_target, abs(lhs_target - rhs_target),
        lhs_step, rhs_step, abs(lhs_step - rhs_step),
    )


# ---------------------------------------------------------------------------
# inclusion residuals
# ---------------------------------------------------------------------------


class InclusionReport(NamedTuple):
    primal_res: float
    dual_res: float | None


def _membership_residual(op: MonotoneOperator, point: np.ndarray,
                         value: np.ndarray, gamma: float) -> float:
    """Distance surrogate for ``value in op(point)``.

    Uses the resolvent characterization
    ``value in op(point)  iff  point = J_{gamma op}(point + gamma value)``.
    """
    j = op.resolvent(point + gamma * value, gamma)
    return float(np.linalg.norm(point - j))


def _blockwise_fixed_point_residual(
    A: Sequence[MonotoneOperator],
    x: BlockVector,
    bx: BlockVector,
    gamma: float,
) -> float:
    total = 0.0
    for i, op in enumerate(A):
        xi = x.block(i)
        j = op.resolvent(xi - gamma * bx.block(i), gamma)
        total += float(np.linalg.norm(xi - j)) ** 2
    return math.sqrt(total)


def inclusion_residual(problem, candidate) -> InclusionReport:
    """Nonnegative residuals that vanish exactly at solutions.

    Set memberships for subdifferentials are measured through the proximal
    fixed point characterization, so no explicit subdifferential sets are
    formed.  ``candidate`` is a point on the primal blocks or a primal-dual
    pair; dual residuals are only reported for pairs.
    """
    primal = candidate.primal if isinstance(candidate, PrimalDualSolution) else candidate
    dual = candidate.dual if isinstance(candidate, PrimalDualSolution) else None

    if isinstance(problem, (FbProblem, CoupledMinProblem)):
        if isinstance(problem, CoupledMinProblem):
            A = [Subdifferential(f) for f in problem.fs]
            B = problem.forward()
        else:
            A, B = list(problem.A), problem.B
        bx = B.apply(primal) if B is not None else construct(primal.dims)
        primal_res = _blockwise_fixed_point_residual(A, primal, bx, 1.0)
        dual_res = None
        if dual is not None:
            res_a = max(
                _membership_residual(A[i], primal.block(i), -dual.block(i), 1.0)
                for i in range(primal.dims.m)
            )
            res_b = float(np.linalg.norm(bx.flat - dual.flat))
            dual_res = max(res_a, res_b)
        return InclusionReport(primal_res, dual_res)

    if isinstance(problem, DrProblem):
        gamma = problem.gamma
        A = list(problem.A)
        if problem.B_forward is not None:
            bx = problem.B_forward.apply(primal)
            primal_res = _blockwise_fixed_point_residual(A, primal, bx, gamma)
        elif dual is not None:
            res_a = max(
                _membership_residual(A[i], primal.block(i),
                                     -dual.block(i), gamma)
                for i in range(primal.dims.m)
            )
            jb_arg = combine(1.0, primal, gamma, dual)
            res_b = distance(primal, problem.JB(jb_arg))
            primal_res = max(res_a, res_b)
        else:
            raise CapabilityError(
                "need either a forward evaluation of the coupled operator "
                "or a dual point to measure this inclusion"
            )
        dual_res = None
        if dual is not None:
            res_a = max(
                _membership_residual(A[i], primal.block(i),
                                     -dual.block(i), gamma)
                for i in range(primal.dims.m)
            )
            if problem.B_forward is not None:
                res_b = float(np.linalg.norm(
                    problem.B_forward.apply(primal).flat - dual.flat
                ))
            else:
                jb_arg = combine(1.0, primal, gamma, dual)
                res_b = distance(primal, problem.JB(jb_arg))
            dual_res = max(res_a, res_b)
        return InclusionReport(primal_res, dual_res)

    if isinstance(problem, PdDrProblem):
        if dual is None:
            raise CapabilityError(
                "linearly coupled inclusions need a primal-dual pair"
            )
        gamma = 1.0
        if primal.dims != problem.h_dims or dual.dims != problem.g_dims:
            raise ShapeError("candidate does not match the problem blocks")
        pullback = problem.L.adjoint(dual)
        res_a_sq = 0.0
        for i, op in enumerate(problem.h_ops):
            res_a_sq += _membership_residual(
                op, primal.block(i), -pullback.block(i), gamma
            ) ** 2
        image = problem.L.apply(primal)
        res_b_sq = 0.0
        for k, op in enumerate(problem.g_ops):
            res_b_sq += _membership_residual(
                op, image.block(k), dual.block(k), gamma
            ) ** 2
        return InclusionReport(math.sqrt(res_a_sq), math.sqrt(res_b_sq))

    raise CapabilityError(
        f"inclusion residuals are not available for {type(problem).__name__}"
    )


# ---------------------------------------------------------------------------
# deterministic reference solutions
# ---------------------------------------------------------------------------


def _check_oracle_scale(dims: BlockDims) -> None:
    if dims.total > _ORACLE_DIM_LIMIT:
        raise CapacityError(
            f"reference solutions support total dim <= {_ORACLE_DIM_LIMIT}"
        )


def _full_fb_reference(
    A: Sequence[MonotoneOperator],
    B,
    dims: BlockDims,
    gamma: float,
    x0: BlockVector | None,
    max_iterations: int,
    tol: float,
) -> BlockVector:
    x = x0 if x0 is not None else construct(dims)
    for _ in range(max_iterations):
        bx = B.apply(x) if B is not None else None
        parts = []
        for i, op in enumerate(A):
            arg = x.block(i) - gamma * bx.block(i) if bx is not None else x.block(i)
            parts.append(op.resolvent(arg, gamma))
        nxt = construct(dims, parts)
        if distance(nxt, x) < tol:
            return nxt
        x = nxt
    raise OracleFailureError(
        f"full-sweep forward-backward reference did not reach {tol} in "
        f"{max_iterations} iterations"
    )


def _full_dr_reference(
    A: Sequence[MonotoneOperator],
    jb: Callable[[BlockVector], BlockVector],
    dims: BlockDims,
    gamma: float,
    max_iterations: int,
    tol: float,
) -> BlockVector:
    x = construct(dims)
    for _ in range(max_iterations):
        q = jb(x)
        refl = combine(2.0, q, -1.0, x)
        ja = construct(
            dims, [A[i].resolvent(refl.block(i), gamma) for i in range(dims.m)]
        )
        residual = 2.0 * distance(ja, q)
        if residual < tol:
            return jb(x)
        x = combine(1.0, x, 1.0, combine(1.0, ja, -1.0, q))
    raise OracleFailureError(
        f"full-mask splitting reference did not reach {tol} in "
        f"{max_iterations} iterations"
    )


def _quadratic_pieces(fn) -> tuple[np.ndarray, np.ndarray] | None:
    """Hessian and linear term of a catalog function, when quadratic."""
    kind = getattr(fn, "kind", None)
    if kind == "zero":
        return np.zeros((fn.dim, fn.dim)), np.zeros(fn.dim)
    if kind == "sq_l2":
        h = fn.weight * np.eye(fn.dim)
        return h, -fn.weight * fn.center
    if kind == "quadratic":
        return fn.Q.copy(), fn.b.copy()
    return None


def oracle_reference(
    problem,
    max_iterations: int = 1_000_000,
    tol: float = 1e-12,
) -> BlockVector:
    """Deterministic full-sweep reference solution at desk scale.

    Forward-backward problems run the deterministic full-coordinate
    iteration at the cocoercivity stepsize; splitting problems run the
    deterministic full-mask iteration with unit relaxation; minimization
    problems whose terms are all quadratic are solved directly by linear
    algebra.  Raises when the budget is exhausted before the target
    residual, so a failed reference is reported rather than faked.
    """
    if isinstance(problem, CoupledMinProblem):
        _check_oracle_scale(problem.dims)
        pieces = [_quadratic_pieces(f) for f in problem.fs]
        smooth_pieces = [
            (g.hessian, g.linear) if g.hessian is not None else None
            for g in problem.smooth
        ]
        if all(p is not None for p in pieces) and all(
            p is not None for p in smooth_pieces
        ):
            d = problem.dims.total
            H = np.zeros((d, d))
            rhs = np.zeros(d)
            for i, (hq, hb) in enumerate(pieces):
                sl = problem.dims.slice(i)
                H[sl, sl] += hq
                rhs[sl] -= hb
            Lm = problem.L.stacked
            Hg = np.zeros((problem.L.target_dims.total,) * 2)
            bg = np.zeros(problem.L.target_dims.total)
            for k, (gq, gb) in enumerate(smooth_pieces):
                sl = problem.L.target_dims.slice(k)
                Hg[sl, sl] += gq
                bg[sl] += gb
            H += Lm.T @ Hg @ Lm
            rhs -= Lm.T @ bg
            if np.linalg.eigvalsh(0.5 * (H + H.T)).min() > 1e-10:
                return BlockVector(problem.dims, np.linalg.solve(H, rhs))
        B = problem.forward()
        A = [Subdifferential(f) for f in problem.fs]
        return _full_fb_reference(A, B, problem.dims, B.theta, None,
                                  max_iterations, tol)

    if isinstance(problem, FbProblem):
        _check_oracle_scale(problem.dims)
        gamma = problem.B.theta if problem.B is not None else 1.0
        return _full_fb_reference(problem.A, problem.B, problem.dims, gamma,
                                  None, max_iterations, tol)

    if isinstance(problem, DrProblem):
        _check_oracle_scale(problem.dims)
        return _full_dr_reference(problem.A, problem.JB, problem.dims,
                                  problem.gamma, max_iterations, tol)

    if isinstance(problem, PdDrProblem):
        _check_oracle_scale(problem.k_dims)
        h, g, k = problem.h_dims, problem.g_dims, problem.k_dims

        def jb(v: BlockVector) -> BlockVector:
            xv = BlockVector(h, v.flat[: h.total])
            yv = BlockVector(g, v.flat[h.total:])
            t, lt = graph_projection(problem.V, xv, yv)
            return BlockVector(k, np.concatenate([t.flat, lt.flat]))

        zk = _full_dr_reference(problem.k_ops, jb, k, 1.0,
                                max_iterations, tol)
        return BlockVector(h, zk.flat[: h.total])

    if isinstance(problem, KmProblem):
        _check_oracle_scale(problem.family.dims)
        x = problem.x0
        for n in range(max_iterations):
            tx = problem.family.evaluate(n, x)
            if distance(tx, x) < tol:
                return x
            x = combine(0.5, x, 0.5, tx)
        raise OracleFailureError(
            f"full-mask fixed point reference did not reach {tol} in "
            f"{max_iterations} iterations"
        )

    raise CapabilityError(
        f"no reference route for {type(problem).__name__}"
    )


# ---------------------------------------------------------------------------
# Monte Carlo summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeedOutcome:
    seed: int
    residual: float | None
    distance_to_reference: float | None
    iterations: int | None
    termination: str | None
    error: str | None = None


@dataclass(frozen=True)
class ConvergenceReport:
    outcomes: tuple[SeedOutcome, ...]
    success_fraction: float
    threshold: float
    metric: str
    residual_quantiles: dict
    distance_quantiles: dict | None

    def to_jsonable(self) -> dict:
        return {
            "threshold": self.threshold,
            "metric": self.metric,
            "success_fraction": self.success_fraction,
            "residual_quantiles": self.residual_quantiles,
            "distance_quantiles": self.distance_quantiles,
            "per_seed": [
                {
                    "seed": o.seed,
                    "residual": o.residual,
                    "distance_to_reference": o.distance_to_reference,
                    "iterations": o.iterations,
                    "termination": o.termination,
                    "error": o.error,
                }
                for o in self.outcomes
            ],
        }


def _quantiles(values: Sequence[float]) -> dict:
    arr = np.asarray(sorted(values), dtype=np.float64)
    qs = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {
        "min": float(qs[0]),
        "q25": float(qs[1]),
        "median": float(qs[2]),
        "q75": float(qs[3]),
        "max": float(qs[4]),
    }


def monte_carlo_summary(
    run_fn: Callable[[int], tuple[IterateTrace, float | None]],
    seeds: Sequence[int],
    threshold: float,
    metric: str = "auto",
) -> ConvergenceReport:
    """Replicate a run across seeds and aggregate the outcomes.

    ``run_fn(seed)`` returns the trace and an optional distance to a
    reference solution.  Success of a replica means its metric (distance
    when available, else final residual) is at or below the threshold.
    Replica failures are recorded per seed and do not abort the summary,
    and the aggregation does not depend on the seed order.
    """
    if len(seeds) < 2:
        raise ParameterError("Monte Carlo summaries need at least 2 seeds")
    if metric not in ("auto", "residual", "distance"):
        raise ParameterError(f"unknown metric {metric!r}")
    outcomes = []
    for seed in seeds:
        try:
            trace, dist = run_fn(int(seed))
            outcomes.append(SeedOutcome(
                int(seed), trace.final_residual, dist, trace.iterations,
                trace.termination,
            ))
        except Exception as exc:  # noqa: BLE001 - replica errors are data
            outcomes.append(SeedOutcome(int(seed), None, None, None, None,
                                        error=f"{type(exc).__name__}: {exc}"))
    outcomes.sort(key=lambda o: o.seed)
    distances = [o.distance_to_reference for o in outcomes
                 if o.distance_to_reference is not None]
    residuals = [o.residual for o in outcomes if o.residual is not None]
    if metric == "auto":
        metric = "distance" if distances else "residual"
    successes = 0
    for o in outcomes:
        if o.error is not None:
            continue
        value = (o.distance_to_reference if metric == "distance"
                 else o.residual)
        if value is not None and value <= threshold:
            successes += 1
    return ConvergenceReport(
        tuple(outcomes),
        successes / len(outcomes),
        threshold,
        metric,
        _quantiles(residuals) if residuals else {},
        _quantiles(distances) if distances else None,
    )
