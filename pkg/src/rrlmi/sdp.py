"""Solver-agnostic conic interface and the gain-level optimization drivers.

A :class:`ConicProgram` is a flat decision vector, a sparse linear
objective, a list of one-sided semidefinite constraints and optional
equality pins.  :func:`solve` lowers it to a single cone program (scaled
half-vectorization per constraint) and hands it to the wired backend;
Clarabel's interior point method is the one reference backend.

:func:`minimize_gamma` assembles the joint synthesis program for a system
and minimizes the squared attenuation level directly (it enters exactly one
block linearly).  :func:`solve_at_gamma` and :func:`bisect_gamma` provide
the fixed-level feasibility route as a robustness fallback.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

import clarabel

from .affine import AffinePsdConstraint
from .lmi import (
    ControllerGains,
    VariableLayout,
    assemble_synthesis_constraints,
    build_input_transform,
    recover_gains,
)
from .model import LargeScaleSystem, SynthesisParams, validate_system

__all__ = [
    "SolveStatus",
    "SolverOptions",
    "ConicProgram",
    "SolveOutcome",
    "SynthesisResult",
    "SynthesisError",
    "solve",
    "certificate_violation",
    "minimize_gamma",
    "solve_at_gamma",
    "bisect_gamma",
    "export_sdpa",
]


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"
    NUMERICAL_ERROR = "numerical_error"


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 200
    feasibility_tol: float = 1e-8
    gap_tol: float = 1e-8
    static_regularization: float = 1e-7
    verbose: bool = False


@dataclass(frozen=True)
class ConicProgram:
    """Immutable conic problem over a flat decision vector."""

    n_vars: int
    objective: Mapping[int, float]
    constraints: Sequence[AffinePsdConstraint]
    fixed: Sequence[tuple[int, float]] = ()
    options: SolverOptions = SolverOptions()

    def __post_init__(self):
        object.__setattr__(self, "objective", dict(self.objective))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "fixed", tuple(self.fixed))
        if not self.constraints:
            raise ValueError("a conic program needs at least one constraint")
        for idx in list(self.objective) + [i for i, _ in self.fixed]:
            if not 0 <= idx < self.n_vars:
                raise ValueError(f"variable index {idx} out of bounds (n_vars={self.n_vars})")


@dataclass(frozen=True)
class SolveOutcome:
    status: SolveStatus
    values: np.ndarray | None
    objective: float | None
    max_violation: float | None
    iterations: int = 0
    solve_time: float = 0.0
    message: str = ""

    def __post_init__(self):
        has_values = self.values is not None
        expected = self.status in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER)
        if has_values != expected:
            raise ValueError(f"values must be present iff status is optimal/max_iter "
                             f"(status={self.status}, has_values={has_values})")


# ---------------------------------------------------------------------------
# Lowering to the cone backend
# ---------------------------------------------------------------------------


def _svec(M: np.ndarray) -> np.ndarray:
    """Upper-triangular column-major half-vectorization, off-diagonals * sqrt(2)."""
    n = M.shape[0]
    out = np.empty(n * (n + 1) // 2)
    pos = 0
    for c in range(n):
        for r in range(c + 1):
            out[pos] = M[r, c] * (1.0 if r == c else np.sqrt(2.0))
            pos += 1
    return out


def _lower(program: ConicProgram):
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    cones = []
    offset = 0

    if program.fixed:
        for idx, val in program.fixed:
            rows.append(offset)
            cols.append(idx)
            vals.append(1.0)
            b.append(float(val))
            offset += 1
        cones.append(clarabel.ZeroConeT(len(program.fixed)))

    for con in program.constraints:
        sign = con.sign
        const = sign * con.const
        # normalize by the largest data entry; the constant alone can be a
        # tiny margin (epsilon * I), which would blow the rows up instead
        scale = float(np.max(np.abs(const))) if const.size else 0.0
        for coef in con.terms.values():
            scale = max(scale, float(np.max(np.abs(coef))))
        if scale <= 0.0:
            scale = 1.0
        sv_const = _svec(const) / scale
        dim = con.dim
        svdim = dim * (dim + 1) // 2
        b.extend(sv_const.tolist())
        for k, coef in con.terms.items():
            sv = _svec(sign * coef) / scale
            nz = np.nonzero(sv)[0]
            rows.extend((offset + nz).tolist())
            cols.extend([k] * len(nz))
            vals.extend((-sv[nz]).tolist())
        cones.append(clarabel.PSDTriangleConeT(dim))
        offset += svdim

    A = sp.csc_matrix((vals, (rows, cols)), shape=(offset, program.n_vars))
    q = np.zeros(program.n_vars)
    for idx, coef in program.objective.items():
        q[idx] = coef
    P = sp.csc_matrix((program.n_vars, program.n_vars))
    return P, q, A, np.array(b), cones


_STATUS_MAP = {
    "Solved": SolveStatus.OPTIMAL,
    "AlmostSolved": SolveStatus.OPTIMAL,
    "PrimalInfeasible": SolveStatus.INFEASIBLE,
    "AlmostPrimalInfeasible": SolveStatus.INFEASIBLE,
    "MaxIterations": SolveStatus.MAX_ITER,
    "MaxTime": SolveStatus.MAX_ITER,
}


def solve(program: ConicProgram) -> SolveOutcome:
    """Solve through the wired backend and replay the constraints on the result."""
    P, q, A, b, cones = _lower(program)
    settings = clarabel.DefaultSettings()
    settings.verbose = program.options.verbose
    settings.max_iter = program.options.max_iter
    settings.tol_feas = program.options.feasibility_tol
    settings.tol_gap_abs = program.options.gap_tol
    settings.tol_gap_rel = program.options.gap_tol
    settings.static_regularization_constant = program.options.static_regularization
    started = time.perf_counter()
    try:
        solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
        solution = solver.solve()
    except BaseException as exc:  # the backend is a Rust extension
        return SolveOutcome(
            status=SolveStatus.NUMERICAL_ERROR,
            values=None,
            objective=None,
            max_violation=None,
            solve_time=time.perf_counter() - started,
            message=f"backend failure: {exc}",
        )
    elapsed = time.perf_counter() - started

    raw = str(solution.status)
    status = _STATUS_MAP.get(raw, SolveStatus.NUMERICAL_ERROR)
    if status in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER):
        values = np.asarray(solution.x, dtype=float)
        objective = float(q @ values)
        violation = certificate_violation(program.constraints, values)
        return SolveOutcome(
            status=status,
            values=values,
            objective=objective,
            max_violation=violation,
            iterations=int(solution.iterations),
            solve_time=elapsed,
            message=raw,
        )
    return SolveOutcome(
        status=status,
        values=None,
        objective=None,
        max_violation=None,
        iterations=int(solution.iterations),
        solve_time=elapsed,
        message=raw,
    )


def certificate_violation(constraints: Sequence[AffinePsdConstraint], values: np.ndarray) -> float:
    """Worst constraint violation: max over blocks of the negative part of
    the smallest eigenvalue after sign normalization (0 when all hold)."""
    worst = 0.0
    for con in constraints:
        worst = max(worst, -min(con.min_eig(values), 0.0))
    return worst


# ---------------------------------------------------------------------------
# Synthesis drivers
# ---------------------------------------------------------------------------


class SynthesisError(RuntimeError):
    """Synthesis failed; the message carries the solver status and a hint."""


@dataclass(frozen=True)
class SynthesisResult:
    """Solved synthesis problem: level, gains and the replayable certificate.

    ``gamma`` is the certified attenuation level of the returned gains.
    When the level was minimized, ``gamma_infimum`` records the raw optimal
    value before the interior re-centering step (see
    :func:`minimize_gamma`); for feasibility solves the two coincide.
    """

    gamma: float
    gains: tuple[ControllerGains, ...]
    certificate: dict
    outcome: SolveOutcome
    layout: VariableLayout
    constraints: tuple[AffinePsdConstraint, ...]
    transforms: tuple[np.ndarray, ...]
    gamma_infimum: float | None = None

    def gain(self, i: int) -> ControllerGains:
        return self.gains[i - 1]


def _prepare(sys: LargeScaleSystem, params: SynthesisParams, transforms=None):
    problems = validate_system(sys)
    if problems:
        raise ValueError("invalid system: " + "; ".join(problems))
    problems = params.validate(sys)
    if problems:
        raise ValueError("invalid parameters: " + "; ".join(problems))
    if transforms is None:
        transforms = [build_input_transform(sys.subsystem(i).B) for i in range(1, sys.N + 1)]
    else:
        transforms = [np.asarray(T, dtype=float) for T in transforms]
        for i, T in enumerate(transforms, start=1):
            sub = sys.subsystem(i)
            target = np.vstack([np.eye(sub.m), np.zeros((sub.n - sub.m, sub.m))])
            if np.max(np.abs(T @ sub.B - target)) > 1e-8:
                raise ValueError(f"subsystem {i}: supplied transform does not normalize B")
    layout = VariableLayout(sys)
    constraints = assemble_synthesis_constraints(sys, params, layout, transforms)
    return layout, constraints, transforms


def _feedthrough_floor(sys: LargeScaleSystem) -> float:
    worst = 0.0
    for sub in sys.subsystems:
        worst = max(worst, float(np.linalg.eigvalsh(sub.F.T @ sub.F).max()))
    return float(np.sqrt(worst))


def _result(sys, layout, constraints, transforms, outcome, gamma_infimum=None) -> SynthesisResult:
    values = outcome.values
    certificate = layout.unpack(values)
    gains = tuple(
        recover_gains(
            sys,
            i,
            layout.value(values, i, "U"),
            layout.value(values, i, "X"),
            layout.value(values, i, "Z"),
        )
        for i in range(1, sys.N + 1)
    )
    gamma = float(np.sqrt(max(certificate["gamma_sq"], 0.0)))
    return SynthesisResult(
        gamma=gamma,
        gains=gains,
        certificate=certificate,
        outcome=outcome,
        layout=layout,
        constraints=tuple(constraints),
        transforms=tuple(transforms),
        gamma_infimum=gamma_infimum,
    )


def _raise_synthesis_failure(sys: LargeScaleSystem, params: SynthesisParams, outcome: SolveOutcome):
    hints = []
    if params.gamma is not None and params.gamma <= _feedthrough_floor(sys):
        hints.append(
            f"gamma={params.gamma} does not exceed the feedthrough floor "
            f"{_feedthrough_floor(sys):.4g}, which is necessary"
        )
    if params.epsilon > 1e-4:
        hints.append(f"epsilon={params.epsilon} may be too large a margin")
    if params.multiplier_structure == "shared_corner":
        hints.append(
            "the shared-corner multiplier structure is degenerate (marginally "
            "infeasible on the builtin benchmark families); retry with "
            "multiplier_structure='decoupled'"
        )
    hint = ("; ".join(hints)) or "check the decay/coupling parameters"
    raise SynthesisError(f"synthesis {outcome.status.value} ({outcome.message}); {hint}")


def minimize_gamma(
    sys: LargeScaleSystem,
    params: SynthesisParams | None = None,
    options: SolverOptions | None = None,
    transforms: Sequence[np.ndarray] | None = None,
    relevel: float = 0.02,
) -> SynthesisResult:
    """Minimize the certified attenuation level over the joint program.

    The squared level enters one diagonal block linearly, so minimization is
    a single cone solve; no bisection is involved.

    The raw infimum sits on the boundary of the semidefinite constraints,
    where the gain pre-products degenerate (the recovered gains blow up as
    the level approaches it).  ``relevel`` therefore backs the level off by
    the given relative amount and re-solves a pure feasibility problem
    there, returning an interior certificate with moderate gains whose
    certified level is the backed-off one.  ``relevel=0`` returns the raw
    minimizer.
    """
    params = params or SynthesisParams()
    layout, constraints, transforms = _prepare(sys, params, transforms)
    options = options or SolverOptions()
    program = ConicProgram(
        n_vars=layout.n_vars,
        objective={layout.gamma_sq_index: 1.0},
        constraints=constraints,
        options=options,
    )
    outcome = solve(program)
    if outcome.status is not SolveStatus.OPTIMAL:
        _raise_synthesis_failure(sys, params, outcome)
    gamma_star = float(np.sqrt(max(outcome.values[layout.gamma_sq_index], 0.0)))
    if relevel <= 0.0:
        return _result(sys, layout, constraints, transforms, outcome, gamma_infimum=gamma_star)
    gamma_op = (1.0 + relevel) * gamma_star
    recentered = ConicProgram(
        n_vars=layout.n_vars,
        objective={},
        constraints=constraints,
        fixed=((layout.gamma_sq_index, gamma_op**2),),
        options=options,
    )
    outcome2 = solve(recentered)
    if outcome2.status is not SolveStatus.OPTIMAL:
        # fall back to the raw minimizer rather than failing outright
        return _result(sys, layout, constraints, transforms, outcome, gamma_infimum=gamma_star)
    return _result(sys, layout, constraints, transforms, outcome2, gamma_infimum=gamma_star)


def solve_at_gamma(
    sys: LargeScaleSystem,
    params: SynthesisParams,
    gamma: float,
    options: SolverOptions | None = None,
    transforms: Sequence[np.ndarray] | None = None,
) -> tuple[bool, SynthesisResult | None]:
    """Feasibility check at a fixed attenuation level."""
    layout, constraints, transforms = _prepare(sys, params, transforms)
    program = ConicProgram(
        n_vars=layout.n_vars,
        objective={},
        constraints=constraints,
        fixed=((layout.gamma_sq_index, float(gamma) ** 2),),
        options=options or SolverOptions(),
    )
    outcome = solve(program)
    if outcome.status is SolveStatus.OPTIMAL:
        return True, _result(sys, layout, constraints, transforms, outcome)
    return False, None


def bisect_gamma(
    sys: LargeScaleSystem,
    params: SynthesisParams | None = None,
    gamma_hi: float | None = None,
    rel_width: float = 1e-4,
    options: SolverOptions | None = None,
) -> SynthesisResult:
    """Locate the minimal feasible level by bisection (robustness fallback)."""
    params = params or SynthesisParams()
    lo = _feedthrough_floor(sys)
    hi = gamma_hi if gamma_hi is not None else max(2.0 * lo, 1.0)
    feasible, best = solve_at_gamma(sys, params, hi, options)
    doublings = 0
    while not feasible:
        doublings += 1
        if doublings > 30:
            raise SynthesisError("no feasible attenuation level found while doubling upward")
        hi *= 2.0
        feasible, best = solve_at_gamma(sys, params, hi, options)
    while hi - lo > rel_width * hi:
        mid = 0.5 * (lo + hi)
        feasible, result = solve_at_gamma(sys, params, mid, options)
        if feasible:
            hi, best = mid, result
        else:
            lo = mid
    return best


# ---------------------------------------------------------------------------
# Sparse text export (for cross-checks with external solvers)
# ---------------------------------------------------------------------------


def export_sdpa(program: ConicProgram, path) -> None:
    """Write the program in SDPA sparse format (``.dat-s``).

    The SDPA primal is ``min c^T x`` subject to ``sum_k x_k F_k - F_0 >= 0``
    blockwise, so each constraint contributes ``F_0 = -sign * const`` and
    ``F_k = sign * coeff_k``.  Equality pins are not representable and are
    rejected.
    """
    if program.fixed:
        raise ValueError("SDPA export does not support equality-pinned variables")
    with open(path, "w") as f:
        f.write(f"{program.n_vars}\n")
        f.write(f"{len(program.constraints)}\n")
        f.write(" ".join(str(con.dim) for con in program.constraints) + "\n")
        c = np.zeros(program.n_vars)
        for idx, coef in program.objective.items():
            c[idx] = coef
        f.write(" ".join(repr(float(x)) for x in c) + "\n")
        for blk, con in enumerate(program.constraints, start=1):
            sign = con.sign
            F0 = -sign * con.const
            for r in range(con.dim):
                for cc in range(r, con.dim):
                    if F0[r, cc] != 0.0:
                        f.write(f"0 {blk} {r + 1} {cc + 1} {float(F0[r, cc])!r}\n")
            for k in sorted(con.terms):
                Fk = sign * con.terms[k]
                for r in range(con.dim):
                    for cc in range(r, con.dim):
                        if Fk[r, cc] != 0.0:
                            f.write(f"{k + 1} {blk} {r + 1} {cc + 1} {float(Fk[r, cc])!r}\n")
