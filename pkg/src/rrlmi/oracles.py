"""Independent numeric verification of the analytical building blocks.

Everything here is solver-free: composite Simpson quadrature against
functions with analytically known derivatives, plus Monte-Carlo sweeps over
randomly generated matrix data.  The checks double as the property-test
backbone for the constraint assembly, since they exercise the same selector
and bound constructions on trajectories instead of decision variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from .lmi import (
    build_difference_selector,
    build_input_transform,
    discounted_selector_bound,
    reciprocally_convex_bound,
)
from .model import LargeScaleSystem, SynthesisParams

__all__ = [
    "SampledFunction",
    "check_wirtinger_inequality",
    "check_extended_jensen_inequality",
    "check_reciprocally_convex_inequality",
    "check_discounted_window_bound",
    "check_transform_invariance",
    "TInvarianceReport",
    "random_psd",
    "random_rc_pair",
    "random_input_transform",
]


@dataclass(frozen=True)
class SampledFunction:
    """Vector function on [a, b] with exact derivative values.

    Built from polynomial/trigonometric bases so both the values and the
    derivative samples are analytic, leaving quadrature as the only error
    source.  ``npts`` must be odd (composite Simpson).
    """

    a: float
    b: float
    fn: Callable[[np.ndarray], np.ndarray]
    dfn: Callable[[np.ndarray], np.ndarray]
    npts: int = 401

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("need b > a")
        if self.npts < 3 or self.npts % 2 == 0:
            raise ValueError("npts must be odd and >= 3")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.npts)

    @property
    def values(self) -> np.ndarray:
        return np.atleast_2d(self.fn(self.grid).T).T

    @property
    def derivs(self) -> np.ndarray:
        return np.atleast_2d(self.dfn(self.grid).T).T

    def at(self, s: float) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.fn(np.array([s]))[0], dtype=float))

    def integral(self, p: float, q: float, npts: int | None = None) -> np.ndarray:
        """Simpson integral of the function over [q, p] (p > q)."""
        npts = npts or self.npts
        grid = np.linspace(q, p, npts if npts % 2 else npts + 1)
        vals = np.atleast_2d(self.fn(grid).T).T
        return simpson(vals, x=grid, axis=0)

    @classmethod
    def polynomial(cls, coeffs: np.ndarray, a: float, b: float, npts: int = 401) -> "SampledFunction":
        """x(s) = sum_k coeffs[k] s^k with vector coefficients (degree-major)."""
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        dcoeffs = coeffs[1:] * np.arange(1, coeffs.shape[0])[:, None]
        if dcoeffs.size == 0:
            dcoeffs = np.zeros((1, coeffs.shape[1]))

        def fn(s: np.ndarray) -> np.ndarray:
            powers = np.vander(np.asarray(s), coeffs.shape[0], increasing=True)
            return powers @ coeffs

        def dfn(s: np.ndarray) -> np.ndarray:
            powers = np.vander(np.asarray(s), dcoeffs.shape[0], increasing=True)
            return powers @ dcoeffs

        return cls(a, b, fn, dfn, npts)

    @classmethod
    def random_polynomial(
        cls,
        rng: np.random.Generator,
        n: int,
        a: float,
        b: float,
        degree: int = 4,
        vanish_at_a: bool = False,
        npts: int = 401,
    ) -> "SampledFunction":
        """Random polynomial in the shifted variable (s - a); optionally zero at a."""
        coeffs = rng.standard_normal((degree + 1, n))
        if vanish_at_a:
            coeffs[0] = 0.0

        def fn(s: np.ndarray) -> np.ndarray:
            powers = np.vander(np.asarray(s) - a, coeffs.shape[0], increasing=True)
            return powers @ coeffs

        dcoeffs = coeffs[1:] * np.arange(1, degree + 1)[:, None]

        def dfn(s: np.ndarray) -> np.ndarray:
            powers = np.vander(np.asarray(s) - a, dcoeffs.shape[0], increasing=True)
            return powers @ dcoeffs

        return cls(a, b, fn, dfn, npts)

    @classmethod
    def quarter_sine(cls, a: float, b: float, npts: int = 401) -> "SampledFunction":
        """The extremal shape of the vanishing-endpoint integral inequality."""
        w = 0.5 * np.pi / (b - a)
        return cls(
            a,
            b,
            lambda s: np.sin(w * (np.asarray(s) - a))[:, None],
            lambda s: (w * np.cos(w * (np.asarray(s) - a)))[:, None],
            npts,
        )


def _quad_form_integral(sf: SampledFunction, R: np.ndarray, use_derivs: bool) -> float:
    vals = sf.derivs if use_derivs else sf.values
    integrand = np.einsum("ti,ij,tj->t", vals, R, vals)
    return float(simpson(integrand, x=sf.grid))


def check_wirtinger_inequality(z: SampledFunction, R: np.ndarray) -> float:
    """Slack of the vanishing-endpoint integral inequality (must be >= ~0).

    For differentiable z with z(a) = 0 and R >= 0:
    (pi^2/4) * int z'Rz <= (b-a)^2 * int zdot' R zdot.
    Returns RHS - LHS via composite Simpson.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.max(np.abs(z.at(z.a))) > 1e-12:
        raise ValueError("the bound requires z(a) = 0 exactly")
    lhs = (np.pi**2 / 4.0) * _quad_form_integral(z, R, use_derivs=False)
    rhs = (z.b - z.a) ** 2 * _quad_form_integral(z, R, use_derivs=True)
    return rhs - lhs


def check_extended_jensen_inequality(x: SampledFunction, R: np.ndarray) -> float:
    """Slack of the two-term integral lower bound (must be >= ~0).

    int xdot' R xdot >= (1/(b-a)) [d0; d1]' diag(R, 3R) [d0; d1] with
    d0 the endpoint difference and d1 the endpoint sum minus twice the mean.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    width = x.b - x.a
    xa, xb = x.at(x.a), x.at(x.b)
    mean = x.integral(x.b, x.a) / width
    d0 = xb - xa
    d1 = xb + xa - 2.0 * mean
    bound = (d0 @ R @ d0 + 3.0 * (d1 @ R @ d1)) / width
    return _quad_form_integral(x, R, use_derivs=True) - bound


def check_reciprocally_convex_inequality(
    deltas: Sequence[np.ndarray],
    rhat: np.ndarray,
    g: np.ndarray,
    lengths: Sequence[float],
) -> float:
    """Slack of the reciprocally convex combination bound (must be >= ~0).

    ``deltas`` holds the d+1 segment vectors, ``lengths`` the segment
    durations (positive, summing to the window length).  The cross-matrix
    hypothesis is checked and enforced.
    """
    deltas = [np.asarray(v, dtype=float) for v in deltas]
    lengths = np.asarray(lengths, dtype=float)
    if len(deltas) != lengths.size or len(deltas) < 2:
        raise ValueError("need one segment vector per length, at least two")
    if np.any(lengths <= 0):
        raise ValueError("segment lengths must be positive")
    cross = np.block([[rhat, g], [g.T, rhat]])
    if np.linalg.eigvalsh(cross).min() < -1e-10:
        raise ValueError("cross-matrix condition violated; the bound's hypothesis fails")
    d = len(deltas) - 1
    tau = float(lengths.sum())
    lhs = tau * sum(float(v @ rhat @ v) / l for v, l in zip(deltas, lengths))
    psi = reciprocally_convex_bound(rhat, g, d)
    stacked = np.concatenate(deltas)
    return lhs - float(stacked @ psi @ stacked)


def check_discounted_window_bound(
    x: SampledFunction,
    R: np.ndarray,
    G: np.ndarray,
    alpha: float,
    d: int,
    delta: float,
    k: int,
    t: float,
) -> float:
    """Signed residual of the discounted bound along one trajectory window.

    Returns ``xi' PsiBar xi - tau * int e^{2 alpha (s-t)} xdot' R xdot`` over
    the window [t - d*delta, t]; the bound says this is <= 0 (up to
    quadrature error).  ``t`` must lie strictly inside the sampling interval
    (k*delta, (k+1)*delta) and the window must not extend before the
    function's domain.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = R.shape[0]
    tau = d * delta
    t_k = k * delta
    if not (t_k < t < t_k + delta):
        raise ValueError("t must lie strictly inside its sampling interval")
    if t - tau < x.a - 1e-12 or t - tau < -1e-12:
        raise ValueError("window extends before the trajectory domain")
    rhat = np.block([[R, np.zeros((n, n))], [np.zeros((n, n)), 3.0 * R]])
    cross = np.block([[rhat, G], [G.T, rhat]])
    if np.linalg.eigvalsh(cross).min() < -1e-10:
        raise ValueError("cross-matrix condition violated; the bound's hypothesis fails")

    nodes = [t] + [(k - v) * delta for v in range(d)] + [t - tau]
    states = [x.at(s) for s in nodes]
    averages = []
    for p, q in zip(nodes[:-1], nodes[1:]):
        averages.append(2.0 / (p - q) * x.integral(p, q, npts=201))
    xi = np.concatenate(states[:1] + states[1:-1] + [states[-1]] + averages)

    selector = build_difference_selector(d, n)
    psi = reciprocally_convex_bound(rhat, G, d)
    pbar, _ = discounted_selector_bound(alpha, tau, selector, psi)
    quad = float(xi @ pbar @ xi)

    grid = np.linspace(t - tau, t, 801)
    xd = np.atleast_2d(x.dfn(grid).T).T
    integrand = np.exp(2.0 * alpha * (grid - t)) * np.einsum("ti,ij,tj->t", xd, R, xd)
    integral = tau * float(simpson(integrand, x=grid))
    return quad - integral


# ---------------------------------------------------------------------------
# Random data generators
# ---------------------------------------------------------------------------


def random_psd(n: int, rng: np.random.Generator) -> np.ndarray:
    M = rng.standard_normal((n, n))
    return M.T @ M + 1e-6 * np.eye(n)


def random_rc_pair(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weight R, its doubled form, and a cross matrix shrunk into validity."""
    R = random_psd(n, rng)
    rhat = np.block([[R, np.zeros((n, n))], [np.zeros((n, n)), 3.0 * R]])
    G = rng.standard_normal((2 * n, 2 * n)) * float(np.max(np.abs(rhat)))
    while np.linalg.eigvalsh(np.block([[rhat, G], [G.T, rhat]])).min() < 0.0:
        G *= 0.99
    return R, rhat, G


def random_input_transform(B: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random invertible completion normalizing the input channel.

    Any valid transform is the canonical one plus an arbitrary combination
    of the null-space rows on top, and an invertible recombination of the
    null-space rows at the bottom.
    """
    from scipy.linalg import null_space

    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    base_top = np.linalg.solve(B.T @ B, B.T)
    nb = null_space(B.T)  # n x (n - m)
    top = base_top + rng.standard_normal((m, n - m)) @ nb.T
    while True:
        Qm = rng.standard_normal((n - m, n - m))
        if n == m or np.linalg.cond(Qm) < 1e6:
            break
    T = np.vstack([top, Qm @ nb.T])
    target = np.vstack([np.eye(m), np.zeros((n - m, m))])
    if np.max(np.abs(T @ B - target)) > 1e-8 or abs(np.linalg.det(T)) < 1e-12:
        raise RuntimeError("random transform generation failed")
    return T


@dataclass(frozen=True)
class TInvarianceReport:
    gamma_base: float
    gamma_alternatives: tuple[float, ...]
    feasible: tuple[bool, ...]
    max_rel_deviation: float
    ok: bool


def check_transform_invariance(
    sys: LargeScaleSystem,
    params: SynthesisParams | None = None,
    n_alternatives: int = 5,
    rel_tol: float = 0.005,
    seed: int = 0,
) -> TInvarianceReport:
    """Re-solve the synthesis under random valid input transforms.

    Feasibility and the optimal level must not depend on the transform
    choice; disagreement beyond ``rel_tol`` flags an assembly bug.
    """
    from .sdp import SynthesisError, minimize_gamma

    params = params or SynthesisParams()
    rng = np.random.default_rng(seed)
    base = minimize_gamma(sys, params)
    gammas, feas = [], []
    for _ in range(n_alternatives):
        transforms = [
            random_input_transform(sys.subsystem(i).B, rng) for i in range(1, sys.N + 1)
        ]
        try:
            res = minimize_gamma(sys, params, transforms=transforms)
            gammas.append(res.gamma)
            feas.append(True)
        except SynthesisError:
            gammas.append(float("nan"))
            feas.append(False)
    devs = [abs(g - base.gamma) / base.gamma for g in gammas if np.isfinite(g)]
    max_dev = max(devs) if devs else float("inf")
    ok = all(feas) and max_dev <= rel_tol
    return TInvarianceReport(
        gamma_base=base.gamma,
        gamma_alternatives=tuple(gammas),
        feasible=tuple(feas),
        max_rel_deviation=max_dev,
        ok=ok,
    )
