"""Decision-variable layout and affine semidefinite constraint assembly.

The synthesis certificate consists, per subsystem, of Lyapunov-type weights
(P, Q, R, W), a cross matrix G certifying a reciprocally convex bound, four
structured multiplier matrices sharing a common invertible corner U, and the
gain pre-products X, Z from which the feedback gains are recovered as
``K_self = U^{-T} X`` and ``[K_j ...] = U^{-T} Z``.  One global scalar holds
the squared attenuation level.

Everything here produces :class:`~rrlmi.affine.AffinePsdConstraint` objects;
solving them is the job of :mod:`rrlmi.sdp`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import null_space

from .affine import AffineMatrix, AffinePsdConstraint, bmat, block_diag, he
from .model import LargeScaleSystem, SynthesisParams

__all__ = [
    "VariableLayout",
    "ControllerGains",
    "GainRecoveryError",
    "build_input_transform",
    "build_difference_selector",
    "reciprocally_convex_bound",
    "discounted_selector_bound",
    "assemble_rc_feasibility",
    "assemble_synthesis_block",
    "assemble_positivity",
    "assemble_synthesis_constraints",
    "recover_gains",
    "dump_constraints",
]


# ---------------------------------------------------------------------------
# Variable layout
# ---------------------------------------------------------------------------

_SYM = "sym"
_GEN = "gen"


@dataclass(frozen=True)
class _VarBlock:
    name: str
    subsystem: int
    shape: tuple[int, int]
    kind: str
    offset: int
    size: int


def _sym_size(n: int) -> int:
    return n * (n + 1) // 2


def _sym_grid(n: int, offset: int) -> np.ndarray:
    """Upper-triangle enumeration; mirrored entries share one index."""
    grid = np.zeros((n, n), dtype=int)
    pos = 0
    for a in range(n):
        for b in range(a, n):
            grid[a, b] = offset + pos
            grid[b, a] = offset + pos
            pos += 1
    return grid


class VariableLayout:
    """Flat decision vector layout for one joint synthesis problem.

    Per subsystem: symmetric P, Q, R, W (n x n); general G (2n x 2n),
    U (m x m), multiplier completion blocks L21/L22 and H21/H22 against the
    local state, M21/M22 and N21/N22 against the stacked neighbor states,
    and the gain pre-products X (m x n), Z (m x c) where c is the total
    neighbor state dimension.  One trailing scalar stores the squared
    attenuation level.
    """

    def __init__(self, sys: LargeScaleSystem):
        self.sys = sys
        self._blocks: dict[tuple[int, str], _VarBlock] = {}
        offset = 0
        for i in range(1, sys.N + 1):
            sub = sys.subsystem(i)
            n, m = sub.n, sub.m
            c = sys.neighbor_state_dim(i)
            if c < m:
                raise ValueError(
                    f"subsystem {i}: neighbor state dimension {c} smaller than "
                    f"input dimension {m}; the structured multipliers are undefined"
                )
            specs = [
                ("P", _SYM, (n, n)),
                ("Q", _SYM, (n, n)),
                ("R", _SYM, (n, n)),
                ("W", _SYM, (n, n)),
                ("G", _GEN, (2 * n, 2 * n)),
                ("U", _GEN, (m, m)),
                ("L21", _GEN, (n - m, m)),
                ("L22", _GEN, (n - m, n - m)),
                ("H21", _GEN, (n - m, m)),
                ("H22", _GEN, (n - m, n - m)),
                ("M21", _GEN, (n - m, m)),
                ("M22", _GEN, (n - m, c - m)),
                ("N21", _GEN, (n - m, m)),
                ("N22", _GEN, (n - m, c - m)),
                ("X", _GEN, (m, n)),
                ("Z", _GEN, (m, c)),
            ]
            for name, kind, shape in specs:
                size = _sym_size(shape[0]) if kind == _SYM else shape[0] * shape[1]
                self._blocks[(i, name)] = _VarBlock(name, i, shape, kind, offset, size)
                offset += size
        self.gamma_sq_index = offset
        self.n_vars = offset + 1

    def block(self, i: int, name: str) -> _VarBlock:
        return self._blocks[(i, name)]

    def index_grid(self, i: int, name: str) -> np.ndarray:
        blk = self._blocks[(i, name)]
        if blk.kind == _SYM:
            return _sym_grid(blk.shape[0], blk.offset)
        return blk.offset + np.arange(blk.size).reshape(blk.shape)

    def atom(self, i: int, name: str) -> AffineMatrix:
        return AffineMatrix.from_grid(self.index_grid(i, name))

    def value(self, v: np.ndarray, i: int, name: str) -> np.ndarray:
        return v[self.index_grid(i, name)]

    def gamma_sq(self, v: np.ndarray) -> float:
        return float(v[self.gamma_sq_index])

    def pack(self, values: Mapping[tuple[int, str], np.ndarray], gamma_sq: float = 0.0) -> np.ndarray:
        v = np.zeros(self.n_vars)
        for key, mat in values.items():
            grid = self.index_grid(*key)
            v[grid.ravel()] = np.asarray(mat, dtype=float).ravel()
        v[self.gamma_sq_index] = gamma_sq
        return v

    def unpack(self, v: np.ndarray) -> dict:
        out: dict = {key: v[self.index_grid(*key)] for key in self._blocks}
        out["gamma_sq"] = self.gamma_sq(v)
        return out


# ---------------------------------------------------------------------------
# Structural builders
# ---------------------------------------------------------------------------


def build_input_transform(B: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Invertible T with ``T @ B = [I; 0]``.

    The top rows are the left pseudo-inverse of B, the bottom rows an
    orthonormal basis of the null space of B^T (sign-normalized so the
    construction is deterministic).
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    sv = np.linalg.svd(B, compute_uv=False)
    if m == 0 or sv.min() <= max(n, m) * np.finfo(float).eps * sv.max() or sv.max() == 0.0:
        raise ValueError("B is rank deficient; no input-normalizing transform exists")
    top = np.linalg.solve(B.T @ B, B.T)
    bottom = null_space(B.T).T
    for r in range(bottom.shape[0]):
        lead = bottom[r, np.argmax(np.abs(bottom[r]) > 1e-12)]
        if lead < 0:
            bottom[r] *= -1.0
    T = np.vstack([top, bottom])
    target = np.vstack([np.eye(m), np.zeros((n - m, m))])
    if np.max(np.abs(T @ B - target)) > tol:
        raise ValueError("input transform failed its defining identity")
    return T


def build_difference_selector(d: int, n: int) -> np.ndarray:
    """Selector mapping the augmented trajectory vector to segment differences.

    The augmented vector stacks, for one subsystem with ``d`` neighbors and
    state dimension ``n``: the current state, the ``d`` most recent sampled
    states (new to old), the state one polling period ago, and the averaged
    integral of the state over each of the ``d+1`` segments in between.  The
    selector extracts, per segment, the endpoint difference and the
    endpoint sum minus the averaged integral.
    """
    if d < 1:
        raise ValueError(f"need at least one neighbor, got d={d}")
    rows, cols = 2 * (d + 1) * n, (2 * d + 3) * n
    Y = np.zeros((rows, cols))
    eye = np.eye(n)

    def col(b: int) -> slice:
        return slice(b * n, (b + 1) * n)

    for v in range(d + 1):
        start = 0 if v == 0 else v          # x(t) or sampled state v
        end = v + 1 if v < d else d + 1     # next sampled state or the delayed state
        integral = d + 2 + v                # averaged integral over this segment
        r0 = 2 * v * n
        Y[r0:r0 + n, col(start)] = eye
        Y[r0:r0 + n, col(end)] = -eye
        Y[r0 + n:r0 + 2 * n, col(start)] = eye
        Y[r0 + n:r0 + 2 * n, col(end)] = eye
        Y[r0 + n:r0 + 2 * n, col(integral)] = -eye
    return Y


def reciprocally_convex_bound(rhat, g, d: int):
    """Bound matrix of the reciprocally convex combination inequality.

    ``(d+1) x (d+1)`` blocks: ``rhat`` on the diagonal, the symmetric part of
    ``g`` on every off-diagonal block.  Works on plain arrays and on affine
    expressions alike.
    """
    if rhat.shape != g.shape:
        raise ValueError(f"rhat {rhat.shape} and g {g.shape} must have equal shapes")
    s = 0.5 * he(g)
    return bmat([[rhat if r == c else s for c in range(d + 1)] for r in range(d + 1)])


def discounted_selector_bound(alpha: float, tau: float, selector: np.ndarray, psi):
    """Pull the bound back through the selector with an exponential discount.

    Returns the full matrix ``exp(-2*alpha*tau) * Y^T psi Y`` together with
    its 4x4 partition into [current state | sampled states | delayed state |
    averaged integrals] row/column groups.
    """
    rows, cols = selector.shape
    n = cols - rows  # (2d+3)n - (2d+2)n
    if n <= 0 or cols % n or (cols // n - 3) % 2:
        raise ValueError(f"selector shape {selector.shape} is not a valid difference selector")
    d = (cols // n - 3) // 2
    full = float(np.exp(-2.0 * alpha * tau)) * (selector.T @ psi @ selector)
    sizes = [n, d * n, n, (d + 1) * n]
    edges = np.concatenate([[0], np.cumsum(sizes)])
    parts = [
        [full[edges[u]:edges[u + 1], edges[v]:edges[v + 1]] for v in range(4)]
        for u in range(4)
    ]
    return full, parts


def _symmetric_block_matrix(upper: dict, sizes: Sequence[int]):
    """Assemble a symmetric block matrix from its upper-triangle blocks."""
    nb = len(sizes)
    rows = []
    for r in range(nb):
        row = []
        for c in range(nb):
            if c >= r:
                row.append(upper.get((r, c), 0))
            else:
                blk = upper.get((c, r), 0)
                row.append(blk.T if not np.isscalar(blk) else 0)
        rows.append(row)
    # give zero rows/columns their shapes explicitly
    for r in range(nb):
        for c in range(nb):
            if np.isscalar(rows[r][c]):
                rows[r][c] = np.zeros((sizes[r], sizes[c]))
    return bmat(rows)


# ---------------------------------------------------------------------------
# Constraint assembly
# ---------------------------------------------------------------------------


def assemble_rc_feasibility(i: int, sys: LargeScaleSystem, layout: VariableLayout) -> AffinePsdConstraint:
    """Feasibility condition tying the cross matrix G to the weight R."""
    R = layout.atom(i, "R")
    G = layout.atom(i, "G")
    n = sys.subsystem(i).n
    rhat = bmat([[R, np.zeros((n, n))], [np.zeros((n, n)), 3.0 * R]])
    expr = bmat([[rhat, G], [G.T, rhat]])
    return expr.to_psd_constraint(f"rc_{i}", sense="psd")


def assemble_synthesis_block(
    i: int,
    sys: LargeScaleSystem,
    params: SynthesisParams,
    layout: VariableLayout,
    T: np.ndarray,
) -> AffinePsdConstraint:
    """Main synthesis block of subsystem ``i`` (required negative definite).

    The 8x8 block partition runs over [state derivative, current state,
    sampled states, delayed state, averaged integrals, neighbor states,
    held neighbor samples, disturbance].  Neighbor blocks couple the P and W
    variables of the neighbors, which is what makes the full problem one
    joint program.

    The multiplier families acting on the neighbor channels either share
    the invertible corner of the local multipliers (``shared_corner``, which
    also places the substituted gain products in the neighbor rows) or carry
    a structurally zero corner (``decoupled``, the default), in which case
    those products vanish identically and the gains enter through the local
    rows only.  Both follow from the same multiplier identity.
    """
    sub = sys.subsystem(i)
    nbrs = sys.neighbors(i)
    n, m, p = sub.n, sub.m, sub.p
    d = len(nbrs)
    c = sys.neighbor_state_dim(i)
    alpha, h = params.resolve(sys)
    tau = sys.polling_period(i)
    decay = float(np.exp(-2.0 * alpha[i - 1] * tau))
    sum_tau_sq = sum(sys.polling_period(j) ** 2 for j in nbrs)
    shared = params.multiplier_structure == "shared_corner"

    P = layout.atom(i, "P")
    Q = layout.atom(i, "Q")
    R = layout.atom(i, "R")
    W = layout.atom(i, "W")
    G = layout.atom(i, "G")
    U = layout.atom(i, "U")
    X = layout.atom(i, "X")
    Z = layout.atom(i, "Z")

    def completed(name21: str, name22: str, width: int, corner) -> AffineMatrix:
        return bmat(
            [
                [corner, np.zeros((m, width - m))],
                [layout.atom(i, name21), layout.atom(i, name22)],
            ]
        )

    L = completed("L21", "L22", n, U)
    H = completed("H21", "H22", n, U)
    nbr_corner = U if shared else np.zeros((m, m))
    M = completed("M21", "M22", c, nbr_corner)
    Nm = completed("N21", "N22", c, nbr_corner)

    xbar_n = bmat([[X], [np.zeros((n - m, n))]])
    zbar_n = bmat([[Z], [np.zeros((n - m, c))]])
    if shared:
        # substituted products of the neighbor-channel multipliers
        xbar_c_t = bmat([[X], [np.zeros((c - m, n))]]).T
        zbar_c = bmat([[Z], [np.zeros((c - m, c))]])
        he_zbar_c = he(zbar_c)
    else:
        xbar_c_t = AffineMatrix.zeros(n, c)
        zbar_c = AffineMatrix.zeros(c, c)
        he_zbar_c = AffineMatrix.zeros(c, c)

    rhat = bmat([[R, np.zeros((n, n))], [np.zeros((n, n)), 3.0 * R]])
    psi = reciprocally_convex_bound(rhat, G, d)
    selector = build_difference_selector(d, n)
    _, pb = discounted_selector_bound(alpha[i - 1], tau, selector, psi)

    omega1 = block_diag([h[j - 1] * layout.atom(j, "P") for j in nbrs])
    omega2 = block_diag([(np.pi**2 / 4.0) * layout.atom(j, "W") for j in nbrs])

    A = sub.A
    Ac = sys.coupling_row(i)
    E = sub.E
    Cm = sub.C
    F = sub.F

    LtT = L.T @ T
    HtT = H.T @ T
    MtT = M.T @ T
    NtT = Nm.T @ T

    upper = {
        (0, 0): tau**2 * R - he(LtT) + sum_tau_sq * W,
        (0, 1): P + LtT @ A + xbar_n - T.T @ H,
        (0, 5): LtT @ Ac - T.T @ M,
        (0, 6): zbar_n - T.T @ Nm,
        (0, 7): LtT @ E,
        (1, 1): he(xbar_n + HtT @ A) - pb[0][0] + 2.0 * alpha[i - 1] * P + Q + Cm.T @ Cm,
        (1, 2): -pb[0][1],
        (1, 3): -pb[0][2],
        (1, 4): -pb[0][3],
        (1, 5): HtT @ Ac + A.T @ (T.T @ M) + xbar_c_t,
        (1, 6): zbar_n + A.T @ (T.T @ Nm) + xbar_c_t,
        (1, 7): HtT @ E + Cm.T @ F,
        (2, 2): -pb[1][1],
        (2, 3): -pb[1][2],
        (2, 4): -pb[1][3],
        (3, 3): -pb[2][2] - decay * Q,
        (3, 4): -pb[2][3],
        (4, 4): -pb[3][3],
        (5, 5): -omega1 - omega2 + he(MtT @ Ac),
        (5, 6): omega2 + zbar_c + Ac.T @ (T.T @ Nm),
        (5, 7): MtT @ E,
        (6, 6): -omega2 + he_zbar_c,
        (6, 7): NtT @ E,
        (7, 7): AffineMatrix(F.T @ F, {layout.gamma_sq_index: -np.eye(p)}),
    }
    sizes = [n, n, d * n, n, (d + 1) * n, c, c, p]
    block = _symmetric_block_matrix(upper, sizes)
    expr = block + params.epsilon * np.eye(sum(sizes))
    return expr.to_psd_constraint(f"block_{i}", sense="nsd")


def assemble_positivity(i: int, sys: LargeScaleSystem, layout: VariableLayout, epsilon: float):
    """P and W strictly positive (with margin), Q and R merely semidefinite."""
    n = sys.subsystem(i).n
    eye = np.eye(n)
    out = [
        (layout.atom(i, "P") - epsilon * eye).to_psd_constraint(f"P_pos_{i}"),
        (layout.atom(i, "W") - epsilon * eye).to_psd_constraint(f"W_pos_{i}"),
        layout.atom(i, "Q").to_psd_constraint(f"Q_psd_{i}"),
        layout.atom(i, "R").to_psd_constraint(f"R_psd_{i}"),
    ]
    return out


def assemble_synthesis_constraints(
    sys: LargeScaleSystem,
    params: SynthesisParams,
    layout: VariableLayout,
    transforms: Sequence[np.ndarray],
) -> list[AffinePsdConstraint]:
    """All constraints of the joint synthesis program, in subsystem order."""
    constraints: list[AffinePsdConstraint] = []
    for i in range(1, sys.N + 1):
        constraints.append(assemble_rc_feasibility(i, sys, layout))
        constraints.append(assemble_synthesis_block(i, sys, params, layout, transforms[i - 1]))
        constraints.extend(assemble_positivity(i, sys, layout, params.epsilon))
    return constraints


# ---------------------------------------------------------------------------
# Gain recovery
# ---------------------------------------------------------------------------


class GainRecoveryError(RuntimeError):
    """The multiplier corner U is numerically singular; treat as infeasible."""


@dataclass(frozen=True)
class ControllerGains:
    """Recovered feedback gains of one subsystem."""

    index: int
    K_self: np.ndarray
    K_neighbors: dict[int, np.ndarray]


def recover_gains(
    sys: LargeScaleSystem,
    i: int,
    u: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
    cond_limit: float = 1e12,
) -> ControllerGains:
    """Invert the gain pre-products: ``K_self = U^{-T} X``, neighbors from Z."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    svals = np.linalg.svd(u, compute_uv=False)
    smin, smax = float(svals.min()), float(svals.max())
    if smin <= max(1.0, smax) / cond_limit:
        raise GainRecoveryError(
            f"subsystem {i}: multiplier corner is numerically singular "
            f"(singular values in [{smin:.3e}, {smax:.3e}]); "
            "the certificate is infeasible in practice"
        )
    K_self = np.linalg.solve(u.T, np.atleast_2d(x))
    K_all = np.linalg.solve(u.T, np.atleast_2d(z))
    K_neighbors: dict[int, np.ndarray] = {}
    col = 0
    for j in sys.neighbors(i):
        nj = sys.subsystem(j).n
        K_neighbors[j] = K_all[:, col:col + nj]
        col += nj
    return ControllerGains(index=i, K_self=K_self, K_neighbors=K_neighbors)


# ---------------------------------------------------------------------------
# Debug dump
# ---------------------------------------------------------------------------


def dump_constraints(constraints: Sequence[AffinePsdConstraint], path) -> None:
    """Write constraints as dense constants plus sparse coefficient triplets.

    Line format (whitespace separated):
      constraint <label> <sense> <dim>
      const <row> <col> <value>      for every nonzero of the constant
      coeff <var> <row> <col> <value> for every nonzero coefficient entry
    """
    with open(path, "w") as f:
        f.write("# affine psd constraint dump: one 'constraint' header per block,\n")
        f.write("# 'const r c value' and 'coeff var r c value' entries follow.\n")
        for con in constraints:
            f.write(f"constraint {con.label} {con.sense} {con.dim}\n")
            for (r, c), val in np.ndenumerate(con.const):
                if val != 0.0:
                    f.write(f"const {r} {c} {float(val)!r}\n")
            for k in sorted(con.terms):
                coef = con.terms[k]
                for (r, c), val in np.ndenumerate(coef):
                    if val != 0.0:
                        f.write(f"coeff {k} {r} {c} {float(val)!r}\n")
