"""Data model for networks of coupled linear subsystems sharing a sampled link.

A :class:`LargeScaleSystem` bundles N :class:`SubsystemModel` instances with,
per subsystem, an *ordered* neighbor list and the common sampling period of
the communication link.  Construction only coerces and freezes the matrices;
:func:`validate_system` reports every violated structural rule instead of
raising on the first one, so callers get a complete diagnosis.

Two builtin benchmark families are provided: a homogeneous parameterised
chain (:func:`example2_system`) and a heterogeneous 100-subsystem chain with
open-loop unstable members (:func:`example4_system`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "SubsystemModel",
    "LargeScaleSystem",
    "SynthesisParams",
    "validate_system",
    "build_chain_system",
    "example2_system",
    "example4_system",
    "system_to_json",
    "system_from_json",
    "save_system",
    "load_system",
]


def _matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SubsystemModel:
    """One subsystem: local dynamics, neighbor couplings and channel matrices.

    Parameters
    ----------
    index : int
        1-based position of the subsystem in the network.
    A : (n, n) array_like
        Local state matrix.
    coupling : mapping int -> (n, n_j) array_like
        Influence of each neighbor's state on this subsystem.
    B : (n, m) array_like
        Control input channel; must have full column rank.
    E : (n, p) array_like
        Disturbance channel.
    C : (q, n) array_like
        Performance output map.
    F : (q, p) array_like
        Disturbance feedthrough into the performance output.
    """

    index: int
    A: np.ndarray
    coupling: Mapping[int, np.ndarray]
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _matrix(self.A, "A"))
        object.__setattr__(self, "B", _matrix(self.B, "B"))
        object.__setattr__(self, "E", _matrix(self.E, "E"))
        object.__setattr__(self, "C", _matrix(self.C, "C"))
        object.__setattr__(self, "F", _matrix(self.F, "F"))
        object.__setattr__(
            self,
            "coupling",
            {int(j): _matrix(v, f"coupling[{j}]") for j, v in dict(self.coupling).items()},
        )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.E.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class LargeScaleSystem:
    """Interconnection of subsystems plus the sampled-link period.

    ``neighbor_sets[i-1]`` is the *ordered* neighbor list of subsystem ``i``;
    the order is load-bearing because the polling schedule cycles through it.
    """

    subsystems: Sequence[SubsystemModel]
    neighbor_sets: Sequence[Sequence[int]]
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        object.__setattr__(
            self, "neighbor_sets", tuple(tuple(int(j) for j in s) for s in self.neighbor_sets)
        )
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def N(self) -> int:
        return len(self.subsystems)

    def subsystem(self, i: int) -> SubsystemModel:
        return self.subsystems[i - 1]

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.neighbor_sets[i - 1]

    def degree(self, i: int) -> int:
        return len(self.neighbor_sets[i - 1])

    def polling_period(self, i: int) -> float:
        """Time between two polls of the same neighbor of subsystem ``i``."""
        return self.degree(i) * self.delta

    def neighbor_state_dim(self, i: int) -> int:
        """Total state dimension of subsystem ``i``'s neighbors, in set order."""
        return sum(self.subsystem(j).n for j in self.neighbors(i))

    def coupling_row(self, i: int) -> np.ndarray:
        """Horizontal stack of the coupling blocks of ``i`` in neighbor order."""
        sub = self.subsystem(i)
        return np.hstack([sub.coupling[j] for j in self.neighbors(i)])

    def state_offsets(self) -> np.ndarray:
        """Start offset of each subsystem's state in the stacked state vector."""
        dims = [sub.n for sub in self.subsystems]
        return np.concatenate([[0], np.cumsum(dims)])

    @property
    def total_state_dim(self) -> int:
        return sum(sub.n for sub in self.subsystems)

    def state_slice(self, i: int) -> slice:
        offs = self.state_offsets()
        return slice(int(offs[i - 1]), int(offs[i]))

    def interconnection_matrix(self) -> np.ndarray:
        """Assembled open-loop state matrix with couplings in place."""
        offs = self.state_offsets()
        A = np.zeros((self.total_state_dim, self.total_state_dim))
        for i, sub in enumerate(self.subsystems, start=1):
            A[self.state_slice(i), self.state_slice(i)] = sub.A
            for j, blk in sub.coupling.items():
                A[self.state_slice(i), self.state_slice(j)] = blk
        return A


@dataclass(frozen=True)
class SynthesisParams:
    """Scalar knobs of the gain synthesis.

    ``gamma=None`` asks for minimization of the attenuation level; a positive
    float requests a pure feasibility check at that level.  ``alpha`` and
    ``h`` may be scalars (broadcast over subsystems) or per-subsystem
    sequences.  ``epsilon`` converts the strict matrix inequalities into
    margins the conic solver can represent.

    ``multiplier_structure`` selects how the slack multipliers acting on the
    neighbor-state and held-sample channels are completed.  With
    ``"shared_corner"`` they carry the same invertible corner as the local
    multipliers, which injects the gain products into the neighbor rows of
    the main block; that joint problem is degenerate (for the builtin
    benchmark families it is provably marginally infeasible, see the
    numerical notes in the README).  The default ``"decoupled"`` zeroes
    those corners, which keeps the derivation exact, the problem linear and
    well posed, and the recovered gains certified.
    """

    gamma: float | None = None
    alpha: float | Sequence[float] = 0.4
    h: float | Sequence[float] = 0.1
    epsilon: float = 1e-6
    multiplier_structure: str = "decoupled"

    def resolve(self, sys: LargeScaleSystem) -> tuple[np.ndarray, np.ndarray]:
        """Broadcast ``alpha`` and ``h`` to per-subsystem arrays."""
        alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (sys.N,)).copy()
        h = np.broadcast_to(np.asarray(self.h, dtype=float), (sys.N,)).copy()
        return alpha, h

    def validate(self, sys: LargeScaleSystem) -> list[str]:
        """Return all violated parameter rules (empty list means valid)."""
        problems: list[str] = []
        if self.epsilon <= 0:
            problems.append(f"epsilon must be positive, got {self.epsilon}")
        if self.gamma is not None and self.gamma <= 0:
            problems.append(f"gamma must be positive, got {self.gamma}")
        if self.multiplier_structure not in ("decoupled", "shared_corner"):
            problems.append(
                f"multiplier_structure must be 'decoupled' or 'shared_corner', "
                f"got {self.multiplier_structure!r}"
            )
        try:
            alpha, h = self.resolve(sys)
        except ValueError:
            return problems + ["alpha/h length does not match the number of subsystems"]
        for i in range(1, sys.N + 1):
            a_i, h_i, d_i = alpha[i - 1], h[i - 1], sys.degree(i)
            if a_i <= 0:
                problems.append(f"subsystem {i}: alpha must be positive, got {a_i}")
            if not (0 < h_i < 2 * a_i / max(d_i, 1)):
                problems.append(
                    f"subsystem {i}: h must satisfy 0 < h < 2*alpha/d "
                    f"(h={h_i}, bound={2 * a_i / max(d_i, 1)})"
                )
        return problems


def validate_system(sys: LargeScaleSystem) -> list[str]:
    """Check every structural invariant; return one message per violation.

    A valid system returns an empty list.  Messages carry the subsystem
    index so callers can report precisely.
    """
    problems: list[str] = []
    N = sys.N
    if N == 0:
        return ["system has no subsystems"]
    if not sys.delta > 0:
        problems.append(f"sampling period must be positive, got {sys.delta}")
    if len(sys.neighbor_sets) != N:
        problems.append("neighbor_sets length does not match subsystem count")
        return problems

    for i in range(1, N + 1):
        sub = sys.subsystem(i)
        nbrs = sys.neighbors(i)
        n, m = sub.n, sub.m
        if sub.index != i:
            problems.append(f"subsystem {i}: stored index {sub.index} does not match position")
        if sub.A.shape != (n, n):
            problems.append(f"subsystem {i}: A must be square")
        if sub.B.shape[0] != n or sub.E.shape[0] != n:
            problems.append(f"subsystem {i}: B/E row count must equal the state dimension")
        if sub.C.shape[1] != n:
            problems.append(f"subsystem {i}: C column count must equal the state dimension")
        if sub.F.shape != (sub.q, sub.p):
            problems.append(f"subsystem {i}: F must be {sub.q}x{sub.p}, got {sub.F.shape}")
        if m > n:
            problems.append(f"subsystem {i}: more inputs ({m}) than states ({n})")
        elif np.linalg.matrix_rank(sub.B) < m:
            problems.append(f"subsystem {i}: B not full column rank")

        if len(nbrs) == 0:
            problems.append(f"subsystem {i}: empty neighbor set (polling needs at least one)")
        if len(set(nbrs)) != len(nbrs):
            problems.append(f"subsystem {i}: duplicate neighbor in ordered set {nbrs}")
        for j in nbrs:
            if not 1 <= j <= N:
                problems.append(f"subsystem {i}: neighbor {j} outside 1..{N}")
            elif j == i:
                problems.append(f"subsystem {i}: self-loop neighbor")
        if set(sub.coupling) != {j for j in nbrs if 1 <= j <= N and j != i}:
            problems.append(
                f"subsystem {i}: coupling blocks {sorted(sub.coupling)} do not match "
                f"neighbor set {nbrs}"
            )
        for j, blk in sub.coupling.items():
            if 1 <= j <= N and blk.shape != (n, sys.subsystem(j).n):
                problems.append(
                    f"subsystem {i}: coupling to {j} must be {n}x{sys.subsystem(j).n}, "
                    f"got {blk.shape}"
                )
    return problems


def build_chain_system(
    N: int,
    maker: Callable[[int, tuple[int, ...]], SubsystemModel],
    delta: float,
) -> LargeScaleSystem:
    """Assemble a bidirectional chain: 1 - 2 - ... - N.

    ``maker(i, neighbors)`` must return the subsystem at position ``i`` with
    coupling blocks for exactly the given neighbors.  End subsystems have one
    neighbor, interior ones two, listed as (i-1, i+1).
    """
    if N < 2:
        raise ValueError(f"a chain needs at least 2 subsystems, got {N}")
    neighbor_sets: list[tuple[int, ...]] = []
    for i in range(1, N + 1):
        if i == 1:
            nbrs: tuple[int, ...] = (2,)
        elif i == N:
            nbrs = (N - 1,)
        else:
            nbrs = (i - 1, i + 1)
        neighbor_sets.append(nbrs)
    subsystems = [maker(i, neighbor_sets[i - 1]) for i in range(1, N + 1)]
    return LargeScaleSystem(subsystems, neighbor_sets, delta)


def example2_system(a: float = 0.0, N: int = 10, delta: float = 0.0005) -> LargeScaleSystem:
    """Homogeneous benchmark chain parameterised by the scalar ``a``.

    Every subsystem has two states; the local matrix stiffens with the node
    degree while each neighbor contributes the same off-diagonal block.
    """
    A_a = np.array([[-0.7 + a, -0.1], [0.0, -0.8 + 0.1 * a]])
    A_b = np.array([[-0.2, -0.1 + 0.2 * a], [0.0, -0.1]])
    B = np.array([[-0.4], [0.1]])
    E = np.array([[0.1], [-0.2]])
    C = np.array([[0.1, 0.0]])
    F = np.array([[2.0]])

    def maker(i: int, nbrs: tuple[int, ...]) -> SubsystemModel:
        A_ii = A_a + len(nbrs) * A_b
        return SubsystemModel(
            index=i,
            A=A_ii,
            coupling={j: -A_b for j in nbrs},
            B=B,
            E=E,
            C=C,
            F=F,
        )

    return build_chain_system(N, maker, delta)


def example4_system(N: int = 100, delta: float = 0.0005) -> LargeScaleSystem:
    """Heterogeneous benchmark chain with mod-arithmetic entries.

    Subsystems at positions congruent to 3 mod 4 carry an unstable local
    mode.  ``N`` defaults to the full 100-subsystem network; smaller values
    truncate the chain while keeping the per-index definitions.
    """

    def maker(i: int, nbrs: tuple[int, ...]) -> SubsystemModel:
        offdiag = i / (5 * i + 1)
        lower = (i % 4 - 15) / 10
        if i % 4 == 3:
            A_ii = np.array([[(2 + i % 3) / 10, offdiag], [0.0, lower]])
        else:
            A_ii = np.array([[(i % 3 - 20) / 10, offdiag], [0.0, lower]])
        A_ij = np.array([[(i % 3) / 10, (i % 4) / 10], [0.0, 0.1]])
        return SubsystemModel(
            index=i,
            A=A_ii,
            coupling={j: A_ij for j in nbrs},
            B=np.array([[-0.4], [0.1]]),
            E=np.array([[(i % 6) / 10], [0.0]]),
            C=np.array([[(i % 5) / 10, 0.1]]),
            F=np.array([[(i % 8) / 10]]),
        )

    return build_chain_system(N, maker, delta)


# ---------------------------------------------------------------------------
# JSON serialization.  Matrices are row-major nested lists, subsystem and
# neighbor indices are 1-based, and the neighbor order in the file is the
# ordered polling set.
# ---------------------------------------------------------------------------


def system_to_json(sys: LargeScaleSystem) -> dict:
    subsystems = []
    for i in range(1, sys.N + 1):
        sub = sys.subsystem(i)
        subsystems.append(
            {
                "A": sub.A.tolist(),
                "B": sub.B.tolist(),
                "E": sub.E.tolist(),
                "C": sub.C.tolist(),
                "F": sub.F.tolist(),
                "neighbors": [
                    {"j": j, "Aij": sub.coupling[j].tolist()} for j in sys.neighbors(i)
                ],
            }
        )
    return {"delta": sys.delta, "subsystems": subsystems}


def system_from_json(data: dict) -> LargeScaleSystem:
    subsystems = []
    neighbor_sets = []
    for pos, entry in enumerate(data["subsystems"], start=1):
        nbrs = tuple(int(item["j"]) for item in entry["neighbors"])
        coupling = {int(item["j"]): item["Aij"] for item in entry["neighbors"]}
        subsystems.append(
            SubsystemModel(
                index=pos,
                A=entry["A"],
                coupling=coupling,
                B=entry["B"],
                E=entry["E"],
                C=entry["C"],
                F=entry["F"],
            )
        )
        neighbor_sets.append(nbrs)
    return LargeScaleSystem(subsystems, neighbor_sets, float(data["delta"]))


def save_system(sys: LargeScaleSystem, path) -> None:
    with open(path, "w") as f:
        json.dump(system_to_json(sys), f, indent=2)


def load_system(path) -> LargeScaleSystem:
    with open(path) as f:
        return system_from_json(json.load(f))
