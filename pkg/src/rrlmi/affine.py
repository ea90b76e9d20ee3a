"""Matrix-valued affine expressions over a flat decision vector.

An :class:`AffineMatrix` is ``const + sum_k v[k] * coeff_k`` where ``v`` is
the flat decision vector of an optimization problem.  Expressions compose
with +, -, scalar *, @ (against constant ndarrays on either side), transpose
and block assembly, which lets constraint matrices be written the same way
their closed-form definitions read.  Coefficients are dense; the matrices
involved here are small (tens of rows).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AffineMatrix", "bmat", "block_diag", "he", "AffinePsdConstraint"]


class AffineMatrix:
    __slots__ = ("shape", "const", "terms")

    # make ndarray @ affine / ndarray + affine defer to the reflected methods
    __array_ufunc__ = None

    def __init__(self, const: np.ndarray, terms: dict[int, np.ndarray] | None = None):
        const = np.asarray(const, dtype=float)
        if const.ndim != 2:
            raise ValueError(f"const must be 2-D, got shape {const.shape}")
        self.const = const
        self.shape = const.shape
        self.terms = {int(k): np.asarray(c, dtype=float) for k, c in (terms or {}).items()}
        for k, c in self.terms.items():
            if c.shape != self.shape:
                raise ValueError(f"coefficient {k} has shape {c.shape}, expected {self.shape}")

    # -- construction -------------------------------------------------------

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "AffineMatrix":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "AffineMatrix":
        """Variable atom: entry (a, b) is the decision variable ``grid[a, b]``.

        Repeated indices (e.g. the two mirrored entries of a symmetric
        matrix) share one flat variable.
        """
        grid = np.asarray(grid)
        out = cls.zeros(*grid.shape)
        for (a, b), idx in np.ndenumerate(grid):
            coef = out.terms.setdefault(int(idx), np.zeros(grid.shape))
            coef[a, b] += 1.0
        return out

    @staticmethod
    def wrap(obj, shape=None) -> "AffineMatrix":
        if isinstance(obj, AffineMatrix):
            return obj
        arr = np.asarray(obj, dtype=float)
        if arr.ndim == 0:
            if shape is None:
                raise ValueError("cannot infer the shape of a scalar block")
            arr = np.full(shape, float(arr)) if float(arr) != 0 else np.zeros(shape)
        return AffineMatrix(arr)

    # -- algebra ------------------------------------------------------------

    def __add__(self, other) -> "AffineMatrix":
        other = AffineMatrix.wrap(other, self.shape)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch: {self.shape} + {other.shape}")
        terms = {k: c.copy() for k, c in self.terms.items()}
        for k, c in other.terms.items():
            terms[k] = terms[k] + c if k in terms else c
        return AffineMatrix(self.const + other.const, terms)

    __radd__ = __add__

    def __neg__(self) -> "AffineMatrix":
        return AffineMatrix(-self.const, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other) -> "AffineMatrix":
        return self + (-AffineMatrix.wrap(other, self.shape))

    def __rsub__(self, other) -> "AffineMatrix":
        return AffineMatrix.wrap(other, self.shape) + (-self)

    def __mul__(self, scalar) -> "AffineMatrix":
        s = float(scalar)
        return AffineMatrix(s * self.const, {k: s * c for k, c in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, other) -> "AffineMatrix":
        if isinstance(other, AffineMatrix):
            raise TypeError("product of two affine expressions is not affine")
        other = np.asarray(other, dtype=float)
        return AffineMatrix(self.const @ other, {k: c @ other for k, c in self.terms.items()})

    def __rmatmul__(self, other) -> "AffineMatrix":
        other = np.asarray(other, dtype=float)
        return AffineMatrix(other @ self.const, {k: other @ c for k, c in self.terms.items()})

    @property
    def T(self) -> "AffineMatrix":
        return AffineMatrix(self.const.T, {k: c.T for k, c in self.terms.items()})

    def __getitem__(self, key) -> "AffineMatrix":
        return AffineMatrix(self.const[key], {k: c[key] for k, c in self.terms.items()})

    def materialize(self, v: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for k, c in self.terms.items():
            out += v[k] * c
        return out

    def to_psd_constraint(self, label: str, sense: str = "psd") -> "AffinePsdConstraint":
        """Symmetrize and wrap as a one-sided semidefinite constraint."""
        return AffinePsdConstraint(
            label=label,
            const=_symmetrize(self.const, label),
            terms={k: _symmetrize(c, label) for k, c in self.terms.items()},
            sense=sense,
        )


def _symmetrize(M: np.ndarray, label: str) -> np.ndarray:
    skew = np.max(np.abs(M - M.T)) if M.size else 0.0
    if skew > 1e-9 * (1.0 + np.max(np.abs(M))):
        raise ValueError(f"{label}: matrix is not symmetric (skew {skew:.3e})")
    return 0.5 * (M + M.T)


def bmat(blocks) -> "AffineMatrix | np.ndarray":
    """Assemble a block matrix; literal 0 blocks get their shape inferred.

    Returns a plain ndarray when no block is affine.
    """
    nrows = len(blocks)
    ncols = len(blocks[0])
    heights = [None] * nrows
    widths = [None] * ncols
    for r, row in enumerate(blocks):
        if len(row) != ncols:
            raise ValueError("ragged block structure")
        for c, blk in enumerate(row):
            if np.isscalar(blk) and blk == 0:
                continue
            shape = blk.shape
            if heights[r] is None:
                heights[r] = shape[0]
            elif heights[r] != shape[0]:
                raise ValueError(f"row {r}: inconsistent block heights")
            if widths[c] is None:
                widths[c] = shape[1]
            elif widths[c] != shape[1]:
                raise ValueError(f"column {c}: inconsistent block widths")
    if any(h is None for h in heights) or any(w is None for w in widths):
        raise ValueError("block shape cannot be inferred (a full zero row/column)")

    any_affine = any(isinstance(b, AffineMatrix) for row in blocks for b in row)
    if not any_affine:
        return np.block(
            [
                [
                    np.zeros((heights[r], widths[c])) if np.isscalar(blk) else np.asarray(blk)
                    for c, blk in enumerate(row)
                ]
                for r, row in enumerate(blocks)
            ]
        )

    r_edges = np.concatenate([[0], np.cumsum(heights)])
    c_edges = np.concatenate([[0], np.cumsum(widths)])
    out = AffineMatrix.zeros(int(r_edges[-1]), int(c_edges[-1]))
    for r, row in enumerate(blocks):
        rs = slice(int(r_edges[r]), int(r_edges[r + 1]))
        for c, blk in enumerate(row):
            if np.isscalar(blk):
                continue
            cs = slice(int(c_edges[c]), int(c_edges[c + 1]))
            blk = AffineMatrix.wrap(blk)
            out.const[rs, cs] = blk.const
            for k, coef in blk.terms.items():
                big = out.terms.setdefault(k, np.zeros(out.shape))
                big[rs, cs] += coef
    return out


def block_diag(blocks) -> "AffineMatrix | np.ndarray":
    n = len(blocks)
    return bmat([[blocks[r] if r == c else 0 for c in range(n)] for r in range(n)])


def he(M):
    """Symmetric part doubled: M + M^T (for ndarray or affine input)."""
    return M + M.T


@dataclass(frozen=True)
class AffinePsdConstraint:
    """One-sided semidefinite constraint on an affine matrix expression.

    ``sense == "psd"`` requires ``const + sum v[k] coeff_k >= 0`` in the
    Loewner order; ``sense == "nsd"`` requires ``... <= 0``.  Any margin
    (epsilon shift) is folded into ``const`` by the assembler.
    """

    label: str
    const: np.ndarray
    terms: dict[int, np.ndarray]
    sense: str = "psd"

    def __post_init__(self):
        if self.sense not in ("psd", "nsd"):
            raise ValueError(f"sense must be 'psd' or 'nsd', got {self.sense!r}")
        dim = self.const.shape[0]
        if self.const.shape != (dim, dim):
            raise ValueError("constraint constant must be square")
        for k, c in self.terms.items():
            if c.shape != (dim, dim):
                raise ValueError(f"{self.label}: coefficient {k} has wrong shape {c.shape}")

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    @property
    def sign(self) -> float:
        return 1.0 if self.sense == "psd" else -1.0

    def materialize(self, v: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for k, c in self.terms.items():
            out += v[k] * c
        return out

    def min_eig(self, v: np.ndarray) -> float:
        """Smallest eigenvalue after sign normalization (>= 0 when satisfied)."""
        return float(np.linalg.eigvalsh(self.sign * self.materialize(v)).min())
