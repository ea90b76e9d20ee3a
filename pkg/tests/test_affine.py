import numpy as np
import pytest

from rrlmi.affine import AffineMatrix, AffinePsdConstraint, bmat, block_diag, he


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_affine(rng, shape, n_vars=7, n_terms=3):
    terms = {
        int(k): rng.standard_normal(shape)
        for k in rng.choice(n_vars, size=n_terms, replace=False)
    }
    return AffineMatrix(rng.standard_normal(shape), terms), n_vars


class TestAlgebra:
    def test_materialize_matches_direct_sum(self, rng):
        expr, n_vars = random_affine(rng, (3, 4))
        v = rng.standard_normal(n_vars)
        direct = expr.const + sum(v[k] * c for k, c in expr.terms.items())
        assert np.allclose(expr.materialize(v), direct)

    def test_affine_combination_exact(self, rng):
        expr, n_vars = random_affine(rng, (4, 4))
        v1, v2 = rng.standard_normal(n_vars), rng.standard_normal(n_vars)
        lam = 0.3
        lhs = expr.materialize(lam * v1 + (1 - lam) * v2)
        rhs = lam * expr.materialize(v1) + (1 - lam) * expr.materialize(v2)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_matmul_both_sides(self, rng):
        expr, n_vars = random_affine(rng, (3, 3))
        L = rng.standard_normal((2, 3))
        R = rng.standard_normal((3, 5))
        v = rng.standard_normal(n_vars)
        assert np.allclose((L @ expr @ R).materialize(v), L @ expr.materialize(v) @ R)

    def test_transpose_and_he(self, rng):
        expr, n_vars = random_affine(rng, (4, 4))
        v = rng.standard_normal(n_vars)
        assert np.allclose(expr.T.materialize(v), expr.materialize(v).T)
        assert np.allclose(he(expr).materialize(v), expr.materialize(v) + expr.materialize(v).T)

    def test_add_sub_scalar(self, rng):
        a, n_vars = random_affine(rng, (2, 2))
        b, _ = random_affine(rng, (2, 2))
        v = rng.standard_normal(n_vars)
        assert np.allclose((a + b).materialize(v), a.materialize(v) + b.materialize(v))
        assert np.allclose((a - b).materialize(v), a.materialize(v) - b.materialize(v))
        assert np.allclose((2.5 * a).materialize(v), 2.5 * a.materialize(v))
        const = np.eye(2)
        assert np.allclose((a + const).materialize(v), a.materialize(v) + const)

    def test_product_of_affines_rejected(self, rng):
        a, _ = random_affine(rng, (2, 2))
        with pytest.raises(TypeError):
            a @ a

    def test_slicing(self, rng):
        expr, n_vars = random_affine(rng, (5, 6))
        v = rng.standard_normal(n_vars)
        sub = expr[1:4, 2:5]
        assert np.allclose(sub.materialize(v), expr.materialize(v)[1:4, 2:5])


class TestFromGrid:
    def test_shared_indices_accumulate(self):
        grid = np.array([[0, 1], [1, 2]])
        atom = AffineMatrix.from_grid(grid)
        v = np.array([3.0, 5.0, 7.0])
        assert np.allclose(atom.materialize(v), [[3.0, 5.0], [5.0, 7.0]])


class TestBmat:
    def test_zero_shape_inference(self, rng):
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((4, 5))
        M = bmat([[a, 0], [0, b]])
        assert M.shape == (6, 8)
        assert np.allclose(M[:2, :3], a)
        assert np.allclose(M[2:, 3:], b)
        assert np.allclose(M[:2, 3:], 0)

    def test_mixed_affine_and_constant(self, rng):
        expr, n_vars = random_affine(rng, (2, 2))
        c = rng.standard_normal((2, 2))
        v = rng.standard_normal(n_vars)
        M = bmat([[expr, c], [0, expr.T]])
        top = np.hstack([expr.materialize(v), c])
        bot = np.hstack([np.zeros((2, 2)), expr.materialize(v).T])
        assert np.allclose(M.materialize(v), np.vstack([top, bot]))

    def test_underdetermined_shape_rejected(self):
        with pytest.raises(ValueError, match="cannot be inferred"):
            bmat([[0, np.eye(2)], [0, np.eye(2)]])

    def test_block_diag(self, rng):
        a = rng.standard_normal((2, 2))
        b = rng.standard_normal((3, 3))
        M = block_diag([a, b])
        assert M.shape == (5, 5)
        assert np.allclose(M[:2, :2], a)
        assert np.allclose(M[2:, 2:], b)

    def test_zero_sized_blocks(self, rng):
        # completions with m == n produce empty bottom rows
        a = rng.standard_normal((2, 2))
        M = bmat([[a, np.zeros((2, 0))], [np.zeros((0, 2)), np.zeros((0, 0))]])
        assert M.shape == (2, 2)
        assert np.allclose(M, a)


class TestPsdConstraint:
    def test_symmetry_enforced(self, rng):
        bad = AffineMatrix(rng.standard_normal((3, 3)))
        with pytest.raises(ValueError, match="not symmetric"):
            bad.to_psd_constraint("bad")

    def test_sign_normalized_min_eig(self, rng):
        M = rng.standard_normal((3, 3))
        sym = M @ M.T + 0.1 * np.eye(3)
        psd = AffinePsdConstraint("p", sym, {}, "psd")
        nsd = AffinePsdConstraint("n", -sym, {}, "nsd")
        v = np.zeros(1)
        assert psd.min_eig(v) > 0
        assert nsd.min_eig(v) > 0

    def test_bad_sense_rejected(self):
        with pytest.raises(ValueError):
            AffinePsdConstraint("x", np.eye(2), {}, "geq")
