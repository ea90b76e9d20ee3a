import numpy as np
import pytest

from rrlmi.affine import AffinePsdConstraint
from rrlmi.model import SynthesisParams, example2_system
from rrlmi.sdp import (
    ConicProgram,
    SolveOutcome,
    SolveStatus,
    SolverOptions,
    SynthesisError,
    bisect_gamma,
    certificate_violation,
    export_sdpa,
    minimize_gamma,
    solve,
    solve_at_gamma,
)


def eye_con(label, k, dim, sign):
    return AffinePsdConstraint(label, np.zeros((dim, dim)), {k: sign * np.eye(dim)}, "psd")


class TestSolve:
    @pytest.mark.parametrize("seed", range(5))
    def test_largest_eigenvalue_oracle(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(2, 6))
        M = rng.standard_normal((dim, dim))
        M = 0.5 * (M + M.T)
        # minimize s subject to s I - M >= 0
        con = AffinePsdConstraint("shift", -M, {0: np.eye(dim)}, "psd")
        prog = ConicProgram(n_vars=1, objective={0: 1.0}, constraints=[con])
        out = solve(prog)
        assert out.status is SolveStatus.OPTIMAL
        assert out.values[0] == pytest.approx(np.linalg.eigvalsh(M).max(), abs=1e-7)

    def test_constant_negative_definite_infeasible(self):
        con = AffinePsdConstraint("neg", -np.eye(2), {0: np.zeros((2, 2))}, "psd")
        helper = eye_con("box", 0, 1, 1.0)  # keep the variable bounded below
        prog = ConicProgram(n_vars=1, objective={}, constraints=[con, helper])
        out = solve(prog)
        assert out.status is SolveStatus.INFEASIBLE
        assert out.values is None

    def test_interval_feasibility(self):
        # [[x, 0], [0, 1-x]] >= 0  <=>  x in [0, 1]
        con = AffinePsdConstraint(
            "interval",
            np.diag([0.0, 1.0]),
            {0: np.diag([1.0, -1.0])},
            "psd",
        )
        prog = ConicProgram(n_vars=1, objective={}, constraints=[con])
        out = solve(prog)
        assert out.status is SolveStatus.OPTIMAL
        assert -1e-8 <= out.values[0] <= 1.0 + 1e-8
        assert con.min_eig(out.values) >= -1e-7

    def test_nsd_sense(self):
        # minimize -s subject to M + s I <= 0: s* = -lambda_max... i.e. max s
        rng = np.random.default_rng(3)
        M = rng.standard_normal((3, 3))
        M = 0.5 * (M + M.T)
        con = AffinePsdConstraint("cap", M, {0: np.eye(3)}, "nsd")
        prog = ConicProgram(n_vars=1, objective={0: -1.0}, constraints=[con])
        out = solve(prog)
        assert out.values[0] == pytest.approx(-np.linalg.eigvalsh(M).max(), abs=1e-7)

    def test_equality_pins(self):
        con = eye_con("pos", 0, 1, 1.0)
        prog = ConicProgram(
            n_vars=2,
            objective={0: 1.0},
            constraints=[con, eye_con("pos2", 1, 1, 1.0)],
            fixed=((1, 4.0),),
        )
        out = solve(prog)
        assert out.values[1] == pytest.approx(4.0, abs=1e-9)

    def test_out_of_bounds_objective_rejected(self):
        with pytest.raises(ValueError, match="out of bounds"):
            ConicProgram(n_vars=1, objective={3: 1.0}, constraints=[eye_con("c", 0, 1, 1.0)])

    def test_needs_constraints(self):
        with pytest.raises(ValueError, match="at least one constraint"):
            ConicProgram(n_vars=1, objective={}, constraints=[])

    def test_outcome_values_iff_solved(self):
        with pytest.raises(ValueError):
            SolveOutcome(SolveStatus.INFEASIBLE, np.zeros(2), 0.0, 0.0)
        with pytest.raises(ValueError):
            SolveOutcome(SolveStatus.OPTIMAL, None, None, None)


class TestSynthesis:
    def test_example2_reproduction(self):
        res = minimize_gamma(example2_system(N=10))
        assert res.outcome.status is SolveStatus.OPTIMAL
        # certified level sits a hair above the feedthrough floor
        assert 2.0 < res.gamma < 2.092
        assert res.gamma_infimum == pytest.approx(2.0, abs=5e-3)
        assert res.gamma == pytest.approx(1.02 * res.gamma_infimum, rel=1e-9)

    def test_certificate_replay(self):
        res = minimize_gamma(example2_system(N=4))
        viol = certificate_violation(res.constraints, res.layout.pack(
            {k: v for k, v in res.certificate.items() if k != "gamma_sq"},
            gamma_sq=res.certificate["gamma_sq"],
        ))
        assert viol <= 1e-6

    def test_gain_shapes(self):
        sys_ = example2_system(N=4)
        res = minimize_gamma(sys_)
        for i in range(1, 5):
            g = res.gain(i)
            assert g.K_self.shape == (1, 2)
            assert set(g.K_neighbors) == set(sys_.neighbors(i))
            for j, K in g.K_neighbors.items():
                assert K.shape == (1, 2)

    def test_monotonic_feasibility(self):
        sys_ = example2_system(N=4)
        params = SynthesisParams()
        res = minimize_gamma(sys_)
        ok_above, _ = solve_at_gamma(sys_, params, 1.1 * res.gamma_infimum)
        ok_below, _ = solve_at_gamma(sys_, params, 0.5 * res.gamma_infimum)
        assert ok_above and not ok_below

    def test_bisection_agrees_with_direct(self):
        sys_ = example2_system(N=4)
        direct = minimize_gamma(sys_, relevel=0.0)
        bis = bisect_gamma(sys_)
        assert bis.gamma == pytest.approx(direct.gamma, rel=1e-3)

    def test_invalid_system_rejected(self):
        sys_ = example2_system(N=4)
        with pytest.raises(ValueError, match="invalid parameters"):
            minimize_gamma(sys_, SynthesisParams(h=0.5))

    def test_feasibility_below_floor_is_infeasible(self):
        sys_ = example2_system(N=4)
        with pytest.raises(SynthesisError, match="feedthrough floor"):
            params = SynthesisParams(gamma=1.0)
            ok, _ = solve_at_gamma(sys_, params, 1.0)
            if not ok:
                from rrlmi.sdp import _raise_synthesis_failure
                _raise_synthesis_failure(sys_, params, solve(ConicProgram(
                    n_vars=1, objective={}, constraints=[
                        AffinePsdConstraint("neg", -np.eye(1), {0: np.zeros((1, 1))}, "psd"),
                        eye_con("b", 0, 1, 1.0),
                    ])))

    def test_shared_corner_structure_degenerates(self):
        """The verbatim shared-corner problem is degenerate on the benchmarks."""
        sys_ = example2_system(N=2)
        with pytest.raises(SynthesisError, match="decoupled"):
            minimize_gamma(sys_, SynthesisParams(multiplier_structure="shared_corner"))

    def test_custom_transforms_validated(self):
        sys_ = example2_system(N=2)
        bad = [np.eye(2), np.eye(2)]
        with pytest.raises(ValueError, match="does not normalize"):
            minimize_gamma(sys_, transforms=bad)


class TestSdpaExport:
    def test_round_trip_against_solver(self, tmp_path):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((3, 3))
        M = 0.5 * (M + M.T)
        con = AffinePsdConstraint("shift", -M, {0: np.eye(3)}, "psd")
        prog = ConicProgram(n_vars=1, objective={0: 1.0}, constraints=[con])
        path = tmp_path / "prob.dat-s"
        export_sdpa(prog, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "1"          # one variable
        assert lines[1] == "1"          # one block
        assert lines[2] == "3"          # block size
        assert [float(x) for x in lines[3].split()] == [1.0]
        # F0 = -const = M (upper triangle), F1 = I
        f0 = [l for l in lines[4:] if l.startswith("0 ")]
        f1 = [l for l in lines[4:] if l.startswith("1 ")]
        assert len(f0) == 6 and len(f1) == 3

    def test_pins_not_supported(self, tmp_path):
        prog = ConicProgram(
            n_vars=1, objective={}, constraints=[eye_con("c", 0, 1, 1.0)], fixed=((0, 1.0),)
        )
        with pytest.raises(ValueError, match="equality"):
            export_sdpa(prog, tmp_path / "x.dat-s")
