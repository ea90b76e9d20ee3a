import json

import numpy as np
import pytest

from rrlmi.model import (
    LargeScaleSystem,
    SubsystemModel,
    SynthesisParams,
    build_chain_system,
    example2_system,
    example4_system,
    system_from_json,
    system_to_json,
    validate_system,
)


def _toy_subsystem(i, nbrs, B=None):
    return SubsystemModel(
        index=i,
        A=-np.eye(2),
        coupling={j: 0.1 * np.eye(2) for j in nbrs},
        B=B if B is not None else np.array([[1.0], [0.0]]),
        E=np.array([[1.0], [0.0]]),
        C=np.array([[1.0, 0.0]]),
        F=np.array([[0.5]]),
    )


class TestValidateSystem:
    def test_example2_valid(self):
        assert validate_system(example2_system(a=0.0, N=10)) == []

    @pytest.mark.parametrize("a", [-0.4, -0.2, 0.0, 0.2, 0.4])
    @pytest.mark.parametrize("N", [2, 3, 10, 37])
    def test_example2_valid_across_grid(self, a, N):
        assert validate_system(example2_system(a=a, N=N)) == []

    def test_example4_valid(self):
        assert validate_system(example4_system()) == []

    def test_zero_input_column_rejected(self):
        sys_ = build_chain_system(
            2, lambda i, nbrs: _toy_subsystem(i, nbrs, B=np.zeros((2, 1))), delta=0.01
        )
        assert any("full column rank" in msg for msg in validate_system(sys_))

    def test_duplicate_neighbor_rejected(self):
        subs = [_toy_subsystem(1, (2,)), _toy_subsystem(2, (1,))]
        sys_ = LargeScaleSystem(subs, [(2, 2), (1,)], delta=0.01)
        msgs = validate_system(sys_)
        assert any("duplicate neighbor" in msg for msg in msgs)

    def test_self_loop_rejected(self):
        subs = [_toy_subsystem(1, (1,)), _toy_subsystem(2, (1,))]
        sys_ = LargeScaleSystem(subs, [(1,), (1,)], delta=0.01)
        assert any("self-loop" in msg for msg in validate_system(sys_))

    def test_empty_neighbor_set_rejected(self):
        subs = [
            SubsystemModel(1, -np.eye(2), {}, np.array([[1.0], [0.0]]),
                           np.array([[1.0], [0.0]]), np.array([[1.0, 0.0]]), np.array([[0.5]])),
            _toy_subsystem(2, (1,)),
        ]
        sys_ = LargeScaleSystem(subs, [(), (1,)], delta=0.01)
        assert any("empty neighbor set" in msg for msg in validate_system(sys_))

    def test_nonpositive_delta_rejected(self):
        subs = [_toy_subsystem(1, (2,)), _toy_subsystem(2, (1,))]
        sys_ = LargeScaleSystem(subs, [(2,), (1,)], delta=0.0)
        assert any("sampling period" in msg for msg in validate_system(sys_))

    def test_coupling_shape_mismatch_rejected(self):
        bad = SubsystemModel(
            index=1,
            A=-np.eye(2),
            coupling={2: np.eye(3)},
            B=np.array([[1.0], [0.0]]),
            E=np.array([[1.0], [0.0]]),
            C=np.array([[1.0, 0.0]]),
            F=np.array([[0.5]]),
        )
        sys_ = LargeScaleSystem([bad, _toy_subsystem(2, (1,))], [(2,), (1,)], delta=0.01)
        assert any("coupling to 2" in msg for msg in validate_system(sys_))


class TestChainTopology:
    def test_interior_neighbors(self):
        sys_ = example2_system(N=10)
        assert sys_.neighbors(5) == (4, 6)
        assert sys_.degree(5) == 2

    def test_smallest_chain(self):
        sys_ = example2_system(N=2)
        assert sys_.neighbors(1) == (2,)
        assert sys_.neighbors(2) == (1,)

    def test_hundred_chain_degrees(self):
        sys_ = example4_system()
        assert sys_.degree(1) == 1 and sys_.degree(100) == 1
        assert sum(1 for i in range(1, 101) if sys_.degree(i) == 2) == 98

    @pytest.mark.parametrize("N", [2, 5, 17, 60])
    def test_total_degree(self, N):
        sys_ = example2_system(N=N)
        assert sum(sys_.degree(i) for i in range(1, N + 1)) == 2 * (N - 1)

    def test_too_small_chain_rejected(self):
        with pytest.raises(ValueError):
            build_chain_system(1, lambda i, nbrs: _toy_subsystem(i, nbrs), delta=0.01)


class TestExample2Entries:
    def test_interior_local_matrix_at_zero(self):
        sys_ = example2_system(a=0.0, N=10)
        expected = np.array([[-1.1, -0.3], [0.0, -1.0]])
        assert np.allclose(sys_.subsystem(5).A, expected)

    def test_base_matrix_at_a04(self):
        sys_ = example2_system(a=0.4, N=10)
        # boundary node: base matrix plus one neighbor increment
        A_b = np.array([[-0.2, -0.1 + 0.2 * 0.4], [0.0, -0.1]])
        A_a = sys_.subsystem(1).A - A_b
        assert np.allclose(A_a, np.array([[-0.3, -0.1], [0.0, -0.76]]))

    @pytest.mark.parametrize("a", [-0.4, 0.0, 0.25])
    def test_output_channel_fixed(self, a):
        sys_ = example2_system(a=a, N=4)
        for i in range(1, 5):
            assert np.allclose(sys_.subsystem(i).F, [[2.0]])
            assert np.allclose(sys_.subsystem(i).C, [[0.1, 0.0]])

    def test_coupling_is_negative_increment(self):
        sys_ = example2_system(a=0.0, N=4)
        assert np.allclose(sys_.subsystem(2).coupling[3], [[0.2, 0.1], [0.0, 0.1]])


class TestExample4Entries:
    def test_unstable_branch_subsystem3(self):
        sys_ = example4_system()
        expected = np.array([[0.2, 3.0 / 16.0], [0.0, -1.2]])
        assert np.allclose(sys_.subsystem(3).A, expected)

    def test_stable_branch_subsystem4(self):
        sys_ = example4_system()
        assert np.isclose(sys_.subsystem(4).A[0, 0], -1.9)

    def test_unstable_count_and_positions(self):
        sys_ = example4_system()
        unstable = [
            i for i in range(1, 101)
            if np.max(np.linalg.eigvals(sys_.subsystem(i).A).real) > 0
        ]
        assert unstable == [i for i in range(1, 101) if i % 4 == 3]
        assert len(unstable) == 25

    def test_assembled_matrix_eigenvalues(self):
        A = example4_system().interconnection_matrix()
        assert A.shape == (200, 200)
        count = int(np.sum(np.linalg.eigvals(A).real > 0))
        assert count == 25


class TestSynthesisParams:
    def test_defaults_valid_on_example2(self):
        assert SynthesisParams().validate(example2_system(N=10)) == []

    def test_h_bound_enforced(self):
        # interior degree 2: bound is 2*0.4/2 = 0.4
        params = SynthesisParams(alpha=0.4, h=0.4)
        msgs = params.validate(example2_system(N=10))
        assert any("0 < h < 2*alpha/d" in msg for msg in msgs)

    def test_epsilon_positive(self):
        msgs = SynthesisParams(epsilon=0.0).validate(example2_system(N=4))
        assert any("epsilon" in msg for msg in msgs)

    def test_per_subsystem_broadcast(self):
        sys_ = example2_system(N=4)
        alpha, h = SynthesisParams(alpha=(0.4, 0.5, 0.4, 0.5), h=0.1).resolve(sys_)
        assert alpha.tolist() == [0.4, 0.5, 0.4, 0.5]
        assert h.tolist() == [0.1] * 4


class TestJsonRoundTrip:
    def test_round_trip_preserves_everything(self, tmp_path):
        sys_ = example2_system(a=0.15, N=5)
        data = system_to_json(sys_)
        # survives actual serialization
        recovered = system_from_json(json.loads(json.dumps(data)))
        assert recovered.N == sys_.N
        assert recovered.delta == sys_.delta
        for i in range(1, 6):
            assert recovered.neighbors(i) == sys_.neighbors(i)
            assert np.array_equal(recovered.subsystem(i).A, sys_.subsystem(i).A)
            for j in sys_.neighbors(i):
                assert np.array_equal(
                    recovered.subsystem(i).coupling[j], sys_.subsystem(i).coupling[j]
                )
        assert validate_system(recovered) == []

    def test_neighbor_order_is_file_order(self):
        data = system_to_json(example2_system(N=4))
        # reverse subsystem 2's neighbor list in the file
        data["subsystems"][1]["neighbors"].reverse()
        recovered = system_from_json(data)
        assert recovered.neighbors(2) == (3, 1)
