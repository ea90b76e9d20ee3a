import numpy as np
import pytest

from rrlmi import protocol
from rrlmi.lmi import ControllerGains
from rrlmi.model import LargeScaleSystem, SubsystemModel, example2_system
from rrlmi.simulate import (
    DisturbanceSpec,
    DivergenceError,
    SimulationRecord,
    decay_estimate,
    default_horizon,
    disturbance_family,
    empirical_l2_gain,
    integrate_closed_loop,
    write_schedule_audit_csv,
    write_trajectory_csv,
)


def zero_gains(sys_):
    return [
        ControllerGains(
            index=i,
            K_self=np.zeros((sys_.subsystem(i).m, sys_.subsystem(i).n)),
            K_neighbors={
                j: np.zeros((sys_.subsystem(i).m, sys_.subsystem(j).n))
                for j in sys_.neighbors(i)
            },
        )
        for i in range(1, sys_.N + 1)
    ]


def decoupled_scalar_pair(rate=-1.0, delta=0.01):
    """Two scalar subsystems with zero coupling blocks: xdot = rate * x each."""
    def sub(i, nbrs):
        return SubsystemModel(
            index=i,
            A=np.array([[rate]]),
            coupling={j: np.zeros((1, 1)) for j in nbrs},
            B=np.eye(1),
            E=np.eye(1),
            C=np.eye(1),
            F=np.zeros((1, 1)),
        )
    return LargeScaleSystem([sub(1, (2,)), sub(2, (1,))], [(2,), (1,)], delta)


class TestIntegration:
    def test_zero_everything_stays_zero(self):
        sys_ = decoupled_scalar_pair()
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.zeros(2), t_end=0.5)
        assert np.all(rec.states == 0.0)
        assert np.all(rec.inputs == 0.0)
        assert np.all(rec.outputs == 0.0)

    def test_known_exponential(self):
        sys_ = decoupled_scalar_pair(rate=-1.0)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.array([1.0, 2.0]), t_end=3.0)
        assert np.allclose(rec.states[-1], np.array([1.0, 2.0]) * np.exp(-3.0), rtol=1e-8)

    def test_divergence_guard(self):
        sys_ = decoupled_scalar_pair(rate=+40.0)
        with pytest.raises(DivergenceError) as err:
            integrate_closed_loop(sys_, zero_gains(sys_), np.array([1.0, 1.0]),
                                  t_end=5.0, blowup=1e6)
        assert 0 < err.value.time <= 5.0

    def test_determinism(self):
        sys_ = example2_system(N=4, delta=0.002)
        dist = DisturbanceSpec("smooth", 1.0, 0.0, 0.5, seed=7)
        a = integrate_closed_loop(sys_, zero_gains(sys_), np.zeros(8), dist, t_end=1.0)
        b = integrate_closed_loop(sys_, zero_gains(sys_), np.zeros(8), dist, t_end=1.0)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.z_energy, b.z_energy)

    def test_superposition(self):
        sys_ = example2_system(N=3, delta=0.002)
        g = zero_gains(sys_)
        d1 = DisturbanceSpec("smooth", 1.0, 0.0, 0.4, seed=1)
        d2 = DisturbanceSpec("pulse", 0.7, 0.1, 0.3)
        x0 = np.zeros(6)

        class Combined:
            kind = "smooth"
            def build(self, s):
                f1, f2 = d1.build(s), d2.build(s)
                return lambda t: f1(t) + f2(t)

        r1 = integrate_closed_loop(sys_, g, x0, d1, t_end=1.0)
        r2 = integrate_closed_loop(sys_, g, x0, d2, t_end=1.0)
        r12 = integrate_closed_loop(sys_, g, x0, Combined(), t_end=1.0)
        assert np.allclose(r12.states, r1.states + r2.states, rtol=1e-8, atol=1e-12)

    def test_rk4_order_on_refinement(self):
        sys_ = decoupled_scalar_pair(rate=-2.0, delta=0.25)
        x0 = np.array([1.0, -1.0])
        exact = x0 * np.exp(-2.0 * 1.0)
        errs = []
        for substeps in (1, 2, 4):
            rec = integrate_closed_loop(sys_, zero_gains(sys_), x0, t_end=1.0,
                                        substeps=substeps)
            errs.append(np.max(np.abs(rec.states[-1] - exact)))
        order1 = np.log2(errs[0] / errs[1])
        order2 = np.log2(errs[1] / errs[2])
        assert order1 > 3.5 and order2 > 3.5

    def test_record_grid_divides_sampling_period(self):
        sys_ = example2_system(N=3, delta=0.01)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.ones(6), t_end=0.1,
                                    substeps=4, record_stride=3)
        # stride 3 does not divide substeps 4: coerced down to a divisor
        assert rec.record_stride in (1, 2, 4)
        dt = np.diff(rec.time)
        ratio = sys_.delta / dt[0]
        assert np.isclose(ratio, round(ratio))

    def test_held_samples_match_protocol_predictions(self):
        sys_ = example2_system(N=4, delta=0.05)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.ones(8), t_end=0.5,
                                    audit=True)
        for k, polled, held_t in rec.held_audit:
            col = 0
            for i in range(1, sys_.N + 1):
                for j in sys_.neighbors(i):
                    nj = sys_.subsystem(j).n
                    assert held_t[col] == pytest.approx(
                        protocol.held_timestamp(i, j, k, sys_)
                    ), (k, i, j)
                    col += nj
            assert polled == tuple(
                protocol.polled_neighbor(i, k, sys_) for i in range(1, sys_.N + 1)
            )


class TestDisturbances:
    def test_family_composition(self):
        fam = disturbance_family(seed=3)
        assert len(fam) == 12
        assert sum(1 for d in fam if d.kind == "smooth") == 8
        assert sum(1 for d in fam if d.kind == "pulse") == 4

    def test_smooth_requires_seed(self):
        with pytest.raises(ValueError, match="seed"):
            DisturbanceSpec("smooth", 1.0, 0.0, 1.0)

    def test_signals_vanish_outside_window(self):
        sys_ = example2_system(N=2)
        for spec in disturbance_family(seed=0, t_on=0.2, t_off=0.8):
            w = spec.build(sys_)
            assert np.all(w(0.1) == 0.0)
            assert np.all(w(0.9) == 0.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            DisturbanceSpec("boom")


class TestEmpiricalGain:
    def test_identity_plant_has_unit_gain(self):
        # C = 0, F = I: output equals the disturbance exactly
        def sub(i, nbrs):
            return SubsystemModel(
                index=i, A=-np.eye(1),
                coupling={j: np.zeros((1, 1)) for j in nbrs},
                B=np.eye(1), E=np.zeros((1, 1)),
                C=np.zeros((1, 1)), F=np.eye(1),
            )
        sys_ = LargeScaleSystem([sub(1, (2,)), sub(2, (1,))], [(2,), (1,)], 0.01)
        dist = DisturbanceSpec("sine", 1.0, 0.0, 1.0)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.zeros(2), dist, t_end=8.0)
        assert empirical_l2_gain([rec]) == pytest.approx(1.0, rel=1e-9)

    def test_amplitude_homogeneity(self):
        sys_ = decoupled_scalar_pair(rate=-1.5, delta=0.01)
        recs = []
        for amp in (1.0, 2.0):
            dist = DisturbanceSpec("smooth", amp, 0.0, 1.0, seed=5)
            recs.append(
                integrate_closed_loop(sys_, zero_gains(sys_), np.zeros(2), dist, t_end=12.0)
            )
        g1 = empirical_l2_gain([recs[0]])
        g2 = empirical_l2_gain([recs[1]])
        assert g1 == pytest.approx(g2, rel=1e-9)

    def test_zero_disturbance_rejected(self):
        sys_ = decoupled_scalar_pair()
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.zeros(2), t_end=1.0)
        with pytest.raises(ValueError, match="disturbance energy"):
            empirical_l2_gain([rec])

    def test_nonzero_initial_state_rejected(self):
        sys_ = decoupled_scalar_pair()
        dist = DisturbanceSpec("pulse", 1.0, 0.0, 0.5)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.ones(2), dist, t_end=6.0)
        with pytest.raises(ValueError, match="zero initial"):
            empirical_l2_gain([rec])

    def test_short_horizon_rejected(self):
        sys_ = decoupled_scalar_pair(rate=-0.3)
        dist = DisturbanceSpec("pulse", 1.0, 0.0, 0.5)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.zeros(2), dist, t_end=0.6)
        with pytest.raises(ValueError, match="horizon"):
            empirical_l2_gain([rec])


class TestDecayEstimate:
    def test_known_rate_recovered(self):
        sys_ = decoupled_scalar_pair(rate=-1.0, delta=0.01)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.array([1.0, 0.5]), t_end=6.0)
        rho = decay_estimate(rec)
        assert rho == pytest.approx(-1.0, rel=0.01)

    def test_unstable_rate_positive(self):
        sys_ = decoupled_scalar_pair(rate=+0.5, delta=0.01)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.array([1e-3, 1e-3]), t_end=4.0)
        assert decay_estimate(rec) > 0

    def test_requires_disturbance_free(self):
        sys_ = decoupled_scalar_pair()
        dist = DisturbanceSpec("pulse", 1.0, 0.0, 0.5)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.ones(2), dist, t_end=4.0)
        with pytest.raises(ValueError, match="disturbance-free"):
            decay_estimate(rec)

    def test_default_horizon(self):
        dist = DisturbanceSpec("pulse", 1.0, 0.0, 2.0)
        assert default_horizon(0.4, dist) == pytest.approx(2.0 + 50.0)
        assert default_horizon([0.4, 0.5]) == pytest.approx(50.0)


class TestExports:
    def test_trajectory_csv_round_trip(self, tmp_path):
        sys_ = example2_system(N=2, delta=0.01)
        dist = DisturbanceSpec("pulse", 1.0, 0.0, 0.1)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.zeros(4), dist, t_end=0.2)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(rec, path)
        data = np.genfromtxt(path, delimiter=",", names=True)
        assert data.shape[0] == rec.time.size
        assert np.allclose(data["t"], rec.time)
        assert np.allclose(data["x1_1"], rec.states[:, 0])
        assert np.allclose(data["w2_1"], rec.disturbances[:, 1])

    def test_audit_csv(self, tmp_path):
        sys_ = example2_system(N=3, delta=0.05)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.ones(6), t_end=0.25, audit=True)
        path = tmp_path / "audit.csv"
        write_schedule_audit_csv(sys_, rec, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1 + 5 * sys_.N

    def test_audit_required(self, tmp_path):
        sys_ = example2_system(N=2, delta=0.05)
        rec = integrate_closed_loop(sys_, zero_gains(sys_), np.ones(4), t_end=0.2)
        with pytest.raises(ValueError, match="audit"):
            write_schedule_audit_csv(sys_, rec, tmp_path / "x.csv")
