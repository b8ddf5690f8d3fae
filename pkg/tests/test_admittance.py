import numpy as np
import pytest

from drlr import admittance as adm


class UnitInertia:
    """Stub dynamics: M = I, no nonlinear terms."""

    def inertia(self, q):
        return np.eye(2)

    def nonlinear(self, q, qd):
        return np.zeros(2)


class TestDynamicsStep:
    def test_static_equilibrium(self):
        dyn = adm.JointDynamics()
        q, qd = np.array([0.4, -0.3]), np.zeros(2)
        tau = dyn.nonlinear(q, qd)
        q2, qd2 = adm.dynamics_step(dyn, q, qd, tau, np.zeros(2), 1e-3)
        assert np.allclose(q2, q)
        assert np.allclose(qd2, 0.0)

    def test_unit_inertia_velocity_gain(self):
        q2, qd2 = adm.dynamics_step(UnitInertia(), np.zeros(2), np.zeros(2),
                                    np.array([1.0, 0.0]), np.zeros(2), 0.01)
        assert np.allclose(qd2, [0.01, 0.0])

    def test_energy_drift_unforced_frictionless(self):
        dyn = adm.JointDynamics(gravity=0.0)  # frictionless by default
        q, qd = np.array([0.3, 0.5]), np.array([1.0, -0.5])
        e0 = dyn.energy(q, qd)
        for _ in range(1000):
            q, qd = adm.dynamics_step(dyn, q, qd, np.zeros(2), np.zeros(2), 1e-3)
        assert abs(dyn.energy(q, qd) - e0) < 0.01 * abs(e0)

    def test_passivity_with_friction(self):
        dyn = adm.JointDynamics(coulomb=np.array([0.1, 0.1]),
                                viscous=np.array([0.5, 0.5]), gravity=0.0)
        q, qd = np.array([0.2, -0.4]), np.array([1.5, -1.0])
        e = dyn.energy(q, qd)
        for _ in range(2000):
            q, qd = adm.dynamics_step(dyn, q, qd, np.zeros(2), np.zeros(2), 1e-3)
            e2 = dyn.energy(q, qd)
            assert e2 <= e + 1e-9
            e = e2

    def test_inertia_positive_definite_over_workspace(self):
        dyn = adm.JointDynamics()
        for q2 in np.linspace(-np.pi, np.pi, 25):
            M = dyn.inertia(np.array([0.0, q2]))
            assert np.allclose(M, M.T)
            assert np.all(np.linalg.eigvalsh(M) > 0)

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            adm.dynamics_step(adm.JointDynamics(), np.zeros(2), np.zeros(2),
                              np.zeros(2), np.zeros(2), 0.0)


GAINS = adm.AdmittanceGains(M_d=1.0, K_D=2.0, K_P=1.0, tau_sat=10.0)


class TestTwoSided:
    def test_steady_state_offset(self):
        state = adm.AdmittanceState.zero(1)
        tau_d, tau_e = 3.0, 1.0
        for _ in range(200_000):
            state = adm.admittance_two_sided(state, GAINS, tau_d, tau_e, 1e-4)
        expected = (tau_d - tau_e) / GAINS.K_P
        assert abs(state.q_f[0] - expected) < 0.01 * abs(expected)

    def test_balanced_torques_stay_zero(self):
        state = adm.AdmittanceState.zero(1)
        for _ in range(1000):
            state = adm.admittance_two_sided(state, GAINS, 2.0, 2.0, 1e-3)
        assert np.allclose(state.q_f, 0.0)
        assert np.allclose(state.qd_f, 0.0)

    def test_critically_damped_step_response(self):
        # M_d=1, K_D=2, K_P=1, unit input: q_f(t) = 1 - (1+t) e^-t
        state = adm.AdmittanceState.zero(1)
        dt = 1e-4
        checkpoints = {int(round(t / dt)): t for t in (1.0, 2.0, 5.0)}
        for n in range(1, int(5.0 / dt) + 1):
            state = adm.admittance_two_sided(state, GAINS, 1.0, 0.0, dt)
            if n in checkpoints:
                t = checkpoints[n]
                assert abs(state.q_f[0] - (1 - (1 + t) * np.exp(-t))) < 1e-3

    def test_saturation_branch_counts_crossings(self):
        state = adm.AdmittanceState.zero(1)
        state = adm.admittance_two_sided(state, GAINS, 0.0, 5.0, 1e-3)
        assert state.crossings == 0
        state = adm.admittance_two_sided(state, GAINS, 0.0, 15.0, 1e-3)
        assert state.crossings == 1
        state = adm.admittance_two_sided(state, GAINS, 0.0, 5.0, 1e-3)
        assert state.crossings == 2

    def test_invalid_gains(self):
        with pytest.raises(ValueError):
            adm.admittance_two_sided(adm.AdmittanceState.zero(1),
                                     adm.AdmittanceGains(0.0, 1.0, 1.0, 1.0),
                                     1.0, 0.0, 1e-3)


class TestOneSided:
    def test_inert_below_saturation(self):
        state = adm.AdmittanceState.zero(1)
        for tau_e in np.linspace(-5.0, 10.0, 500):
            state = adm.admittance_one_sided(state, GAINS, tau_e, 1e-3)
        assert np.all(state.q_f == 0.0)
        assert np.all(state.qd_f == 0.0)

    def test_active_branch_equilibrium(self):
        # tau_e = tau_sat + K_P c with q_f = -c: zero filter acceleration
        c = 0.7
        state = adm.AdmittanceState(np.array([-c]), np.zeros(1))
        tau_e = GAINS.tau_sat + GAINS.K_P * c
        state2 = adm.admittance_one_sided(state, GAINS, tau_e, 1e-3)
        assert np.allclose(state2.qd_f, 0.0)
        assert np.allclose(state2.q_f, -c)

    def test_activates_only_after_crossing(self):
        state = adm.AdmittanceState.zero(1)
        became_nonzero_at = None
        for n, tau_e in enumerate(np.linspace(0.0, 20.0, 200)):
            state = adm.admittance_one_sided(state, GAINS, tau_e, 1e-3)
            if became_nonzero_at is None and np.any(state.q_f != 0.0):
                became_nonzero_at = tau_e
        assert became_nonzero_at is not None
        assert became_nonzero_at > GAINS.tau_sat

    def test_zero_velocity_flag(self):
        state = adm.AdmittanceState(np.array([0.1]), np.array([2.0]))
        out = adm.admittance_one_sided(state, GAINS, 0.0, 1e-3,
                                       zero_velocity_when_inactive=True)
        assert np.all(out.qd_f == 0.0)


class TestTrackingController:
    def test_at_reference_compensates_nonlinear(self):
        dyn = adm.JointDynamics()
        q = np.array([0.3, -0.2])
        tau = adm.tracking_controller(dyn, q, np.zeros(2), q, np.zeros(2), 10.0, 5.0)
        assert np.allclose(tau, dyn.nonlinear(q, np.zeros(2)))

    def test_zero_gains_pure_compensation(self):
        dyn = adm.JointDynamics()
        q, qd = np.array([0.1, 0.2]), np.array([0.5, -0.5])
        tau = adm.tracking_controller(dyn, q, qd, np.zeros(2), np.zeros(2), 0.0, 0.0)
        assert np.allclose(tau, dyn.nonlinear(q, qd))

    def test_error_decays(self):
        dyn = adm.JointDynamics()
        q_ref = np.array([0.5, -0.3])
        q, qd = q_ref + np.array([0.2, -0.15]), np.zeros(2)
        errs = []
        for _ in range(4000):
            tau = adm.tracking_controller(dyn, q, qd, q_ref, np.zeros(2), 36.0, 12.0)
            q, qd = adm.dynamics_step(dyn, q, qd, tau, np.zeros(2), 1e-3)
            errs.append(np.linalg.norm(q - q_ref))
        assert errs[-1] < 1e-3
        # monotone decay after the initial transient
        tail = errs[200:]
        assert all(b <= a + 1e-9 for a, b in zip(tail, tail[1:]))
