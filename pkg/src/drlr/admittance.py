"""Two-joint Euler-Lagrange dynamics and admittance controllers.

The controller stack converts a torque discrepancy into a position-reference
offset through a virtual mass-spring-damper, with a saturation branch that
activates when the external torque exceeds tau_sat. Both the two-sided and
the one-sided (saturation only) variants are provided, plus a computed-torque
tracking controller. Integration is semi-implicit Euler throughout.

Sign convention: external torque opposing motion during penetration is
negative; tau_e > tau_sat triggers the saturation branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class JointDynamics:
    """Planar 2-link arm: M(q) qdd + C(q,qd) qd + friction(qd) + g(q) = tau + tau_e."""

    m1: float = 2.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 0.6
    gravity: float = 9.81
    coulomb: np.ndarray = field(default_factory=lambda: np.zeros(2))
    viscous: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def lc1(self):
        return self.l1 / 2.0

    @property
    def lc2(self):
        return self.l2 / 2.0

    @property
    def I1(self):
        return self.m1 * self.l1 ** 2 / 12.0

    @property
    def I2(self):
        return self.m2 * self.l2 ** 2 / 12.0

    def inertia(self, q: np.ndarray) -> np.ndarray:
        c2 = np.cos(q[1])
        a = self.I1 + self.I2 + self.m1 * self.lc1 ** 2 + self.m2 * (
            self.l1 ** 2 + self.lc2 ** 2 + 2 * self.l1 * self.lc2 * c2)
        b = self.I2 + self.m2 * (self.lc2 ** 2 + self.l1 * self.lc2 * c2)
        d = self.I2 + self.m2 * self.lc2 ** 2
        return np.array([[a, b], [b, d]])

    def coriolis(self, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
        h = -self.m2 * self.l1 * self.lc2 * np.sin(q[1])
        return np.array([[h * qd[1], h * (qd[0] + qd[1])],
                         [-h * qd[0], 0.0]])

    def gravity_torque(self, q: np.ndarray) -> np.ndarray:
        g = self.gravity
        g1 = (self.m1 * self.lc1 + self.m2 * self.l1) * g * np.cos(q[0]) \
            + self.m2 * self.lc2 * g * np.cos(q[0] + q[1])
        g2 = self.m2 * self.lc2 * g * np.cos(q[0] + q[1])
        return np.array([g1, g2])

    def friction(self, qd: np.ndarray) -> np.ndarray:
        return self.coulomb * np.sign(qd) + self.viscous * qd

    def nonlinear(self, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
        return self.coriolis(q, qd) @ qd + self.friction(qd) + self.gravity_torque(q)

    def energy(self, q: np.ndarray, qd: np.ndarray) -> float:
        kinetic = 0.5 * qd @ self.inertia(q) @ qd
        potential = (self.m1 * self.lc1 + self.m2 * self.l1) * self.gravity * np.sin(q[0]) \
            + self.m2 * self.lc2 * self.gravity * np.sin(q[0] + q[1])
        return float(kinetic + potential)


def dynamics_step(dyn: JointDynamics, q, qd, tau, tau_e, dt: float):
    """One semi-implicit Euler step of the joint dynamics."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    M = dyn.inertia(q)
    if np.linalg.det(M) <= 0:
        raise ValueError("inertia matrix not positive definite")
    qdd = np.linalg.solve(M, np.asarray(tau, dtype=np.float64)
                          + np.asarray(tau_e, dtype=np.float64) - dyn.nonlinear(q, qd))
    qd2 = qd + dt * qdd
    q2 = q + dt * qd2
    return q2, qd2


@dataclass
class AdmittanceGains:
    M_d: float
    K_D: float
    K_P: float
    tau_sat: float

    def validate(self):
        if min(self.M_d, self.K_D, self.K_P, self.tau_sat) <= 0:
            raise ValueError("admittance gains must be strictly positive")


@dataclass
class AdmittanceState:
    q_f: np.ndarray
    qd_f: np.ndarray
    saturated: bool = False  # last branch taken; used to count crossings
    crossings: int = 0

    @classmethod
    def zero(cls, n: int = 1) -> "AdmittanceState":
        return cls(np.zeros(n), np.zeros(n))


def _integrate(state: AdmittanceState, qdd_f, dt: float, saturated: bool) -> AdmittanceState:
    qd_f = state.qd_f + dt * np.asarray(qdd_f, dtype=np.float64)
    q_f = state.q_f + dt * qd_f
    crossings = state.crossings + (1 if saturated != state.saturated else 0)
    return AdmittanceState(q_f, qd_f, saturated, crossings)


def admittance_two_sided(state: AdmittanceState, gains: AdmittanceGains,
                         tau_d, tau_e, dt: float) -> AdmittanceState:
    """Torque-tracking admittance with a saturation branch above tau_sat.

    Returns the updated state; the reference offset is state.q_f.
    """
    gains.validate()
    tau_d = np.asarray(tau_d, dtype=np.float64)
    tau_e = np.asarray(tau_e, dtype=np.float64)
    sat = bool(np.any(tau_e > gains.tau_sat))
    qdd_sat = -((gains.tau_sat - tau_e) - gains.K_D * state.qd_f
                - gains.K_P * state.q_f) / gains.M_d
    qdd_track = ((tau_d - tau_e) - gains.K_D * state.qd_f
                 - gains.K_P * state.q_f) / gains.M_d
    qdd_f = np.where(tau_e > gains.tau_sat, qdd_sat, qdd_track)
    return _integrate(state, qdd_f, dt, sat)


def admittance_one_sided(state: AdmittanceState, gains: AdmittanceGains,
                         tau_e, dt: float, zero_velocity_when_inactive: bool = False
                         ) -> AdmittanceState:
    """Saturation-only admittance: inactive (zero filter acceleration) until
    tau_e exceeds tau_sat. With zero_velocity_when_inactive the filter velocity
    is also cleared on the inactive branch."""
    gains.validate()
    tau_e = np.asarray(tau_e, dtype=np.float64)
    active = tau_e > gains.tau_sat
    sat = bool(np.any(active))
    qdd_sat = -((gains.tau_sat - tau_e) - gains.K_D * state.qd_f
                - gains.K_P * state.q_f) / gains.M_d
    qdd_f = np.where(active, qdd_sat, 0.0)
    new = _integrate(state, qdd_f, dt, sat)
    if zero_velocity_when_inactive:
        new.qd_f = np.where(active, new.qd_f, 0.0)
    return new


def tracking_controller(dyn: JointDynamics, q, qd, q_ref, qd_ref,
                        kp: float, kv: float) -> np.ndarray:
    """Computed-torque position tracking: tau = M(q) qdd_cmd + n(q, qd)."""
    if kp < 0 or kv < 0:
        raise ValueError("tracking gains must be non-negative")
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    qdd_cmd = kp * (np.asarray(q_ref) - q) + kv * (np.asarray(qd_ref) - qd)
    return dyn.inertia(q) @ qdd_cmd + dyn.nonlinear(q, qd)
