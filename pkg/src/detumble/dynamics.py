"""Free-floating equation of motion: inertia assembly, momentum, integration.

The chaser is a 9-DOF planar system (3-DOF base, 3 joints per arm); the target
is a separate free rigid body coupled only through applied wrenches. Gravity
is zero everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import RobotModel, SystemState

DT_MAX = 2e-3


@dataclass(frozen=True)
class GeneralizedInertia:
    """Blocks of the 9x9 generalized inertia matrix."""

    matrix: np.ndarray

    @property
    def base(self) -> np.ndarray:
        return self.matrix[0:3, 0:3]

    def arm(self, arm: int) -> np.ndarray:
        i = 3 + 3 * arm
        return self.matrix[i:i + 3, i:i + 3]

    def coupling(self, arm: int) -> np.ndarray:
        i = 3 + 3 * arm
        return self.matrix[0:3, i:i + 3]


@dataclass
class DynamicsInput:
    """External generalized forces for one integration step."""

    joint_torques: np.ndarray = field(default_factory=lambda: np.zeros(6))
    base_wrench: np.ndarray = field(default_factory=lambda: np.zeros(3))
    effector_wrench_left: np.ndarray = field(default_factory=lambda: np.zeros(3))
    effector_wrench_right: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_wrench: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def arrays(self):
        out = tuple(
            np.asarray(a, dtype=float)
            for a in (
                self.joint_torques,
                self.base_wrench,
                self.effector_wrench_left,
                self.effector_wrench_right,
                self.target_wrench,
            )
        )
        shapes = ((6,), (3,), (3,), (3,), (3,))
        for a, s in zip(out, shapes):
            if a.shape != s:
                raise ValueError(f"dynamics input has shape {a.shape}, expected {s}")
            if not np.all(np.isfinite(a)):
                raise ValueError("dynamics input contains non-finite entries")
        return out


@dataclass(frozen=True)
class Momentum:
    linear: np.ndarray   # (2,)
    angular: float       # about the inertial origin


def assemble_inertia(model: RobotModel, state: SystemState) -> GeneralizedInertia:
    H = np.asarray(K.assemble_h(model.packed(), state.q))
    return GeneralizedInertia(matrix=H)


def nonlinear_terms(model: RobotModel, state: SystemState) -> np.ndarray:
    return np.asarray(K.nonlinear(model.packed(), state.q, state.qd))


def system_momentum(model: RobotModel, state: SystemState) -> Momentum:
    px, py, L = K.momentum_origin(model.packed(), state.q, state.qd)
    return Momentum(linear=np.array([px, py]), angular=float(L))


def combined_momentum(model: RobotModel, state: SystemState) -> Momentum:
    """Chaser + target momentum about the inertial origin."""
    m = system_momentum(model, state)
    mt = model.target.mass_kg
    it = model.target.inertia_kgm2
    x, y = state.tgt[0], state.tgt[1]
    vx, vy, w = state.tgt[3], state.tgt[4], state.tgt[5]
    lin = m.linear + mt * np.array([vx, vy])
    ang = m.angular + it * w + mt * (x * vy - y * vx)
    return Momentum(linear=lin, angular=float(ang))


def generalized_jacobian(model: RobotModel, state: SystemState) -> np.ndarray:
    """6x6 free-floating Jacobian mapping stacked joint rates to effector rates."""
    jstar, _, _ = K.generalized_jacobian(model.packed(), state.q, state.qd)
    return np.asarray(jstar)


def step(model: RobotModel, state: SystemState, inp: DynamicsInput, dt: float,
         integrator: str = "rk4") -> SystemState:
    """Advance chaser and target one step under the given applied wrenches.

    Effector wrenches act at the effector frame origins, the target wrench at
    the target COG. Contact forces are not computed here; callers that want
    them use the episode engine.
    """
    if not (0.0 < dt <= DT_MAX):
        raise ValueError(f"dt must be in (0, {DT_MAX}], got {dt}")
    tau, fb, fhl, fhr, ftw = inp.arrays()
    mp = model.packed()
    if integrator == "rk4":
        q1, qd1, tgt1 = K.step_wrench_rk4(mp, state.q, state.qd, state.tgt,
                                          tau, fb, fhl, fhr, ftw, dt)
    elif integrator == "semi_implicit":
        # wrench variant of the cheap integrator: one acceleration evaluation
        qdd, tacc = K._accel_wrench(mp, state.q, state.qd, state.tgt, tau, fb, fhl, fhr, ftw)
        qd1 = state.qd + dt * np.asarray(qdd)
        q1 = state.q + dt * qd1
        tv = state.tgt[3:6] + dt * np.asarray(tacc)
        tgt1 = np.concatenate([state.tgt[0:3] + dt * tv, tv])
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    return SystemState(np.asarray(q1), np.asarray(qd1), np.asarray(tgt1), state.time + dt)
