"""Contact-point selection, goal planning, trajectory tracking, admittance
filtering, and free-floating joint-rate resolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import RobotModel, SystemState, wrap_angle


class SingularityError(RuntimeError):
    """Raised when the generalized Jacobian is too close to singular to invert."""


def _sign(x: float) -> float:
    """Sign with sign(0) = +1, the tie-breaking convention used throughout."""
    return 1.0 if x >= 0.0 else -1.0


def rot(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class ImpedanceParams:
    """Virtual mass/damper/spring of the admittance filter (diagonal in x, y, th)."""

    mass_kg: float = 0.1
    damping_nspm: float = 1.5
    stiffness_npm: float = 10.0

    def __post_init__(self):
        if not (self.mass_kg > 0.0):
            raise ValueError(f"virtual mass must be positive, got {self.mass_kg}")
        if self.damping_nspm < 0.0:
            raise ValueError(f"virtual damping must be non-negative, got {self.damping_nspm}")
        if self.stiffness_npm < 0.0:
            raise ValueError(f"virtual stiffness must be non-negative, got {self.stiffness_npm}")


@dataclass
class ImpedanceState:
    """Admittance filter state relative to the equilibrium captured at first touch."""

    equilibrium: np.ndarray
    disp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def at(cls, pose) -> "ImpedanceState":
        return cls(equilibrium=np.asarray(pose, dtype=float).copy())


def impedance_velocity(imp: ImpedanceParams, st: ImpedanceState, f_h, dt: float) -> np.ndarray:
    """One admittance-filter step; returns the commanded effector velocity.

    Integrates m*dx'' + d*dx' + k*dx = F semi-implicitly (implicit in damping,
    stable for the stiff damping/mass ratios in the sweep grid) and returns the
    new displacement rate as the velocity command.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    f = np.asarray(f_h, dtype=float)
    m, d, k = imp.mass_kg, imp.damping_nspm, imp.stiffness_npm
    vel = (st.vel + (dt / m) * (f - k * st.disp)) / (1.0 + dt * d / m)
    st.vel = vel
    st.disp = st.disp + dt * vel
    return vel.copy()


@dataclass(frozen=True)
class TrackerGains:
    kp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ki: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kd: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            if np.any(v < 0.0):
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, v)


@dataclass
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_error: np.ndarray | None = None


def track(desired_pose, desired_vel, measured_pose, gains: TrackerGains,
          pid: PidState, dt: float, integral_limit: float = 0.5) -> np.ndarray:
    """Feedforward velocity plus PID on the pose error (angle wrap-aware)."""
    dp = np.asarray(desired_pose, dtype=float)
    mp_ = np.asarray(measured_pose, dtype=float)
    err = dp - mp_
    err[2] = wrap_angle(err[2])
    pid.integral = np.clip(pid.integral + err * dt, -integral_limit, integral_limit)
    derr = np.zeros(3) if pid.prev_error is None else (err - pid.prev_error) / dt
    pid.prev_error = err.copy()
    return (np.asarray(desired_vel, dtype=float)
            + gains.kp * err + gains.ki * pid.integral + gains.kd * derr)


def time_scaling(t: float, duration: float):
    """Cubic scaling s(t) = 3t^2/T^2 - 2t^3/T^3 and its rate, clamped to [0, T]."""
    if t <= 0.0:
        return 0.0, 0.0
    if t >= duration:
        return 1.0, 0.0
    x = t / duration
    s = 3.0 * x * x - 2.0 * x * x * x
    sdot = (6.0 * x - 6.0 * x * x) / duration
    return s, sdot


@dataclass(frozen=True)
class TrajectoryPlan:
    """Straight-line pose trajectory with cubic time scaling."""

    start_pose: np.ndarray
    goal_pose: np.ndarray   # angle stored unwrapped relative to the start
    duration: float
    start_time: float

    def __post_init__(self):
        if not (self.duration > 0.0):
            raise ValueError(f"trajectory duration must be positive, got {self.duration}")

    @classmethod
    def between(cls, start_pose, goal_pose, duration: float, start_time: float) -> "TrajectoryPlan":
        sp = np.asarray(start_pose, dtype=float).copy()
        gp = np.asarray(goal_pose, dtype=float).copy()
        gp[2] = sp[2] + wrap_angle(gp[2] - sp[2])
        return cls(sp, gp, float(duration), float(start_time))

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    def done(self, t: float) -> bool:
        return t >= self.end_time


def eval_trajectory(plan: TrajectoryPlan, t: float):
    """Desired pose and velocity at absolute time t (clamped to the endpoints)."""
    s, sdot = time_scaling(t - plan.start_time, plan.duration)
    span = plan.goal_pose - plan.start_pose
    return plan.start_pose + s * span, sdot * span


def select_contact_point(target_vel, alpha: float, side_length: float) -> np.ndarray:
    """Contact point on the target edge, in the target frame.

    The face is picked by the sign of the target's x velocity and the edge
    offset by the sign of velocity times spin, so one push damps both motions;
    alpha in [0, 1] moves the point from the edge centre toward the apex.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    u = float(target_vel[0])
    w = float(target_vel[2])
    return np.array([
        0.5 * side_length * _sign(u),
        -0.5 * side_length * alpha * _sign(u * w),
    ])


def contact_face_normal_angle(u_t: float) -> float:
    """Target-frame angle of the planned contact face's outward normal
    (0 for the +x face, pi for the -x face)."""
    return 0.0 if _sign(u_t) > 0.0 else math.pi


def plan_goal(target_state, duration: float, alpha: float, beta: float,
              r_ch, side_length: float):
    """Goal pose of the effector for a timed hit on the rotating target.

    Propagates the target by `duration`, places the contact point from the
    four-pattern rule, then offsets by r_ch (inertial frame). The effector
    angle faces the predicted contact face, tilted by the signed lead angle
    beta. Returns (goal_pose (3,), contact_point_world (2,), normal_world (2,)).
    """
    ts = np.asarray(target_state, dtype=float)
    p_t, th_t = ts[0:2], ts[2]
    v_t, w_t = ts[3:5], ts[5]
    r_tc = select_contact_point([ts[3], ts[4], ts[5]], alpha, side_length)
    th_pred = th_t + w_t * duration
    contact_w = p_t + v_t * duration + rot(th_pred) @ r_tc
    goal_p = contact_w + np.asarray(r_ch, dtype=float)
    nu = th_pred + contact_face_normal_angle(ts[3])
    goal_th = wrap_angle(nu + 0.5 * math.pi + beta)
    normal_w = np.array([math.cos(nu), math.sin(nu)])
    return np.array([goal_p[0], goal_p[1], goal_th]), contact_w, normal_w


def resolve_joint_rates(model: RobotModel, state: SystemState,
                        vel_left, vel_right,
                        sigma_min: float = 1e-4) -> np.ndarray:
    """Joint rates realizing the desired effector velocities of both arms.

    Solves the free-floating rate relationship including the momentum feed
    term. Raises SingularityError when the generalized Jacobian's smallest
    singular value falls below sigma_min.
    """
    jstar, corr, smin = K.generalized_jacobian(model.packed(), state.q, state.qd)
    if smin < sigma_min:
        raise SingularityError(
            f"generalized Jacobian near singular (sigma_min={smin:.3e} < {sigma_min:.3e})")
    b = np.empty(6)
    b[0:3] = np.asarray(vel_left, dtype=float) - corr[0:3]
    b[3:6] = np.asarray(vel_right, dtype=float) - corr[3:6]
    return np.linalg.solve(np.asarray(jstar), b)
