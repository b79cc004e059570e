"""Tip-sphere vs square-target contact detection and penalty forces."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .model import RobotModel, SystemState


@dataclass(frozen=True)
class ContactParams:
    stiffness_npm: float = 800.0
    damping_nspm: float = 2.0
    friction: float = 0.1

    def __post_init__(self):
        if not (self.stiffness_npm > 0.0):
            raise ValueError(f"contact stiffness must be positive, got {self.stiffness_npm}")
        if self.damping_nspm < 0.0:
            raise ValueError(f"contact damping must be non-negative, got {self.damping_nspm}")
        if self.friction < 0.0:
            raise ValueError(f"friction coefficient must be non-negative, got {self.friction}")


@dataclass(frozen=True)
class ContactEvent:
    """One tip sphere touching the target.

    normal points from the target surface toward the sphere centre;
    penetration_rate is positive while the bodies keep closing; tangential_vel
    is the tip's velocity relative to the target surface along the tangent
    (90 deg CCW from the normal).
    """

    point: np.ndarray
    normal: np.ndarray
    penetration: float
    penetration_rate: float
    tangential_vel: float
    arm: int
    tip: int

    def __post_init__(self):
        n = float(np.hypot(self.normal[0], self.normal[1]))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"contact normal must be unit length, got norm {n}")
        if self.penetration < 0.0:
            raise ValueError(f"penetration must be non-negative, got {self.penetration}")


@dataclass(frozen=True)
class ContactWrench:
    """Equal-and-opposite force pair at the shared contact point."""

    normal_force: float
    tangential_force: float
    force_on_tip: np.ndarray
    point: np.ndarray

    @property
    def force_on_target(self) -> np.ndarray:
        return -self.force_on_tip

    def torque_on_target(self, target_com) -> float:
        r = self.point - np.asarray(target_com, dtype=float)
        f = self.force_on_target
        return float(r[0] * f[1] - r[1] * f[0])


def detect_contacts(model: RobotModel, state: SystemState) -> list[ContactEvent]:
    """All tip spheres currently touching the target (boundary inclusive)."""
    active, pen, pendot, vtrel, normal, point, *_ = K.contact_snapshot(
        model.packed(), 1.0, 0.0, 0.0, state.q, state.qd, state.tgt)
    events = []
    for row in range(4):
        if active[row]:
            events.append(ContactEvent(
                point=np.asarray(point[row]).copy(),
                normal=np.asarray(normal[row]).copy(),
                penetration=float(pen[row]),
                penetration_rate=float(pendot[row]),
                tangential_vel=float(vtrel[row]),
                arm=row // 2,
                tip=row % 2,
            ))
    return events


SLIP_REGULARIZATION = 1e-3  # m/s; Coulomb force ramps linearly below this slip


def contact_force(event: ContactEvent, params: ContactParams) -> ContactWrench:
    """Spring-damper normal force (tension clamped at zero) plus Coulomb friction.

    Friction is kinetic, opposing the tangential slip, with a linear ramp
    inside +-SLIP_REGULARIZATION so a resting contact cannot chatter.
    """
    fn = params.stiffness_npm * event.penetration + params.damping_nspm * event.penetration_rate
    if fn < 0.0:
        fn = 0.0
    sgn = float(np.clip(event.tangential_vel / SLIP_REGULARIZATION, -1.0, 1.0))
    ft = -sgn * params.friction * abs(fn)
    tangent = np.array([-event.normal[1], event.normal[0]])
    force = fn * event.normal + ft * tangent
    return ContactWrench(
        normal_force=float(fn),
        tangential_force=float(ft),
        force_on_tip=force,
        point=event.point.copy(),
    )
