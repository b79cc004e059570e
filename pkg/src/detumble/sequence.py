"""Detumble-then-cage sequence: phase machine, planners, and episode engine.

One episode: approach the spinning target, hit it with one arm under
admittance control, retract, repeat until the spin falls below threshold,
then wrap both U-shaped effectors around two opposite corners and confirm
geometric closure. A direct-caging mode skips the detumbling hits and is used
as the force baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .config import RunConfig, SequenceConfig
from .control import (
    ImpedanceParams, ImpedanceState, PidState, SingularityError, TrackerGains,
    TrajectoryPlan, contact_face_normal_angle, eval_trajectory,
    impedance_velocity, plan_goal, resolve_joint_rates, rot,
    select_contact_point, time_scaling, track,
)
from .model import LEFT, RIGHT, RobotModel, SystemState, wrap_angle

# phase codes used in traces
PH_APPROACH = 0
PH_IMPEDANCE = 1
PH_RETRACT = 2
PH_CAGING = 3
PH_CAGED = 4
PH_FAILED = 5

PHASE_NAMES = {
    PH_APPROACH: "approach",
    PH_IMPEDANCE: "impedance_reduce",
    PH_RETRACT: "retract",
    PH_CAGING: "caging_approach",
    PH_CAGED: "caged",
    PH_FAILED: "failed",
}


def theta_for_ydir(d) -> float:
    """Effector angle whose local +y axis points along the unit vector d."""
    return math.atan2(-d[0], d[1])


@dataclass
class Approach:
    code = PH_APPROACH
    plan: TrajectoryPlan
    arm: int
    contact_point: np.ndarray   # predicted, world
    contact_normal: np.ndarray  # predicted face outward normal, world


@dataclass
class ImpedanceReduce:
    code = PH_IMPEDANCE
    since: float
    arm: int
    contact_normal: np.ndarray
    filter: ImpedanceState
    last_contact: float = 0.0


@dataclass
class Retract:
    code = PH_RETRACT
    plan: TrajectoryPlan
    arm: int


@dataclass
class CagingApproach:
    code = PH_CAGING
    stage: str                   # "approach" | "wait" | "close"
    plans: tuple | None          # stage-A plans per arm
    corners: np.ndarray          # (2, 2) target-frame unit corner directions
    stations: np.ndarray         # (2, 2) fixed world directions of the standoff stations
    close_dur: float = 1.8
    close_start: float = 0.0     # absolute time the closure ramp begins
    close_end: float = 0.0


@dataclass
class Caged:
    code = PH_CAGED
    at: float


@dataclass
class Failed:
    code = PH_FAILED
    reason: str
    at: float


@dataclass
class ContactEpisodeLog:
    start: float
    end: float
    max_force: float
    arms: set
    planned: bool


@dataclass
class EpisodeTrace:
    """Everything an episode produced: per-tick series plus event summaries."""

    dt: float
    time: np.ndarray
    phase: np.ndarray
    force_left: np.ndarray
    force_right: np.ndarray
    omega_target: np.ndarray
    theta_base: np.ndarray
    manip_left: np.ndarray
    manip_right: np.ndarray
    target_xy: np.ndarray
    base_xy: np.ndarray
    caged: bool
    cage_time: float | None
    fail_reason: str | None
    max_force: float
    unplanned_contact: bool
    contacts: list
    omega_after_hits: list
    transitions: list
    final_omega: float
    min_manip_left: float
    min_manip_right: float

    @property
    def n(self) -> int:
        return len(self.time)

    @property
    def hit_count(self) -> int:
        return len(self.omega_after_hits)


def initial_state(model: RobotModel, cfg: SequenceConfig) -> SystemState:
    """Chaser at rest at the origin, target spinning in place above it."""
    q = np.zeros(9)
    right = np.asarray(cfg.initial_joints, dtype=float)
    q[3:6] = -right   # left arm mirrored across the base y axis
    q[6:9] = right
    qd = np.zeros(9)
    tgt = np.array([0.0, cfg.separation_m, 0.0, 0.0, 0.0, cfg.omega0])
    return SystemState(q, qd, tgt, 0.0)


# ---------------------------------------------------------------------------
# caging geometry

def closure_radius(model: RobotModel, clearance: float) -> float:
    """Palm-line distance from the target COM at which a corner-wrapped U
    leaves `clearance` between tip spheres and the adjacent faces."""
    e = model.effector
    lt = model.target.side_length_m
    return math.sqrt(2.0) * (0.5 * lt + e.tip_radius_m + clearance) - 0.5 * e.width_lc_m


def corner_trap_pose(model: RobotModel, target_pose, corner_dir_tf, radius: float):
    """Effector pose wrapping one target corner at the given palm radius.

    corner_dir_tf is the unit diagonal direction in the target frame.
    """
    th_t = target_pose[2]
    u = rot(th_t) @ np.asarray(corner_dir_tf, dtype=float)
    wrist = np.asarray(target_pose[0:2], dtype=float) + (radius + model.effector.depth_ld_m) * u
    return np.array([wrist[0], wrist[1], theta_for_ydir(-u)])


def corner_trap_velocity(model: RobotModel, target_state, corner_dir_tf,
                         radius: float, radius_rate: float):
    """Reference velocity of the corner-trap pose as the target moves."""
    th_t, w_t = target_state[2], target_state[5]
    u = rot(th_t) @ np.asarray(corner_dir_tf, dtype=float)
    du = w_t * np.array([-u[1], u[0]])
    r = radius + model.effector.depth_ld_m
    v = np.asarray(target_state[3:5], dtype=float) + radius_rate * u + r * du
    return np.array([v[0], v[1], w_t])


def _blocked_interval(pts: np.ndarray, radius: float):
    """Angular interval of escape directions blocked by one convex obstacle.

    pts are the vertices of the obstacle's Minkowski sum with the (symmetric)
    target polygon, relative to the target COM; radius inflates it (tip
    spheres). Returns (lo, hi) with hi > lo, possibly spanning > pi when the
    target currently overlaps the obstacle, or None when nothing is blocked.
    """
    d = np.hypot(pts[:, 0], pts[:, 1])
    centre = pts.mean(axis=0)
    if _origin_inside(pts, radius):
        ca = math.atan2(centre[1], centre[0])
        return ca - 0.5 * math.pi + 1e-9, ca + 0.5 * math.pi - 1e-9
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    spread = np.arcsin(np.minimum(1.0, radius / np.maximum(d, 1e-12)))
    ca = math.atan2(centre[1], centre[0])
    rel_lo = np.min(wrap_angle(ang - spread - ca))
    rel_hi = np.max(wrap_angle(ang + spread - ca))
    return ca + rel_lo, ca + rel_hi


def _origin_inside(pts: np.ndarray, radius: float) -> bool:
    """Is the origin within `radius` of the convex hull of pts?"""
    hull = _convex_hull(pts)
    n = len(hull)
    inside = True
    mind = np.inf
    for i in range(n):
        a = hull[i]
        b = hull[(i + 1) % n]
        e = b - a
        # outward side test (hull is CCW)
        crossv = e[0] * (-a[1]) - e[1] * (-a[0])
        if crossv < 0.0:
            inside = False
        t = np.clip(-(a @ e) / max(e @ e, 1e-18), 0.0, 1.0)
        mind = min(mind, float(np.hypot(*(a + t * e))))
    return inside or mind <= radius


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, CCW."""
    p = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if len(p) <= 2:
        return p

    def half(seq):
        out = []
        for v in seq:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (v[1] - o[1]) - (a[1] - o[1]) * (v[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(v)
        return out

    lower = half(p)
    upper = half(p[::-1])
    return np.array(lower[:-1] + upper[:-1])


def is_caged(model: RobotModel, state: SystemState) -> bool:
    """No straight-line, collision-free translation lets the target escape.

    Obstacles are the four tip spheres and the base rectangle; the mover is
    the target square. Blocked direction cones are unioned on the circle.
    """
    mp = model.packed()
    _, _, _, tips, _ = K.fk(mp, state.q)
    c = state.tgt[0:2]
    th_t = state.tgt[2]
    h = 0.5 * model.target.side_length_m
    R = rot(th_t)
    sq = (R @ (h * np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]], dtype=float)).T).T

    intervals = []
    for k in range(2):
        for s in range(2):
            o = tips[k, s] - c
            iv = _blocked_interval(o + sq, model.effector.tip_radius_m)
            if iv is not None:
                intervals.append(iv)
    # base rectangle
    bc = state.q[0:2] + rot(state.q[2]) @ np.array([0.0, -model.base.cog_offset_m])
    Rb = rot(state.q[2])
    hx, hy = model.base.half_extent_x_m, model.base.half_extent_y_m
    rect = (Rb @ (np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]], dtype=float)
                  * np.array([hx, hy])).T).T + (bc - c)
    pts = (rect[:, None, :] + sq[None, :, :]).reshape(-1, 2)
    iv = _blocked_interval(pts, 0.0)
    if iv is not None:
        intervals.append(iv)
    return _circle_covered(intervals)


def _circle_covered(intervals) -> bool:
    """Do the angular intervals cover the full circle?"""
    segs = []
    for lo, hi in intervals:
        w = hi - lo
        if w >= 2.0 * math.pi - 1e-12:
            return True
        lo = lo % (2.0 * math.pi)
        if lo + w > 2.0 * math.pi:
            segs.append((lo, 2.0 * math.pi))
            segs.append((0.0, lo + w - 2.0 * math.pi))
        else:
            segs.append((lo, lo + w))
    if not segs:
        return False
    segs.sort()
    if segs[0][0] > 1e-9:
        return False
    reach = 0.0
    for lo, hi in segs:
        if lo > reach + 1e-9:
            return False
        reach = max(reach, hi)
    return reach >= 2.0 * math.pi - 1e-9


# ---------------------------------------------------------------------------
# episode engine

_MERGE_GAP = 0.05      # contact episodes closer than this merge into one [s]
_MISS_GRACE = 1.0      # replan this long after an approach that never touched [s]
_CAGE_RETRY = 3.0      # replan closure if not caged this long after the ramp [s]


class Episode:
    """One simulation run: owns the state, phase machine, and trace buffers."""

    def __init__(self, model: RobotModel, cfg: RunConfig, imp: ImpedanceParams):
        self.model = model
        self.cfg = cfg
        self.imp = imp
        self.seq = cfg.sequence
        self.ctl = cfg.control
        self.mp = model.packed()
        self.kp_c = cfg.contact.stiffness_npm
        self.cp_c = cfg.contact.damping_nspm
        self.mu_c = cfg.contact.friction
        self.dt = cfg.sequence.dt

        st = initial_state(model, self.seq)
        self.q = st.q
        self.qd = st.qd
        self.tgt = st.tgt
        self.t = 0.0
        self.phi_ref = self.q[3:9].copy()
        self.locked = False

        self.traj_gains = TrackerGains(kp=np.full(3, self.ctl.kp),
                                       ki=np.full(3, self.ctl.ki),
                                       kd=np.full(3, self.ctl.kd))
        self.cage_gains = TrackerGains(kp=np.full(3, self.ctl.cage_kp))
        self.pid = (PidState(), PidState())
        self.guard_plan: TrajectoryPlan | None = None
        self.guard_dir: np.ndarray | None = None
        self.guard_arm: int | None = None

        self.rho_cage = closure_radius(model, self.seq.cage_clearance_m)
        self.rho_standoff = self.rho_cage + self.seq.cage_standoff_m
        self._cage_check = 1

        n_max = int(round(self.seq.timeout_s / self.dt)) + int(round(self.seq.settle_max_s / self.dt)) + 8
        self._n_max = n_max
        self._n = 0
        self.tr_time = np.empty(n_max)
        self.tr_phase = np.empty(n_max, dtype=np.int8)
        self.tr_fl = np.empty(n_max)
        self.tr_fr = np.empty(n_max)
        self.tr_w = np.empty(n_max)
        self.tr_thb = np.empty(n_max)
        self.tr_ml = np.empty(n_max)
        self.tr_mr = np.empty(n_max)
        self.tr_txy = np.empty((n_max, 2))
        self.tr_bxy = np.empty((n_max, 2))

        self.contacts: list[ContactEpisodeLog] = []
        self.omega_after_hits: list[float] = []
        self.transitions: list[tuple[float, str]] = []
        self._last_range = float(np.hypot(self.tgt[0] - self.q[0], self.tgt[1] - self.q[1]))
        self.done = False
        self.fail_reason: str | None = None
        self.cage_time: float | None = None

        if self.seq.mode == "direct" or abs(self.seq.omega0) < self.seq.omega_threshold:
            self.phase = self._plan_caging()
        else:
            self.phase = self._plan_hit()
        self.transitions.append((0.0, PHASE_NAMES[self.phase.code]))

    # -- kinematic helpers -------------------------------------------------

    def _fk(self):
        return K.fk(self.mp, self.q)

    def _eff_poses(self):
        _, _, _, _, eff = self._fk()
        return np.asarray(eff)

    def _mounts(self):
        joints, _, _, _, _ = self._fk()
        return np.asarray(joints)[:, 0, :]

    def _set_phase(self, phase):
        self.phase = phase
        self.transitions.append((self.t, PHASE_NAMES[phase.code]))

    # -- planners ------------------------------------------------------------

    def _hit_geometry(self, ts_in, duration, face_k: int = 0):
        """Goal pose and contact data for a timed one-tip hit, or None.

        face_k picks one of the four congruent material faces (the square's
        symmetry makes the contact pattern identical on each, quartering the
        wait for a hittable window). Returns (goal_pose, contact_point_w,
        normal_w, tip_index) where tip_index names the tip that delivers
        the hit.
        """
        m = self.model
        lt = m.target.side_length_m
        lc2 = 0.5 * m.effector.width_lc_m
        ld = m.effector.depth_ld_m
        rtip = m.effector.tip_radius_m
        ts = np.asarray(ts_in, dtype=float).copy()
        ts[2] += 0.5 * math.pi * face_k
        r_tc = select_contact_point(ts[3:6], self.ctl.alpha, lt)
        th_pred = ts[2] + ts[5] * duration
        nu = th_pred + contact_face_normal_angle(ts[3])
        n_hat = np.array([math.cos(nu), math.sin(nu)])
        for s_lead in (1.0, -1.0):
            beta_signed = -s_lead * self.ctl.beta_rad
            th_goal = nu + 0.5 * math.pi + beta_signed
            tip_target_off = (rtip - self.seq.engagement_m) * n_hat
            r_ch = tip_target_off - rot(th_goal) @ np.array([s_lead * lc2, ld])
            goal, contact_w, normal_w = plan_goal(ts, duration, self.ctl.alpha,
                                                  beta_signed, r_ch, lt)
            # trailing tip must hang past the nearer edge, never touching the face
            trail = goal[0:2] + rot(goal[2]) @ np.array([-s_lead * lc2, ld])
            centre_pred = ts[0:2] + ts[3:5] * duration
            tf = rot(th_pred).T @ (trail - centre_pred)
            if abs(tf[1]) < 0.5 * lt + rtip + 0.005:
                continue
            if r_tc[1] != 0.0 and math.copysign(1.0, tf[1]) != math.copysign(1.0, r_tc[1]):
                continue
            return goal, contact_w, normal_w, (0 if s_lead > 0.0 else 1)
        return None

    def _danger_radius(self) -> float:
        """COM-centred circle swept by the target corners, inflated by a tip."""
        m = self.model
        return (0.5 * m.target.side_length_m * math.sqrt(2.0)
                + m.effector.tip_radius_m + 0.012)

    def _late_entry_ok(self, start_pose, goal_pose, duration, corridor=0.05) -> bool:
        """Tips may dip into the corner sweep only on final approach.

        Samples both tip spheres along the planned pose trajectory (a
        reorienting effector swings its tips on a 13 cm lever, so a straight
        point-to-point test misses transits); a sample inside the swept circle
        is acceptable only within `corridor` metres of that tip's final
        position, which permits parking at the kiss point while rejecting
        sideways transits through the sweep.
        """
        m = self.model
        lc2 = 0.5 * m.effector.width_lc_m
        ld = m.effector.depth_ld_m
        r = self._danger_radius()
        sp = np.asarray(start_pose, dtype=float)
        span = np.asarray(goal_pose, dtype=float) - sp
        span[2] = wrap_angle(span[2])
        gp = sp + span
        cg, sg = math.cos(gp[2]), math.sin(gp[2])
        tip_final = []
        for st in (1.0, -1.0):
            tip_final.append((gp[0] + cg * st * lc2 - sg * ld,
                              gp[1] + sg * st * lc2 + cg * ld))
        n = 24
        for i in range(n + 1):
            tau = duration * i / n
            x = i / n
            s = 3.0 * x * x - 2.0 * x ** 3
            pose = sp + s * span
            c = self.tgt[0:2] + self.tgt[3:5] * tau
            ca, sa = math.cos(pose[2]), math.sin(pose[2])
            for j, st in enumerate((1.0, -1.0)):
                tx = pose[0] + ca * st * lc2 - sa * ld
                ty = pose[1] + sa * st * lc2 + ca * ld
                if math.hypot(tx - c[0], ty - c[1]) < r:
                    fx, fy = tip_final[j]
                    if math.hypot(tx - fx, ty - fy) > corridor:
                        return False
        return True

    def _feasible_hit(self, duration, eff, mounts, lateral_tol, face_k=0):
        """Evaluate one candidate hit time; returns (arm, goal, cw, nw) or None."""
        geo = self._hit_geometry(self.tgt, duration, face_k)
        if geo is None:
            return None
        goal, contact_w, normal_w, _tip = geo
        los = self._line_of_sight()
        if lateral_tol is not None and abs(float(normal_w @ los)) > lateral_tol:
            return None
        # never aim at the far side of the target
        if float(normal_w @ los) > 0.85:
            return None
        order = np.argsort([np.hypot(*(eff[a, 0:2] - contact_w)) for a in range(2)])
        reach = self.model.reach
        for arm in order:
            r_mount = float(np.hypot(*(goal[0:2] - mounts[arm])))
            # leave yield margin: a hit near full stretch lets the contact
            # force straighten the arm through its singularity
            if not (0.18 <= r_mount <= 0.75 * reach):
                continue
            dist = float(np.hypot(*(goal[0:2] - eff[arm, 0:2])))
            if duration < max(dist / self.ctl.v_max_mps, self.ctl.t_min_s):
                continue
            if not self._late_entry_ok(eff[arm], goal, duration):
                continue
            return int(arm), goal, contact_w, normal_w
        return None

    def _plan_hit(self):
        """Pick hit time, arm, and trajectory; park the other arm as guard.

        Sideways-facing contact faces are strongly preferred: their pushes stay
        lateral, so the four-pattern rule cancels them across hits instead of
        driving the target away from the chaser.
        """
        joints, _, _, _, eff = self._fk()
        eff = np.asarray(eff)
        mounts = np.asarray(joints)[:, 0, :]
        w = abs(self.tgt[5])
        t_hi = self.ctl.t_min_s + 2.0 * math.pi / max(w, 0.05) + 2.0
        best = None
        for lateral_tol in (0.2, 0.45, None):
            duration = self.ctl.t_min_s
            while duration <= t_hi:
                for face_k in range(4):
                    cand = self._feasible_hit(duration, eff, mounts, lateral_tol, face_k)
                    if cand is not None:
                        best = (*cand, duration)
                        break
                if best is not None:
                    break
                duration += 0.05
            if best is not None:
                break
        if best is None:
            # no clean window: aim further out at the nearest arm, goal pulled
            # into its healthy annulus, keeping the swept-path rule
            duration = self.ctl.t_min_s + 0.5 * math.pi / max(w, 0.05)
            for _ in range(24):
                geo = self._hit_geometry(self.tgt, duration)
                if geo is not None:
                    goal, contact_w, normal_w, _tip = geo
                    arm = int(np.argmin([np.hypot(*(eff[a, 0:2] - contact_w))
                                         for a in range(2)]))
                    goal = self._clamp_reach(goal, mounts[arm])
                    if self._late_entry_ok(eff[arm], goal, duration):
                        best = (arm, goal, contact_w, normal_w, duration)
                        break
                duration += 0.35
            if best is None:
                goal, contact_w, normal_w, _tip = self._hit_geometry(self.tgt, duration)
                arm = int(np.argmin([np.hypot(*(eff[a, 0:2] - contact_w))
                                     for a in range(2)]))
                goal = self._clamp_reach(goal, mounts[arm])
                best = (arm, goal, contact_w, normal_w, duration)
        arm, goal, contact_w, normal_w, duration = best
        plan = TrajectoryPlan.between(eff[arm], goal, duration, self.t)
        self._plan_guard(1 - arm, contact_w)
        self.pid = (PidState(), PidState())
        return Approach(plan=plan, arm=arm, contact_point=contact_w, contact_normal=normal_w)

    def _line_of_sight(self):
        d = self.tgt[0:2] - self.q[0:2]
        return d / max(float(np.hypot(*d)), 1e-9)

    def _guard_pose(self, arm, theta: float):
        """Guard station: mirrored across the line of sight from the hit side,
        pulled toward the chaser so tips clear the corner sweep and stay in
        reach. Orientation is not a guard concern, so theta is the caller's
        current angle: demanding a rotation here can walk the elbow straight.
        """
        gd = self.guard_dir
        pos = self.tgt[0:2] + self.seq.guard_radius_m * gd
        mount = self._mounts()[arm]
        # keep the parked elbow well bent (neither stretched nor folded) and
        # the whole effector clear of the corner sweep, alternating the two
        # projections a few times
        rmax = 0.75 * self.model.reach
        rmin = 0.17
        envelope = self._danger_radius() + 0.145
        for _ in range(4):
            v = pos - mount
            r = float(np.hypot(*v))
            if r > rmax:
                pos = mount + v * (rmax / r)
            elif r < rmin:
                pos = mount + v * (rmin / max(r, 1e-9))
            u = pos - self.tgt[0:2]
            d = float(np.hypot(*u))
            if d < envelope:
                pos = self.tgt[0:2] + u * (envelope / max(d, 1e-9))
            else:
                break
        return np.array([pos[0], pos[1], theta])

    def _plan_guard(self, arm, contact_w):
        los = self._line_of_sight()
        aim_dir = contact_w - self.tgt[0:2]
        n = float(np.hypot(*aim_dir))
        aim_dir = aim_dir / n if n > 1e-9 else -los
        refl = 2.0 * float(aim_dir @ los) * los - aim_dir
        if float(np.hypot(*(refl - aim_dir))) < 0.2:
            refl = rot(0.45) @ aim_dir
        # mild bias toward the chaser side: keeps the station reachable without
        # folding the arm back onto its own mount
        gdir = refl - 0.35 * los
        gdir = gdir / max(float(np.hypot(*gdir)), 1e-9)
        self.guard_dir = gdir
        self.guard_arm = arm
        eff = self._eff_poses()
        pose = self._guard_pose(arm, float(eff[arm, 2]))
        dist = float(np.hypot(*(pose[0:2] - eff[arm, 0:2])))
        duration = max(dist / self.ctl.v_max_mps, self.ctl.t_min_s)
        self.guard_plan = TrajectoryPlan.between(eff[arm], pose, duration, self.t)

    def _guard_command(self, eff):
        arm = self.guard_arm
        if arm is None:
            return np.zeros(3)
        if self.guard_plan is not None and not self.guard_plan.done(self.t):
            pose_d, vel_d = eval_trajectory(self.guard_plan, self.t)
            pose_d = self._clamp_reach(pose_d, self._mounts()[arm])
            return track(pose_d, vel_d, eff[arm], self.cage_gains, self.pid[arm], self.dt,
                         self.ctl.integral_limit)
        pose_d = self._guard_pose(arm, float(eff[arm, 2]))
        vel_d = np.array([self.tgt[3], self.tgt[4], 0.0])
        return track(pose_d, vel_d, eff[arm], self.cage_gains, self.pid[arm], self.dt,
                     self.ctl.integral_limit)

    def _pick_corners(self, th_pred: float):
        """Target-frame diagonal directions, row LEFT/RIGHT.

        The diagonal most perpendicular to the line of sight keeps both traps
        at lateral, reachable positions; the assignment puts each arm on its
        own side.
        """
        los = self._line_of_sight()
        s2 = 1.0 / math.sqrt(2.0)
        cands = [np.array([s2, s2]), np.array([s2, -s2])]
        world = [rot(th_pred) @ c for c in cands]
        pick = int(np.argmin([abs(float(w @ los)) for w in world]))
        axis_tf = cands[pick]
        axis_w = world[pick]
        # left arm takes the corner CCW from the line of sight
        if los[0] * axis_w[1] - los[1] * axis_w[0] > 0.0:
            return np.array([axis_tf, -axis_tf])
        return np.array([-axis_tf, axis_tf])

    def _clamp_reach(self, pose, mount):
        """Pull a desired wrist position back inside the arm's healthy annulus.

        The inner bound stays well above the elbow-fold radius: commanding into
        the fold pins the arm at a singularity it cannot unfold from.
        """
        v = pose[0:2] - mount
        r = float(np.hypot(*v))
        rmax = 0.93 * self.model.reach
        rmin = 0.16
        if r > rmax:
            pose = pose.copy()
            pose[0:2] = mount + v * (rmax / r)
        elif r < rmin:
            pose = pose.copy()
            pose[0:2] = mount + v * (rmin / max(r, 1e-9))
        return pose

    def _station_pose(self, arm, stations, tgt_xy=None):
        """Standoff station: fixed world direction, translating with the target."""
        u = stations[arm]
        c = self.tgt[0:2] if tgt_xy is None else np.asarray(tgt_xy, dtype=float)
        wrist = c + (self.rho_standoff + self.model.effector.depth_ld_m) * u
        return np.array([wrist[0], wrist[1], theta_for_ydir(-u)])

    def _plan_caging(self):
        """Park both arms at fixed lateral standoff stations, then close fast
        while the target diagonal rotates through broadside.

        Chasing the orbiting corner traps directly would drag the references
        out of reach every half turn; instead the stations sit where the
        corners will pass and the closure ramp is timed onto that window.
        """
        eff = self._eff_poses()
        w = self.tgt[5]
        # closure must finish inside the window where both traps stay reachable
        close_dur = float(np.clip(0.35 * (0.5 * math.pi) / max(abs(w), 0.2),
                                  0.6, self.seq.cage_close_s))
        los = self._line_of_sight()
        los_ang = math.atan2(los[1], los[0])
        # distance-based lower bound on the approach duration
        corners0 = self._pick_corners(self.tgt[2])
        dist = max(
            float(np.hypot(*(corner_trap_pose(self.model, self.tgt[0:3], corners0[a],
                                              self.rho_standoff)[0:2] - eff[a, 0:2])))
            for a in range(2))
        duration = max(dist / self.ctl.v_max_mps, self.ctl.t_min_s)
        if abs(w) > 0.05:
            # earliest broadside alignment after arrival plus a short settle
            quarter = 0.5 * math.pi
            t_align_min = duration + 0.25 + 0.5 * close_dur
            phi = self.tgt[2] + w * t_align_min + 0.25 * math.pi - (los_ang + 0.5 * math.pi)
            residual = phi % quarter
            wait = ((quarter - residual) if w > 0.0 else residual) / abs(w)
            if wait >= 0.995 * quarter / abs(w):
                wait = 0.0
            # waiting out a slow rotation costs more drift than the residual
            # misalignment it removes
            wait = min(wait, 2.5)
            t_align = t_align_min + wait
            th_align = self.tgt[2] + w * t_align
        else:
            t_align = duration + 0.25 + 0.5 * close_dur
            th_align = self.tgt[2] + w * t_align
        corners = self._pick_corners(th_align)
        # stations sit where the traps will be when the closure ramp begins
        th_station = th_align - w * 0.5 * close_dur
        stations = np.array([rot(th_station) @ corners[a] for a in range(2)])
        close_start = self.t + t_align - 0.5 * close_dur
        tp = self._tgt_pred(duration)
        mounts = self._mounts()
        plans = []
        for arm in range(2):
            pose = self._clamp_reach(self._station_pose(arm, stations, tp[0:2]),
                                     mounts[arm])
            plans.append(TrajectoryPlan.between(eff[arm], pose, duration, self.t))
        self.pid = (PidState(), PidState())
        return CagingApproach(stage="approach", plans=tuple(plans), corners=corners,
                              stations=stations, close_dur=close_dur,
                              close_start=close_start, close_end=close_start + close_dur)

    def _tgt_pred(self, duration):
        ts = self.tgt
        out = ts.copy()
        out[0:2] = ts[0:2] + ts[3:5] * duration
        out[2] = ts[2] + ts[5] * duration
        return out

    def _track_plan(self, plan, arm, eff, gains):
        """Track a trajectory plan with the desired pose kept inside reach."""
        pose_d, vel_d = eval_trajectory(plan, self.t)
        pose_d = self._clamp_reach(pose_d, self._mounts()[arm])
        return track(pose_d, vel_d, eff[arm], gains, self.pid[arm], self.dt,
                     self.ctl.integral_limit)

    # -- phase machine -------------------------------------------------------

    def step_sequence(self, fh):
        """Effector velocity commands for the current tick; advances the phase.

        fh is the sensed per-arm contact wrench (2, 3). Returns (vel_left,
        vel_right) stacked as a (2, 3) array.
        """
        cmds = np.zeros((2, 3))
        eff = self._eff_poses()
        ph = self.phase

        if isinstance(ph, Approach):
            arm = ph.arm
            fmag = float(np.hypot(fh[arm, 0], fh[arm, 1]))
            goal_r = float(np.hypot(*(ph.plan.goal_pose[0:2] - self._mounts()[arm])))
            if (fmag <= self.seq.force_threshold_n
                    and goal_r > 0.88 * self.model.reach
                    and self.t - ph.plan.start_time > 0.8):
                # base drift pushed the planned hit out of the healthy annulus
                self._set_phase(self._plan_hit())
                ph = self.phase
                arm = ph.arm
                fmag = float(np.hypot(fh[arm, 0], fh[arm, 1]))
            if fmag > self.seq.force_threshold_n:
                filt = ImpedanceState.at(eff[arm])
                self._set_phase(ImpedanceReduce(since=self.t, arm=arm,
                                                contact_normal=ph.contact_normal, filter=filt))
                cmds[arm] = impedance_velocity(self.imp, self.phase.filter, fh[arm], self.dt)
            elif self.t > ph.plan.end_time + _MISS_GRACE:
                self._set_phase(self._plan_hit())
                ph = self.phase
                cmds[ph.arm] = self._track_plan(ph.plan, ph.arm, eff, self.traj_gains)
            else:
                cmds[arm] = self._track_plan(ph.plan, arm, eff, self.traj_gains)
            cmds[self.guard_arm] = self._guard_command(eff)

        elif isinstance(ph, ImpedanceReduce):
            arm = ph.arm
            # workspace watchdog: the admittance filter follows whatever the
            # contact dictates, so end the hold early if it surfs the arm
            # toward the edge of its annulus
            r_mount = float(np.hypot(*(eff[arm, 0:2] - self._mounts()[arm])))
            surfed_out = not (0.17 <= r_mount <= 0.90 * self.model.reach)
            # one absorbed impact per hit: once the bodies separate for good,
            # holding on only invites spring re-engagement grinding
            if float(np.hypot(fh[arm, 0], fh[arm, 1])) > 0.02:
                ph.last_contact = self.t
            separated = self.t - max(ph.last_contact, ph.since) > 0.15
            if surfed_out or separated or self.t - ph.since >= self.seq.impedance_hold_s:
                self.omega_after_hits.append(abs(float(self.tgt[5])))
                away = ph.contact_normal
                goal = eff[arm].copy()
                goal[0:2] = goal[0:2] + self.seq.retract_dist_m * away
                duration = max(self.seq.retract_dist_m / self.ctl.v_max_mps, self.ctl.t_min_s)
                plan = TrajectoryPlan.between(eff[arm], goal, duration, self.t)
                self.pid[arm].integral[:] = 0.0
                self.pid[arm].prev_error = None
                self._set_phase(Retract(plan=plan, arm=arm))
                cmds[arm] = self._track_plan(plan, arm, eff, self.traj_gains)
            else:
                cmds[arm] = impedance_velocity(self.imp, ph.filter, fh[arm], self.dt)
            cmds[self.guard_arm] = self._guard_command(eff)

        elif isinstance(ph, Retract):
            arm = ph.arm
            if ph.plan.done(self.t):
                if abs(float(self.tgt[5])) < self.seq.omega_threshold:
                    self._set_phase(self._plan_caging())
                else:
                    self._set_phase(self._plan_hit())
                return self.step_sequence(fh)
            cmds[arm] = self._track_plan(ph.plan, arm, eff, self.traj_gains)
            cmds[self.guard_arm] = self._guard_command(eff)

        elif isinstance(ph, CagingApproach):
            if ph.stage == "approach" and all(p.done(self.t) for p in ph.plans):
                ph.stage = "wait"
                for p in self.pid:
                    p.integral[:] = 0.0
                    p.prev_error = None
            if ph.stage == "approach":
                for arm in range(2):
                    cmds[arm] = self._track_plan(ph.plans[arm], arm, eff, self.cage_gains)
            elif ph.stage == "wait":
                if self.t >= ph.close_start:
                    ph.stage = "close"
                else:
                    mounts = self._mounts()
                    vel_d = np.array([self.tgt[3], self.tgt[4], 0.0])
                    for arm in range(2):
                        pose_d = self._clamp_reach(self._station_pose(arm, ph.stations),
                                                   mounts[arm])
                        cmds[arm] = track(pose_d, vel_d, eff[arm], self.cage_gains,
                                          self.pid[arm], self.dt, self.ctl.integral_limit)
            if ph.stage == "close":
                s, sdot = time_scaling(self.t - ph.close_start, ph.close_dur)
                rho = self.rho_standoff + s * (self.rho_cage - self.rho_standoff)
                rho_rate = sdot * (self.rho_cage - self.rho_standoff)
                mounts = self._mounts()
                for arm in range(2):
                    pose_d = corner_trap_pose(self.model, self.tgt[0:3], ph.corners[arm], rho)
                    pose_d = self._clamp_reach(pose_d, mounts[arm])
                    vel_d = corner_trap_velocity(self.model, self.tgt, ph.corners[arm],
                                                 rho, rho_rate)
                    cmds[arm] = track(pose_d, vel_d, eff[arm], self.cage_gains,
                                      self.pid[arm], self.dt, self.ctl.integral_limit)
                self._cage_check -= 1
                if self._cage_check <= 0:
                    self._cage_check = 10
                    if is_caged(self.model, self._state_view()):
                        self.cage_time = self.t
                        self.locked = True
                        self._set_phase(Caged(at=self.t))
                        cmds[:] = 0.0
                        return cmds
                if self.t > ph.close_end + _CAGE_RETRY:
                    self._set_phase(self._plan_caging())

        elif isinstance(ph, Caged):
            cmds[:] = 0.0
            held = self.t - ph.at
            spun_down = abs(float(self.tgt[5])) < 0.5 * self.seq.omega_threshold
            if held >= self.seq.settle_s and (spun_down or held >= self.seq.settle_max_s):
                self.done = True

        elif isinstance(ph, Failed):
            cmds[:] = 0.0
            self.done = True

        return cmds

    # -- predicates and logging ----------------------------------------------

    def _guard_workspace(self, cmds):
        """Strip radial stretch/fold components from the commanded velocities
        near the annulus limits; the last line of defence for every phase."""
        joints, _, _, _, eff = self._fk()
        mounts = np.asarray(joints)[:, 0, :]
        eff = np.asarray(eff)
        reach = self.model.reach
        for arm in range(2):
            v = eff[arm, 0:2] - mounts[arm]
            r = float(np.hypot(*v))
            if r < 1e-9:
                continue
            u = v / r
            radial = float(cmds[arm, 0:2] @ u)
            if (r > 0.91 * reach and radial > 0.0) or (r < 0.17 and radial < 0.0):
                cmds[arm, 0:2] -= radial * u

    def _check_failures(self):
        m = self.model
        bc = self.q[0:2] + rot(self.q[2]) @ np.array([0.0, -m.base.cog_offset_m])
        if K.obb_overlap(bc[0], bc[1], self.q[2],
                         m.base.half_extent_x_m, m.base.half_extent_y_m,
                         self.tgt[0], self.tgt[1], self.tgt[2],
                         0.5 * m.target.side_length_m, 0.5 * m.target.side_length_m):
            return "base_collision"
        rng = float(np.hypot(self.tgt[0] - self.q[0], self.tgt[1] - self.q[1]))
        receding = rng > self._last_range
        self._last_range = rng
        if rng > self.seq.eject_range_m and receding:
            return "ejection"
        if self.t >= self.seq.timeout_s:
            return "timeout"
        return None

    def _log_contacts(self, active, ftip):
        if not np.any(active):
            return
        fmax = 0.0
        arms = set()
        for row in range(4):
            if active[row]:
                f = float(np.hypot(ftip[row, 0], ftip[row, 1]))
                fmax = max(fmax, f)
                arms.add(row // 2)
        aimed_phase = (isinstance(self.phase, (Approach, ImpedanceReduce))
                       and arms == {self.phase.arm})
        last = self.contacts[-1] if self.contacts else None
        if last is not None and self.t - last.end <= _MERGE_GAP:
            last.end = self.t
            last.max_force = max(last.max_force, fmax)
            # planned-ness is set by how the contact started; a planned hit may
            # trail into the retract, but a second arm joining in is unplanned
            if not arms <= last.arms:
                last.planned = False
            last.arms |= arms
        else:
            self.contacts.append(ContactEpisodeLog(start=self.t, end=self.t,
                                                   max_force=fmax, arms=arms,
                                                   planned=aimed_phase))

    def _state_view(self) -> SystemState:
        return SystemState(self.q, self.qd, self.tgt, self.t)

    # -- main loop -------------------------------------------------------------

    def tick(self):
        snap = K.contact_snapshot(self.mp, self.kp_c, self.cp_c, self.mu_c,
                                  self.q, self.qd, self.tgt)
        active, pen, pendot, vtrel, normal, point, ftip, qc, ftgt, fh = snap
        active = np.asarray(active)
        ftip = np.asarray(ftip)
        fh = np.asarray(fh)
        self._log_contacts(active, ftip)
        self._record(fh)

        if not isinstance(self.phase, (Caged, Failed)):
            reason = self._check_failures()
            if reason is not None:
                self.fail_reason = reason
                self._set_phase(Failed(reason=reason, at=self.t))
                self.done = True
                return

        cmds = self.step_sequence(fh)
        if self.done:
            return
        if isinstance(self.phase, (Approach, ImpedanceReduce, Retract)):
            self._guard_workspace(cmds)

        if self.locked:
            phid = np.zeros(6)
        else:
            try:
                jstar, corr, smin = K.generalized_jacobian(self.mp, self.q, self.qd)
                if smin < self.ctl.sigma_min:
                    raise SingularityError(
                        f"generalized Jacobian near singular (sigma_min={smin:.3e})")
                b = np.empty(6)
                b[0:3] = cmds[0] - np.asarray(corr)[0:3]
                b[3:6] = cmds[1] - np.asarray(corr)[3:6]
                jstar = np.asarray(jstar)
                soft = 60.0 * self.ctl.sigma_min
                if smin < soft:
                    # damped least squares: bounded, direction-stable rates
                    # while skirting a singular neighbourhood
                    lam = soft - smin
                    phid = jstar.T @ np.linalg.solve(
                        jstar @ jstar.T + lam * lam * np.eye(6), b)
                else:
                    phid = np.linalg.solve(jstar, b)
                # direction-preserving actuator rate saturation
                peak = float(np.abs(phid).max())
                lim = self.ctl.joint_rate_max
                if peak > lim:
                    phid *= lim / peak
            except SingularityError:
                self.fail_reason = "singularity"
                self._set_phase(Failed(reason="singularity", at=self.t))
                self.done = True
                return
            self.phi_ref += phid * self.dt

        if self.seq.integrator == "rk4":
            q1, qd1, tgt1 = K.step_servo_rk4(self.mp, self.kp_c, self.cp_c, self.mu_c,
                                             self.ctl.servo_kp, self.ctl.servo_kd,
                                             self.q, self.qd, self.tgt,
                                             self.phi_ref, phid, self.dt)
        else:
            q1, qd1, tgt1 = K.step_servo_semi(self.mp, self.kp_c, self.cp_c, self.mu_c,
                                              self.ctl.servo_kp, self.ctl.servo_kd,
                                              self.q, self.qd, self.tgt,
                                              self.phi_ref, phid, self.dt)
        self.q = np.asarray(q1)
        self.qd = np.asarray(qd1)
        self.tgt = np.asarray(tgt1)
        self.t += self.dt

    def _record(self, fh):
        i = self._n
        if i >= self._n_max:
            return
        self.tr_time[i] = self.t
        self.tr_phase[i] = self.phase.code
        self.tr_fl[i] = math.hypot(fh[0, 0], fh[0, 1])
        self.tr_fr[i] = math.hypot(fh[1, 0], fh[1, 1])
        self.tr_w[i] = self.tgt[5]
        self.tr_thb[i] = self.q[2]
        self.tr_ml[i] = K.manipulability(self.mp, self.q, 0)
        self.tr_mr[i] = K.manipulability(self.mp, self.q, 1)
        self.tr_txy[i] = self.tgt[0:2]
        self.tr_bxy[i] = self.q[0:2]
        self._n = i + 1

    def run(self) -> EpisodeTrace:
        while not self.done:
            self.tick()
        return self._trace()

    def _trace(self) -> EpisodeTrace:
        n = self._n
        unplanned = any(not c.planned for c in self.contacts)
        max_force = max((c.max_force for c in self.contacts), default=0.0)
        return EpisodeTrace(
            dt=self.dt,
            time=self.tr_time[:n].copy(),
            phase=self.tr_phase[:n].copy(),
            force_left=self.tr_fl[:n].copy(),
            force_right=self.tr_fr[:n].copy(),
            omega_target=self.tr_w[:n].copy(),
            theta_base=self.tr_thb[:n].copy(),
            manip_left=self.tr_ml[:n].copy(),
            manip_right=self.tr_mr[:n].copy(),
            target_xy=self.tr_txy[:n].copy(),
            base_xy=self.tr_bxy[:n].copy(),
            caged=self.cage_time is not None,
            cage_time=self.cage_time,
            fail_reason=self.fail_reason,
            max_force=max_force,
            unplanned_contact=unplanned,
            contacts=list(self.contacts),
            omega_after_hits=list(self.omega_after_hits),
            transitions=list(self.transitions),
            final_omega=float(self.tgt[5]),
            min_manip_left=float(self.tr_ml[:n].min()) if n else 0.0,
            min_manip_right=float(self.tr_mr[:n].min()) if n else 0.0,
        )


def run_episode(model: RobotModel, cfg: RunConfig, imp: ImpedanceParams | None = None,
                mode: str | None = None, omega0: float | None = None) -> EpisodeTrace:
    """Simulate one full sequence and return its trace.

    mode/omega0 override the sequence config for this run.
    """
    from dataclasses import replace as _replace
    seq = cfg.sequence
    if mode is not None:
        seq = _replace(seq, mode=mode)
    if omega0 is not None:
        seq = _replace(seq, omega0=omega0)
    if seq is not cfg.sequence:
        cfg = _replace(cfg, sequence=seq)
    if imp is None:
        imp = cfg.impedance
    return Episode(model, cfg, imp).run()
