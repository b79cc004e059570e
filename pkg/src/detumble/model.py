"""Robot and target description, forward kinematics, and geometry queries.

The default parameters describe a planar dual-arm chaser: a rectangular base
with two 3-link arms ending in U-shaped effectors whose two tip spheres are
the only bodies allowed to touch the square target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import _kernels as K

MODEL_SCHEMA_VERSION = 1


class ModelValidationError(ValueError):
    """Raised when a model description violates its invariants."""


def wrap_angle(a):
    """Wrap an angle (or array) into (-pi, pi]."""
    w = -((-np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi)
    return float(w) if np.isscalar(a) or np.ndim(a) == 0 else w


@dataclass(frozen=True)
class BaseBody:
    """Table-style base: the listed side lengths are the full extents of a
    0.32 x 0.16 m plate; arms mount at its upper corners."""

    mass_kg: float = 8.31
    inertia_kgm2: float = 0.135
    half_extent_x_m: float = 0.160
    half_extent_y_m: float = 0.080
    cog_offset_m: float = 0.0761
    mount_x_m: float = 0.160
    mount_y_m: float = 0.080


@dataclass(frozen=True)
class Link:
    mass_kg: float
    inertia_kgm2: float
    length_m: float
    cog_offset_m: float


@dataclass(frozen=True)
class Effector:
    width_lc_m: float = 0.137
    depth_ld_m: float = 0.110
    tip_radius_m: float = 0.030


@dataclass(frozen=True)
class TargetBody:
    mass_kg: float = 2.35
    inertia_kgm2: float = 9.33e-3
    side_length_m: float = 0.150


@dataclass(frozen=True)
class RobotModel:
    """Immutable chaser + target description; safe to share across workers."""

    base: BaseBody = field(default_factory=BaseBody)
    links: tuple[Link, Link, Link] = (
        Link(0.633, 2.55e-3, 0.250, 0.229),
        Link(0.647, 1.19e-3, 0.175, 0.162),
        Link(0.207, 5.52e-4, 0.0, 0.0631),
    )
    effector: Effector = field(default_factory=Effector)
    target: TargetBody = field(default_factory=TargetBody)

    def __post_init__(self):
        validate_model(self)

    def packed(self) -> np.ndarray:
        """Flat parameter vector consumed by the jitted kernels."""
        mp = np.empty(K.MP_SIZE)
        b = self.base
        mp[K.MP_M_BASE] = b.mass_kg
        mp[K.MP_I_BASE] = b.inertia_kgm2
        mp[K.MP_HALF_X] = b.half_extent_x_m
        mp[K.MP_HALF_Y] = b.half_extent_y_m
        mp[K.MP_COG_OFF] = b.cog_offset_m
        mp[K.MP_MOUNT_X] = b.mount_x_m
        mp[K.MP_MOUNT_Y] = b.mount_y_m
        for i, ln in enumerate(self.links):
            mp[K.MP_M1 + i] = ln.mass_kg
            mp[K.MP_I1 + i] = ln.inertia_kgm2
            mp[K.MP_C1 + i] = ln.cog_offset_m
        mp[K.MP_L1] = self.links[0].length_m
        mp[K.MP_L2] = self.links[1].length_m
        mp[K.MP_LC] = self.effector.width_lc_m
        mp[K.MP_LD] = self.effector.depth_ld_m
        mp[K.MP_TIP_R] = self.effector.tip_radius_m
        mp[K.MP_M_T] = self.target.mass_kg
        mp[K.MP_I_T] = self.target.inertia_kgm2
        mp[K.MP_SIDE_T] = self.target.side_length_m
        return mp

    @property
    def chaser_mass(self) -> float:
        return self.base.mass_kg + 2.0 * sum(l.mass_kg for l in self.links)

    @property
    def reach(self) -> float:
        """Wrist reach from the arm mount with the arm straight."""
        return self.links[0].length_m + self.links[1].length_m


def validate_model(model: RobotModel) -> None:
    b = model.base
    for name, v in (
        ("base.mass_kg", b.mass_kg),
        ("base.inertia_kgm2", b.inertia_kgm2),
        ("base.half_extent_x_m", b.half_extent_x_m),
        ("base.half_extent_y_m", b.half_extent_y_m),
        ("target.mass_kg", model.target.mass_kg),
        ("target.inertia_kgm2", model.target.inertia_kgm2),
        ("target.side_length_m", model.target.side_length_m),
        ("effector.width_lc_m", model.effector.width_lc_m),
        ("effector.depth_ld_m", model.effector.depth_ld_m),
        ("effector.tip_radius_m", model.effector.tip_radius_m),
    ):
        if not (v > 0.0) or not math.isfinite(v):
            raise ModelValidationError(f"{name} must be positive and finite, got {v!r}")
    for i, ln in enumerate(model.links, start=1):
        if not (ln.mass_kg > 0.0):
            raise ModelValidationError(f"link {i} mass must be positive, got {ln.mass_kg!r}")
        if not (ln.inertia_kgm2 > 0.0):
            raise ModelValidationError(f"link {i} inertia must be positive, got {ln.inertia_kgm2!r}")
        if ln.length_m < 0.0:
            raise ModelValidationError(f"link {i} length must be non-negative, got {ln.length_m!r}")
    for i, ln in enumerate(model.links[:2], start=1):
        if not (ln.length_m > 0.0):
            raise ModelValidationError(f"link {i} length must be positive, got {ln.length_m!r}")
    if model.effector.tip_radius_m >= model.effector.depth_ld_m:
        raise ModelValidationError(
            "effector tip radius must be smaller than its depth "
            f"({model.effector.tip_radius_m} >= {model.effector.depth_ld_m})"
        )


@dataclass
class SystemState:
    """Chaser + target state. q = [x_b, y_b, th_b, phi_L(3), phi_R(3)]."""

    q: np.ndarray
    qd: np.ndarray
    tgt: np.ndarray  # [x, y, th, vx, vy, w]
    time: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.qd = np.asarray(self.qd, dtype=float).copy()
        self.tgt = np.asarray(self.tgt, dtype=float).copy()
        if self.q.shape != (9,) or self.qd.shape != (9,) or self.tgt.shape != (6,):
            raise ValueError("state arrays must have shapes (9,), (9,), (6,)")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))
                and np.all(np.isfinite(self.tgt)) and math.isfinite(self.time)):
            raise ValueError("state entries must be finite")

    @property
    def base_pose(self) -> np.ndarray:
        return self.q[0:3]

    @property
    def base_vel(self) -> np.ndarray:
        return self.qd[0:3]

    def joints(self, arm: int) -> np.ndarray:
        return self.q[3 + 3 * arm: 6 + 3 * arm]

    def joint_rates(self, arm: int) -> np.ndarray:
        return self.qd[3 + 3 * arm: 6 + 3 * arm]

    @property
    def target_pose(self) -> np.ndarray:
        return self.tgt[0:3]

    @property
    def target_vel(self) -> np.ndarray:
        return self.tgt[3:6]

    def normalized(self) -> "SystemState":
        """Copy with all angles wrapped into (-pi, pi]."""
        q = self.q.copy()
        q[2] = wrap_angle(q[2])
        q[3:9] = wrap_angle(q[3:9])
        tgt = self.tgt.copy()
        tgt[2] = wrap_angle(tgt[2])
        return SystemState(q, self.qd, tgt, self.time)

    def copy(self) -> "SystemState":
        return SystemState(self.q, self.qd, self.tgt, self.time)


LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class EffectorPose:
    position: np.ndarray      # wrist frame origin, world
    angle: float
    tip_centers: np.ndarray   # (2, 2), row 0 = local +x tip


def forward_kinematics(model: RobotModel, state: SystemState, arm: int) -> EffectorPose:
    """Effector frame pose and both tip-sphere centres in the inertial frame."""
    _, _, _, tips, eff = K.fk(model.packed(), state.q)
    return EffectorPose(
        position=eff[arm, 0:2].copy(),
        angle=float(eff[arm, 2]),
        tip_centers=tips[arm].copy(),
    )


def fk_all(model: RobotModel, state: SystemState):
    """Raw kinematics arrays (joints, angles, coms, tips, eff) for both arms."""
    return K.fk(model.packed(), state.q)


def manipulability(model: RobotModel, state: SystemState, arm: int) -> float:
    """Manipulability-ellipsoid volume of one arm's translational Jacobian."""
    return float(K.manipulability(model.packed(), state.q, arm))


def arm_jacobian(model: RobotModel, state: SystemState, arm: int) -> np.ndarray:
    """Fixed-base 3x3 effector Jacobian of one arm."""
    jm, _ = K.arm_jacobians(model.packed(), state.q, arm)
    return np.asarray(jm)


def _model_to_dict(model: RobotModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "base": {
            "mass_kg": model.base.mass_kg,
            "inertia_kgm2": model.base.inertia_kgm2,
            "half_extent_x_m": model.base.half_extent_x_m,
            "half_extent_y_m": model.base.half_extent_y_m,
            "cog_offset_m": model.base.cog_offset_m,
            "mount_x_m": model.base.mount_x_m,
            "mount_y_m": model.base.mount_y_m,
        },
        "links": [
            {
                "mass_kg": ln.mass_kg,
                "inertia_kgm2": ln.inertia_kgm2,
                "length_m": ln.length_m,
                "cog_offset_m": ln.cog_offset_m,
            }
            for ln in model.links
        ],
        "effector": {
            "width_lc_m": model.effector.width_lc_m,
            "depth_ld_m": model.effector.depth_ld_m,
            "tip_radius_m": model.effector.tip_radius_m,
        },
        "target": {
            "mass_kg": model.target.mass_kg,
            "inertia_kgm2": model.target.inertia_kgm2,
            "side_length_m": model.target.side_length_m,
        },
    }


def serialize_model(model: RobotModel) -> str:
    return yaml.safe_dump(_model_to_dict(model), sort_keys=False)


def _require(section: dict, key: str, where: str) -> float:
    if key not in section:
        raise ModelValidationError(f"missing field '{key}' in {where}")
    v = section[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ModelValidationError(f"field '{key}' in {where} must be a number, got {v!r}")
    return float(v)


def load_model(config_text: str) -> RobotModel:
    """Parse and validate a YAML model description.

    Omitted sections fall back to the built-in defaults; a present section
    must be complete.
    """
    try:
        data = yaml.safe_load(config_text)
    except yaml.YAMLError as e:
        raise ModelValidationError(f"model config is not valid YAML: {e}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ModelValidationError("model config must be a mapping")
    version = data.get("schema_version", MODEL_SCHEMA_VERSION)
    if version != MODEL_SCHEMA_VERSION:
        raise ModelValidationError(f"unsupported model schema_version {version!r}")

    default = RobotModel()
    base = default.base
    if "base" in data:
        s = data["base"]
        base = BaseBody(
            mass_kg=_require(s, "mass_kg", "base"),
            inertia_kgm2=_require(s, "inertia_kgm2", "base"),
            half_extent_x_m=_require(s, "half_extent_x_m", "base"),
            half_extent_y_m=_require(s, "half_extent_y_m", "base"),
            cog_offset_m=_require(s, "cog_offset_m", "base"),
            mount_x_m=_require(s, "mount_x_m", "base"),
            mount_y_m=_require(s, "mount_y_m", "base"),
        )
    links = default.links
    if "links" in data:
        raw = data["links"]
        if not isinstance(raw, list) or len(raw) != 3:
            raise ModelValidationError("links must be a list of exactly 3 entries")
        links = tuple(
            Link(
                mass_kg=_require(s, "mass_kg", f"links[{i}]"),
                inertia_kgm2=_require(s, "inertia_kgm2", f"links[{i}]"),
                length_m=_require(s, "length_m", f"links[{i}]"),
                cog_offset_m=_require(s, "cog_offset_m", f"links[{i}]"),
            )
            for i, s in enumerate(raw)
        )
    effector = default.effector
    if "effector" in data:
        s = data["effector"]
        effector = Effector(
            width_lc_m=_require(s, "width_lc_m", "effector"),
            depth_ld_m=_require(s, "depth_ld_m", "effector"),
            tip_radius_m=_require(s, "tip_radius_m", "effector"),
        )
    target = default.target
    if "target" in data:
        s = data["target"]
        target = TargetBody(
            mass_kg=_require(s, "mass_kg", "target"),
            inertia_kgm2=_require(s, "inertia_kgm2", "target"),
            side_length_m=_require(s, "side_length_m", "target"),
        )
    return RobotModel(base=base, links=links, effector=effector, target=target)


def load_model_file(path) -> RobotModel:
    with open(path, "r", encoding="utf-8") as f:
        return load_model(f.read())
