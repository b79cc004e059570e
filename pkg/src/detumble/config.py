"""Run configuration: control, contact, and sequence parameters with defaults."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
import yaml

from .contact import ContactParams
from .control import ImpedanceParams

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ControlConfig:
    """Planner and tracker parameters."""

    alpha: float = 0.8                 # contact point offset fraction along the edge
    beta_rad: float = 0.175            # effector lead tilt at contact
    gamma_rad: float = 0.175           # approach-direction offset, kept configurable
    # Feedforward alone only works when the rate commands are realized exactly;
    # with servo dynamics, saturation, and contact recoil in the loop a small
    # position gain is needed to keep the arms on their clamped references.
    kp: float = 2.0                    # trajectory feedback gains
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float = 0.5
    v_max_mps: float = 0.12            # nominal cruise speed used to size durations
    t_min_s: float = 0.8               # shortest allowed trajectory duration
    sigma_min: float = 1e-4            # singularity threshold on the generalized Jacobian
    servo_kp: float = 200.0            # joint velocity-servo stiffness
    servo_kd: float = 2.0
    cage_kp: float = 4.0               # pose-tracking gain of the caging servo loop
    joint_rate_max: float = 3.5        # actuator rate saturation [rad/s]


@dataclass(frozen=True)
class SequenceConfig:
    """Detumble/caging sequence parameters."""

    omega_threshold: float = 0.5       # spin below which caging starts [rad/s]
    force_threshold_n: float = 0.1     # effector force that flags a hit
    impedance_hold_s: float = 0.5      # time spent in the reduction mode per hit
    retract_dist_m: float = 0.12       # back-off along the contact normal
    mode: str = "detumble"             # "detumble" or "direct"
    omega0: float = 1.0                # initial target spin [rad/s]
    separation_m: float = 0.36         # initial base-to-target COM distance
    engagement_m: float = 0.0015        # planned tip/face overlap at the hit
    guard_radius_m: float = 0.30       # guard-arm wrist standoff from the target COM
    cage_standoff_m: float = 0.06     # extra radius above the closure distance
    cage_clearance_m: float = 0.008    # tip-to-face clearance at the caged pose
    cage_close_s: float = 1.8          # closure ramp duration cap (shrinks with spin)
    settle_s: float = 2.5              # minimum post-lock coast
    settle_max_s: float = 25.0         # cap on the post-lock grind-down wait
    timeout_s: float = 120.0
    eject_range_m: float = 1.5
    dt: float = 1e-3
    integrator: str = "rk4"            # or "semi_implicit"
    initial_joints: tuple[float, ...] = (-1.4123, 2.2233, -0.8110)  # right arm; left mirrored

    def __post_init__(self):
        for name in ("omega_threshold", "force_threshold_n", "impedance_hold_s",
                     "retract_dist_m", "timeout_s", "dt"):
            v = getattr(self, name)
            if not (v > 0.0) or not math.isfinite(v):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if self.mode not in ("detumble", "direct"):
            raise ConfigError(f"mode must be 'detumble' or 'direct', got {self.mode!r}")
        if self.integrator not in ("rk4", "semi_implicit"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")


@dataclass(frozen=True)
class RunConfig:
    control: ControlConfig = field(default_factory=ControlConfig)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    contact: ContactParams = field(default_factory=ContactParams)
    impedance: ImpedanceParams = field(default_factory=ImpedanceParams)


def _merge_dataclass(cls, defaults, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{where}': {sorted(unknown)}")
    clean = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(v)
        clean[k] = v
    try:
        return replace(defaults, **clean)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value in '{where}': {e}") from e


def load_config(text: str) -> RunConfig:
    """Parse a YAML run configuration; omitted sections keep their defaults."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    version = data.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    default = RunConfig()
    control = _merge_dataclass(ControlConfig, default.control, data.get("control", {}), "control")
    sequence = _merge_dataclass(SequenceConfig, default.sequence, data.get("sequence", {}), "sequence")
    cont = data.get("contact", {})
    if not isinstance(cont, dict):
        raise ConfigError("section 'contact' must be a mapping")
    contact = ContactParams(
        stiffness_npm=float(cont.get("stiffness_npm", 800.0)),
        damping_nspm=float(cont.get("damping_nspm", 2.0)),
        friction=float(cont.get("friction", 0.1)),
    )
    imp = data.get("impedance", {})
    if not isinstance(imp, dict):
        raise ConfigError("section 'impedance' must be a mapping")
    impedance = ImpedanceParams(
        mass_kg=float(imp.get("mass_kg", 0.1)),
        damping_nspm=float(imp.get("damping_nspm", 1.5)),
        stiffness_npm=float(imp.get("stiffness_npm", 10.0)),
    )
    return RunConfig(control=control, sequence=sequence, contact=contact, impedance=impedance)


def load_config_file(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return load_config(f.read())
