"""Planar free-floating dual-arm space robot simulator.

Detumbles a spinning square target by repeated impedance-controlled contacts,
then captures it by caging, and sweeps impedance parameters over a grid of
episodes classified into five outcomes.
"""

from .model import (
    RobotModel, SystemState, EffectorPose, ModelValidationError,
    forward_kinematics, manipulability, load_model, load_model_file,
    serialize_model, LEFT, RIGHT,
)
from .dynamics import (
    GeneralizedInertia, DynamicsInput, Momentum,
    assemble_inertia, nonlinear_terms, system_momentum, combined_momentum,
    generalized_jacobian, step,
)
from .contact import ContactParams, ContactEvent, ContactWrench, detect_contacts, contact_force
from .control import (
    ImpedanceParams, ImpedanceState, TrackerGains, PidState, TrajectoryPlan,
    SingularityError, impedance_velocity, track, time_scaling, eval_trajectory,
    select_contact_point, plan_goal, resolve_joint_rates,
)
from .config import ControlConfig, SequenceConfig, RunConfig, ConfigError, load_config, load_config_file
from .sequence import Episode, EpisodeTrace, initial_state, is_caged, run_episode
from .harness import (
    Outcome, OutcomeClass, SweepGrid, SweepResult, Metrics,
    classify_outcome, metrics, run_sweep, summarize,
    render_grid_table, write_trace_csv, write_sweep_csv,
)

__version__ = "0.1.0"
