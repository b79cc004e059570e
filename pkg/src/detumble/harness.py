"""Impedance-parameter sweep: outcome classification, metrics, persistence."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .config import RunConfig
from .control import ImpedanceParams
from .model import RobotModel
from .sequence import EpisodeTrace, run_episode

WORKERS_ENV = "DETUMBLE_WORKERS"


class OutcomeClass(Enum):
    SUCCESS_FORCE_REDUCED = "success_force_reduced"
    SUCCESS_NO_REDUCTION = "success_no_reduction"
    SUCCESS_UNPLANNED_CONTACTS = "success_unplanned_contacts"
    FAIL_EJECTION = "fail_ejection"
    FAIL_BASE_COLLISION = "fail_base_collision"

    @property
    def success(self) -> bool:
        return self.value.startswith("success")


CLASS_SYMBOLS = {
    OutcomeClass.SUCCESS_FORCE_REDUCED: "G",
    OutcomeClass.SUCCESS_NO_REDUCTION: "g",
    OutcomeClass.SUCCESS_UNPLANNED_CONTACTS: "Y",
    OutcomeClass.FAIL_EJECTION: "E",
    OutcomeClass.FAIL_BASE_COLLISION: "B",
}
ERROR_SYMBOL = "!"

CLASS_LEGEND = [
    ("G", OutcomeClass.SUCCESS_FORCE_REDUCED, "success: caging, peak force below the direct-caging baseline"),
    ("g", OutcomeClass.SUCCESS_NO_REDUCTION, "success: caging without force reduction"),
    ("Y", OutcomeClass.SUCCESS_UNPLANNED_CONTACTS, "success: caging with unplanned contacts"),
    ("E", OutcomeClass.FAIL_EJECTION, "failure: target ejected"),
    ("B", OutcomeClass.FAIL_BASE_COLLISION, "failure: target hit the base"),
]


@dataclass(frozen=True)
class EpisodeSummary:
    """The slice of a trace that classification and the sweep CSV need."""

    caged: bool
    cage_time: float | None
    fail_reason: str | None
    max_force: float
    unplanned_contact: bool
    contact_count: int
    hit_count: int
    final_omega: float
    min_manip_left: float
    min_manip_right: float
    duration: float


def summarize(trace: EpisodeTrace) -> EpisodeSummary:
    return EpisodeSummary(
        caged=trace.caged,
        cage_time=trace.cage_time,
        fail_reason=trace.fail_reason,
        max_force=trace.max_force,
        unplanned_contact=trace.unplanned_contact,
        contact_count=len(trace.contacts),
        hit_count=trace.hit_count,
        final_omega=trace.final_omega,
        min_manip_left=trace.min_manip_left,
        min_manip_right=trace.min_manip_right,
        duration=float(trace.time[-1]) if trace.n else 0.0,
    )


@dataclass(frozen=True)
class Outcome:
    klass: OutcomeClass
    max_force: float
    final_omega: float
    contact_count: int
    time_to_cage: float | None
    min_manip_left: float
    min_manip_right: float
    annotation: str | None = None


def classify_outcome(trace, baseline) -> Outcome:
    """Map a finished episode to exactly one of the five outcome classes.

    baseline is the direct-caging episode at the same initial spin; its peak
    force is the reduction reference. Unplanned-contact success takes
    precedence over the force comparison. Terminal states without an explicit
    failure predicate (timeout, singularity) fall into the ejection class with
    an annotation.
    """
    ep = trace if isinstance(trace, EpisodeSummary) else summarize(trace)
    base = baseline if isinstance(baseline, EpisodeSummary) else summarize(baseline)
    annotation = None
    if ep.caged:
        if ep.unplanned_contact:
            klass = OutcomeClass.SUCCESS_UNPLANNED_CONTACTS
        elif ep.max_force < base.max_force:
            klass = OutcomeClass.SUCCESS_FORCE_REDUCED
        else:
            klass = OutcomeClass.SUCCESS_NO_REDUCTION
    else:
        if ep.fail_reason == "base_collision":
            klass = OutcomeClass.FAIL_BASE_COLLISION
        elif ep.fail_reason == "ejection":
            klass = OutcomeClass.FAIL_EJECTION
        else:
            klass = OutcomeClass.FAIL_EJECTION
            annotation = ep.fail_reason or "unclassified"
    return Outcome(
        klass=klass,
        max_force=ep.max_force,
        final_omega=ep.final_omega,
        contact_count=ep.contact_count,
        time_to_cage=ep.cage_time,
        min_manip_left=ep.min_manip_left,
        min_manip_right=ep.min_manip_right,
        annotation=annotation,
    )


@dataclass(frozen=True)
class SweepGrid:
    m_list: tuple = (0.01, 0.05, 0.1, 0.5)
    d_list: tuple = tuple(round(1.5 * i, 2) for i in range(11))
    k_list: tuple = tuple(10.0 * i for i in range(11))
    omega0: float = 1.0

    def __post_init__(self):
        for name in ("m_list", "d_list", "k_list"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) == 0:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, v)
        if any(m <= 0.0 for m in self.m_list):
            raise ValueError("virtual masses must be positive")
        if any(d < 0.0 for d in self.d_list):
            raise ValueError("virtual dampings must be non-negative")
        if any(k < 0.0 for k in self.k_list):
            raise ValueError("virtual stiffnesses must be non-negative")

    def cells(self):
        for m in self.m_list:
            for d in self.d_list:
                for k in self.k_list:
                    yield (m, d, k)

    @property
    def size(self) -> int:
        return len(self.m_list) * len(self.d_list) * len(self.k_list)


@dataclass
class SweepResult:
    grid: SweepGrid
    baseline: EpisodeSummary
    outcomes: dict          # (m, d, k) -> Outcome
    errors: dict            # (m, d, k) -> str


_WORKER_CTX: dict = {}


def _worker_init(model, cfg, omega0):
    _WORKER_CTX["model"] = model
    _WORKER_CTX["cfg"] = cfg
    _WORKER_CTX["omega0"] = omega0


def _run_cell(cell):
    m, d, k = cell
    imp = ImpedanceParams(mass_kg=m, damping_nspm=d, stiffness_npm=k)
    trace = run_episode(_WORKER_CTX["model"], _WORKER_CTX["cfg"], imp,
                        mode="detumble", omega0=_WORKER_CTX["omega0"])
    return cell, summarize(trace)


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def run_sweep(model: RobotModel, cfg: RunConfig, grid: SweepGrid,
              workers: int | None = None, out_dir=None,
              progress=None) -> SweepResult:
    """One direct-caging baseline, then one detumble episode per grid cell.

    Episodes that raise are isolated and recorded as errored cells. When
    out_dir is given, the summary CSV and the rendered grid table are written
    there.
    """
    if workers is None:
        workers = default_workers()
    baseline_trace = run_episode(model, cfg, mode="direct", omega0=grid.omega0)
    baseline = summarize(baseline_trace)

    cells = list(grid.cells())
    summaries: dict = {}
    errors: dict = {}
    if workers <= 1:
        _worker_init(model, cfg, grid.omega0)
        for i, cell in enumerate(cells):
            try:
                _, s = _run_cell(cell)
                summaries[cell] = s
            except Exception as e:  # isolated per spec: record and continue
                errors[cell] = f"{type(e).__name__}: {e}"
            if progress:
                progress(i + 1, len(cells), cell)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(model, cfg, grid.omega0)) as pool:
            futs = {pool.submit(_run_cell, cell): cell for cell in cells}
            ndone = 0
            for fut in as_completed(futs):
                cell = futs[fut]
                try:
                    _, s = fut.result()
                    summaries[cell] = s
                except Exception as e:
                    errors[cell] = f"{type(e).__name__}: {e}"
                ndone += 1
                if progress:
                    progress(ndone, len(cells), cell)

    outcomes = {cell: classify_outcome(s, baseline) for cell, s in summaries.items()}
    result = SweepResult(grid=grid, baseline=baseline, outcomes=outcomes, errors=errors)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(result, out / "sweep_summary.csv")
        (out / "grid_table.txt").write_text(render_grid_table(result), encoding="utf-8")
        write_trace_csv(baseline_trace, out / "baseline_trace.csv")
    return result


# ---------------------------------------------------------------------------
# metrics and persistence

TRACE_HEADER = ["time_s", "phase", "f_l_n", "f_r_n", "omega_t_rads",
                "theta_base_rad", "w_l", "w_r"]

SWEEP_HEADER = ["m_im_kg", "d_im_nspm", "k_im_npm", "outcome", "max_force_n",
                "contact_count", "time_to_cage_s", "final_omega_rads", "annotation"]

_PHASE_LABELS = {0: "approach", 1: "impedance_reduce", 2: "retract",
                 3: "caging_approach", 4: "caged", 5: "failed"}


@dataclass(frozen=True)
class Metrics:
    """Per-episode series resampled at the output rate, plus summary scalars."""

    time: np.ndarray
    phase: np.ndarray
    force_left: np.ndarray
    force_right: np.ndarray
    omega_target: np.ndarray
    theta_base: np.ndarray
    manip_left: np.ndarray
    manip_right: np.ndarray
    max_force: float
    final_omega: float
    min_manip_left: float
    min_manip_right: float
    time_to_cage: float | None


def metrics(trace: EpisodeTrace, rate_hz: float = 100.0) -> Metrics:
    """Resample the trace onto a uniform grid for output."""
    if trace.n == 0:
        raise ValueError("empty trace")
    t = trace.time
    grid = np.arange(t[0], t[-1] + 1e-12, 1.0 / rate_hz)

    def rs(x):
        return np.interp(grid, t, x)

    idx = np.minimum(np.searchsorted(t, grid, side="right") - 1, trace.n - 1)
    return Metrics(
        time=grid,
        phase=trace.phase[idx],
        force_left=rs(trace.force_left),
        force_right=rs(trace.force_right),
        omega_target=rs(trace.omega_target),
        theta_base=rs(trace.theta_base),
        manip_left=rs(trace.manip_left),
        manip_right=rs(trace.manip_right),
        max_force=float(max(trace.force_left.max(), trace.force_right.max())),
        final_omega=trace.final_omega,
        min_manip_left=trace.min_manip_left,
        min_manip_right=trace.min_manip_right,
        time_to_cage=trace.cage_time,
    )


def write_trace_csv(trace: EpisodeTrace, path, rate_hz: float = 100.0) -> None:
    """Trace CSV: time_s, phase, f_l_n, f_r_n, omega_t_rads, theta_base_rad, w_l, w_r."""
    m = metrics(trace, rate_hz)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(TRACE_HEADER)
        for i in range(len(m.time)):
            w.writerow([
                f"{m.time[i]:.4f}",
                _PHASE_LABELS[int(m.phase[i])],
                f"{m.force_left[i]:.6g}",
                f"{m.force_right[i]:.6g}",
                f"{m.omega_target[i]:.6g}",
                f"{m.theta_base[i]:.6g}",
                f"{m.manip_left[i]:.6g}",
                f"{m.manip_right[i]:.6g}",
            ])


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_HEADER)
        for cell in result.grid.cells():
            m, d, k = cell
            if cell in result.outcomes:
                o = result.outcomes[cell]
                w.writerow([m, d, k, o.klass.value, f"{o.max_force:.6g}",
                            o.contact_count,
                            "" if o.time_to_cage is None else f"{o.time_to_cage:.3f}",
                            f"{o.final_omega:.6g}", o.annotation or ""])
            elif cell in result.errors:
                w.writerow([m, d, k, "error", "", "", "", "", result.errors[cell]])


def render_grid_table(result: SweepResult) -> str:
    """Text tables, one block per virtual mass: rows k, columns d."""
    g = result.grid
    out = io.StringIO()
    out.write("legend:\n")
    for sym, _, desc in CLASS_LEGEND:
        out.write(f"  {sym}  {desc}\n")
    out.write(f"  {ERROR_SYMBOL}  episode error\n")
    out.write(f"baseline (direct caging, omega0={g.omega0} rad/s): "
              f"peak force {result.baseline.max_force:.3g} N, "
              f"{'caged' if result.baseline.caged else 'not caged'}\n")
    for m in g.m_list:
        out.write(f"\nm_im = {m} kg\n")
        out.write("k_im \\ d_im |" + "".join(f"{d:>6.1f}" for d in g.d_list) + "\n")
        out.write("-" * (13 + 6 * len(g.d_list)) + "\n")
        for k in g.k_list:
            row = [f"{k:>11.0f} |"]
            for d in g.d_list:
                cell = (m, d, k)
                if cell in result.outcomes:
                    row.append(f"{CLASS_SYMBOLS[result.outcomes[cell].klass]:>6}")
                elif cell in result.errors:
                    row.append(f"{ERROR_SYMBOL:>6}")
                else:
                    row.append(f"{'?':>6}")
            out.write("".join(row) + "\n")
    return out.getvalue()


def load_sweep_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def sweep_csv_to_table(path) -> str:
    """Re-render the grid table from a persisted sweep CSV."""
    rows = load_sweep_csv(path)
    if not rows:
        raise ValueError("sweep CSV is empty")
    m_list = sorted({float(r["m_im_kg"]) for r in rows})
    d_list = sorted({float(r["d_im_nspm"]) for r in rows})
    k_list = sorted({float(r["k_im_npm"]) for r in rows})
    by_cell = {(float(r["m_im_kg"]), float(r["d_im_nspm"]), float(r["k_im_npm"])): r
               for r in rows}
    out = io.StringIO()
    out.write("legend:\n")
    for sym, kl, desc in CLASS_LEGEND:
        out.write(f"  {sym}  {desc}\n")
    out.write(f"  {ERROR_SYMBOL}  episode error\n")
    symbol_by_value = {kl.value: sym for sym, kl, _ in CLASS_LEGEND}
    for m in m_list:
        out.write(f"\nm_im = {m} kg\n")
        out.write("k_im \\ d_im |" + "".join(f"{d:>6.1f}" for d in d_list) + "\n")
        out.write("-" * (13 + 6 * len(d_list)) + "\n")
        for k in k_list:
            row = [f"{k:>11.0f} |"]
            for d in d_list:
                r = by_cell.get((m, d, k))
                if r is None:
                    row.append(f"{'?':>6}")
                else:
                    row.append(f"{symbol_by_value.get(r['outcome'], ERROR_SYMBOL):>6}")
            out.write("".join(row) + "\n")
    return out.getvalue()
