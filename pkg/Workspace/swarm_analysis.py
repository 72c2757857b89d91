#!/usr/bin/env python3
"""
Swarm Payload Simulator - analysis and verification
Equilibrium checks, linearised hover stability (analytic roots and a
perturbation-decay experiment), mission metrics, acceptance verdicts and
the CSV / JSON writers and readers for trajectory logs
"""

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.signal import find_peaks
from scipy.spatial.distance import pdist

from apf_controller import configured_gravity_compensation, swarm_target
from cable_dynamics import (CableChain, anchor_kinematics, cable_accelerations,
                            static_cable_elongation)
from sim_engine import SwarmPayloadModel, TimeSeriesLog, equilibrium_state, run_scenario
from sim_types import (AcceptanceConfig, NotSteadyError, OutputError, SimConfig,
                       SlackEquilibriumError, SystemState, build_config, deep_merge)

logger = logging.getLogger(__name__)

STEADY_SPEED_LIMIT = 1e-3
NO_RESPONSE_LEVEL = 1e-9
DECAY_TOLERANCE = 0.2


# ---------------------------------------------------------------------------
# Equilibrium
# ---------------------------------------------------------------------------

@dataclass
class EquilibriumReport:
    cable_angles_deg: List[float]
    cable_elongations: List[float]
    analytic_elongation: float
    elongation_errors: List[float]          # relative
    weight_residual: float                  # N, sum of u_z minus total weight
    weight_residual_per_agent: float
    moment_residual: List[float]            # N m
    chain_residual: float                   # N, largest |m a| over all nodes
    cable_residuals: List[float]            # N, largest |m_t a| along each cable
    omega_norm: float
    verdict: str

    @property
    def balanced(self) -> bool:
        return self.verdict == "balanced"


def _speeds(state: SystemState) -> Dict[str, float]:
    return {
        "payload": float(np.linalg.norm(state.payload_velocity)),
        "omega": float(np.linalg.norm(state.payload_angular_velocity)),
        "agents": float(np.max(np.linalg.norm(state.agent_velocities, axis=1))),
        "cable": float(np.max(np.linalg.norm(state.cable_velocities, axis=-1))),
    }


def verify_equilibrium(state: SystemState, config: SimConfig,
                       controls: Optional[np.ndarray] = None,
                       angle_limit_deg: float = 1.0, elongation_tolerance: float = 0.05,
                       weight_tolerance: float = 1e-6) -> EquilibriumReport:
    """Residuals of the hover balance for a steady state"""
    speeds = _speeds(state)
    if max(speeds.values()) > STEADY_SPEED_LIMIT:
        raise NotSteadyError("state is not steady", speeds)

    n = config.n
    if controls is None:
        controls = np.tile(configured_gravity_compensation(config), (n, 1))
    controls = np.asarray(controls, dtype=float)
    g = config.environment.gravity
    model = SwarmPayloadModel(config)
    offsets, anchor_positions, _ = model.anchor_states(state)

    cables = state.agent_positions - anchor_positions
    lengths = np.linalg.norm(cables, axis=1)
    cosines = np.clip(cables[:, 2] / lengths, -1.0, 1.0)
    angles = np.degrees(np.arccos(cosines))

    analytic = static_cable_elongation(config)
    elongations = lengths - config.cable_length
    errors = np.abs(elongations - analytic) / analytic if analytic > 0 else np.abs(elongations)

    total_weight = (n * (config.cable.elements * config.cable.element_mass
                         + config.swarm.agent_mass) + config.payload.mass) * g
    weight_residual = float(np.sum(controls[:, 2]) - total_weight)

    payload_share = np.array([0.0, 0.0, config.payload.mass / n * g])
    formation = controls - configured_gravity_compensation(config)
    moment = np.sum(np.cross(offsets, formation + payload_share), axis=0)

    derivative = model.derivative(state, controls, np.zeros(3))
    residuals = [config.payload.mass * np.linalg.norm(derivative.payload_velocity)]
    residuals.extend(config.swarm.agent_mass * np.linalg.norm(derivative.agent_velocities, axis=1))
    residuals.extend(config.cable.element_mass
                     * np.linalg.norm(derivative.cable_velocities, axis=-1).ravel())
    chain_residual = float(np.max(residuals))

    _, anchor_velocities = anchor_kinematics(state.payload_position, state.payload_velocity,
                                             state.payload_angular_velocity, state.body_axes,
                                             config.anchors_body)
    cable_residuals = []
    for k in range(n):
        chain = CableChain(k + 1, state.cable_positions[k], state.cable_velocities[k],
                           config.anchors_body[k])
        accelerations = cable_accelerations(chain, state.agent_positions[k],
                                            state.agent_velocities[k], anchor_positions[k],
                                            anchor_velocities[k], config.cable,
                                            config.gravity_vector)
        cable_residuals.append(float(config.cable.element_mass
                                     * np.max(np.linalg.norm(accelerations, axis=1))))

    balanced = (np.max(angles) < angle_limit_deg and np.max(errors) < elongation_tolerance
                and abs(weight_residual) / n < weight_tolerance)
    report = EquilibriumReport(
        cable_angles_deg=angles.tolist(),
        cable_elongations=elongations.tolist(),
        analytic_elongation=analytic,
        elongation_errors=errors.tolist(),
        weight_residual=weight_residual,
        weight_residual_per_agent=weight_residual / n,
        moment_residual=moment.tolist(),
        chain_residual=chain_residual,
        cable_residuals=cable_residuals,
        omega_norm=speeds["omega"],
        verdict="balanced" if balanced else "unbalanced",
    )
    logger.info(f"Equilibrium check: max angle {np.max(angles):.2e} deg, "
                f"vertical residual {report.weight_residual_per_agent:+.4f} N/agent -> {report.verdict}")
    return report


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------

@dataclass
class StabilityReport:
    gamma: float
    effective_stiffness: float
    roots_xy: List[complex]
    roots_z: List[complex]
    predicted_dominant_decay: float
    simulated_decay: Optional[float] = None
    channel_predicted_decay: Optional[float] = None
    verdict: str = "stable"

    def to_dict(self) -> Dict:
        data = asdict(self)
        for key in ("roots_xy", "roots_z"):
            data[key] = [{"real": root.real, "imag": root.imag} for root in data[key]]
        return data


def _quadratic_roots(damping: float, stiffness: float, mass: float) -> List[complex]:
    """Roots of m s^2 + c s + k = 0"""
    a = damping / mass
    root = np.emath.sqrt(a * a - 4.0 * stiffness / mass)
    return [complex((-a + root) / 2.0), complex((-a - root) / 2.0)]


def analytic_stability_roots(config: SimConfig, gamma: Optional[float] = None) -> StabilityReport:
    """Characteristic roots of the linearised hover about a taut cable of length gamma"""
    length = config.cable_length
    if gamma is None:
        gamma = length + static_cable_elongation(config)
    if gamma <= length:
        raise SlackEquilibriumError(f"cable length {gamma:.6f} m is not longer than its natural "
                                    f"length {length:.6f} m")
    segments = config.cable.elements + 1
    stiffness = config.cable.stiffness * (gamma - length) / (gamma * segments)
    mass = config.swarm.agent_mass
    drag = config.environment.drag
    roots_xy = _quadratic_roots(drag, stiffness, mass)
    roots_z = _quadratic_roots(drag + config.cable.damping / segments, stiffness, mass)
    slowest = max(root.real for root in roots_xy + roots_z)
    return StabilityReport(
        gamma=gamma,
        effective_stiffness=stiffness,
        roots_xy=roots_xy,
        roots_z=roots_z,
        predicted_dominant_decay=-slowest,
        verdict="stable" if slowest < 0 else "unstable",
    )


def fit_decay_rate(times: np.ndarray, signal: np.ndarray) -> Optional[float]:
    """Exponential decay rate from a least-squares line through log peak amplitudes"""
    prominence = 0.01 * float(np.max(np.abs(signal)))
    peaks = np.concatenate([find_peaks(signal, prominence=prominence)[0],
                            find_peaks(-signal, prominence=prominence)[0]])
    peaks = np.sort(peaks)
    amplitudes = np.abs(signal[peaks])
    keep = amplitudes > NO_RESPONSE_LEVEL
    if np.count_nonzero(keep) < 3:
        return None
    slope, _ = np.polyfit(times[peaks][keep], np.log(amplitudes[keep]), 1)
    return float(-slope)


def measure_disturbance_decay(config: SimConfig, perturbation: Sequence[float] = (0.05, 0.0, 0.0),
                              agent: int = 1, duration: float = 60.0,
                              fixed_step: bool = False) -> StabilityReport:
    """Displace one agent from the hover fixture and fit the decay of its cable swing"""
    report = analytic_stability_roots(config)
    hover = build_config(deep_merge(config.model_dump(), {
        "controller": {"mode": "gravity_only"},
        "scenario": {"name": f"{config.scenario.name}-decay", "total_time": duration,
                     "log_period": config.controller.period, "initial_state": "equilibrium",
                     "wind": None, "failure": None},
    }))
    perturbation = np.asarray(perturbation, dtype=float)
    size = float(np.linalg.norm(perturbation))
    direction = perturbation / size if size > 0 else np.array([1.0, 0.0, 0.0])
    horizontal = abs(direction[2]) < math.sqrt(0.5)
    report.channel_predicted_decay = -max(root.real for root in
                                          (report.roots_xy if horizontal else report.roots_z))

    start = equilibrium_state(hover)
    baseline = (start.agent_positions[agent - 1] - hover.anchors_body[agent - 1]) @ direction
    start.agent_positions[agent - 1] += perturbation
    log = run_scenario(hover, fixed_step=fixed_step, initial=start)
    response = log.cable_vectors[:, agent - 1] @ direction - baseline

    if np.max(np.abs(response)) < NO_RESPONSE_LEVEL:
        report.verdict = "no-response"
        return report
    decay = fit_decay_rate(log.times, response)
    report.simulated_decay = decay
    if decay is None or decay <= 0:
        report.verdict = "unstable"
        logger.warning(f"⚠ Perturbation of agent {agent} did not decay")
    elif abs(decay - report.channel_predicted_decay) <= DECAY_TOLERANCE * report.channel_predicted_decay:
        report.verdict = "consistent"
    else:
        report.verdict = "inconsistent"
    logger.info(f"Decay fit: simulated {decay}, predicted {report.channel_predicted_decay:.4f} "
                f"-> {report.verdict}")
    return report


# ---------------------------------------------------------------------------
# Mission metrics
# ---------------------------------------------------------------------------

@dataclass
class MissionMetrics:
    samples: int
    horizontal_error: float
    vertical_error: float
    anchor_horizontal_error: float
    anchor_vertical_error: float
    terminal_azimuth_deg: float
    terminal_elevation_deg: float
    azimuth_error_deg: float
    elevation_error_deg: float
    peak_omega: float
    terminal_omega: float
    min_obstacle_distance: Optional[float]
    min_agent_distance: float
    settle_time: Optional[float]
    wind_recovery_time: Optional[float]
    failed_agent_max_control: Optional[float]

    def to_dict(self) -> Dict:
        return asdict(self)


def _wrap_degrees(angle: float) -> float:
    return (angle + 180.0) % 360.0 - 180.0


def _settled_from(times: np.ndarray, ok: np.ndarray) -> Optional[float]:
    """Earliest time after which ok holds for every remaining sample"""
    if not ok[-1]:
        return None
    failures = np.flatnonzero(~ok)
    return float(times[0] if failures.size == 0 else times[failures[-1] + 1])


def compute_mission_metrics(log: TimeSeriesLog, config: SimConfig) -> MissionMetrics:
    """Pure function of (log, config); terminal values use the final 10% of samples"""
    count = len(log)
    if count == 0:
        raise ValueError("cannot compute metrics of an empty log")
    tail = slice(count - max(1, int(math.ceil(0.1 * count))), count)
    goal = config.goal
    acceptance = config.scenario.acceptance or AcceptanceConfig()

    payload = log.payload_position[tail].mean(axis=0)
    centroid = log.anchor_centroid[tail].mean(axis=0)
    target = swarm_target(config)
    anchor_target_z = target[2] - static_cable_elongation(config)

    azimuth = np.radians(log.azimuth_deg[tail])
    terminal_azimuth = math.degrees(math.atan2(np.mean(np.sin(azimuth)), np.mean(np.cos(azimuth))))
    terminal_elevation = float(np.mean(log.elevation_deg[tail]))

    omega = np.linalg.norm(log.payload_omega, axis=1)

    min_obstacle = None
    obstacles = config.obstacles
    if obstacles.shape[0] > 0:
        offsets = log.agent_positions[:, :, None, :] - obstacles[None, None, :, :]
        min_obstacle = float(np.min(np.linalg.norm(offsets, axis=-1)))

    min_agent = float(min(np.min(pdist(positions)) for positions in log.agent_positions))

    horizontal_track = np.linalg.norm(log.payload_position[:, :2] - goal[:2], axis=1)
    settle = _settled_from(log.times, horizontal_track <= acceptance.horizontal_tolerance)

    recovery = None
    wind = config.scenario.wind
    if wind is not None and log.times[-1] >= wind.end:
        after = log.times >= wind.end
        settled = _settled_from(log.times[after], omega[after] < acceptance.terminal_omega)
        recovery = None if settled is None else settled - wind.end

    failed_control = None
    if config.scenario.failure is not None:
        index = config.scenario.failure.agent - 1
        mask = log.agent_failed[:, index]
        failed_control = float(np.max(np.linalg.norm(log.agent_controls[mask, index], axis=1))) \
            if np.any(mask) else 0.0

    return MissionMetrics(
        samples=count,
        horizontal_error=float(np.linalg.norm(payload[:2] - goal[:2])),
        vertical_error=float(payload[2] - goal[2]),
        anchor_horizontal_error=float(np.linalg.norm(centroid[:2] - target[:2])),
        anchor_vertical_error=float(centroid[2] - anchor_target_z),
        terminal_azimuth_deg=terminal_azimuth,
        terminal_elevation_deg=terminal_elevation,
        azimuth_error_deg=abs(_wrap_degrees(terminal_azimuth - config.controller.desired_azimuth_deg)),
        elevation_error_deg=abs(terminal_elevation - config.controller.desired_elevation_deg),
        peak_omega=float(np.max(omega)),
        terminal_omega=float(np.max(omega[tail])),
        min_obstacle_distance=min_obstacle,
        min_agent_distance=min_agent,
        settle_time=settle,
        wind_recovery_time=recovery,
        failed_agent_max_control=failed_control,
    )


def evaluate_acceptance(metrics: MissionMetrics, config: SimConfig) -> Dict[str, bool]:
    """Pass/fail per configured tolerance; the tolerances are implementation-chosen"""
    acceptance = config.scenario.acceptance
    if acceptance is None:
        return {}
    verdicts = {
        "horizontal_error": metrics.horizontal_error < acceptance.horizontal_tolerance,
        "azimuth": metrics.azimuth_error_deg <= acceptance.angle_tolerance_deg,
        "elevation": metrics.elevation_error_deg <= acceptance.angle_tolerance_deg,
        "terminal_omega": metrics.terminal_omega < acceptance.terminal_omega,
    }
    if acceptance.min_obstacle_distance is not None and metrics.min_obstacle_distance is not None:
        verdicts["obstacle_clearance"] = metrics.min_obstacle_distance > acceptance.min_obstacle_distance
    if acceptance.wind_recovery_time is not None and config.scenario.wind is not None:
        verdicts["wind_recovery"] = metrics.wind_recovery_time is not None \
            and metrics.wind_recovery_time <= acceptance.wind_recovery_time
    if config.scenario.failure is not None:
        verdicts["failed_agent_silent"] = metrics.failed_agent_max_control == 0.0
    verdicts["passed"] = all(verdicts.values())
    return verdicts


# ---------------------------------------------------------------------------
# Writers and readers
# ---------------------------------------------------------------------------

AGENT_COLUMNS = ("x", "y", "z", "ux", "uy", "uz", "cable_dx", "cable_dy", "cable_dz",
                 "tension", "failed")
BASE_COLUMNS = ("time", "payload_x", "payload_y", "payload_z", "payload_vx", "payload_vy",
                "payload_vz", "omega_x", "omega_y", "omega_z", "azimuth_deg", "elevation_deg",
                "anchor_centroid_x", "anchor_centroid_y", "anchor_centroid_z",
                "swarm_center_x", "swarm_center_y", "swarm_center_z",
                "wind_fx", "wind_fy", "wind_fz")


def time_series_header(n: int) -> List[str]:
    header = list(BASE_COLUMNS)
    for k in range(1, n + 1):
        header.extend(f"agent{k}_{column}" for column in AGENT_COLUMNS)
    return header


def _row(log: TimeSeriesLog, i: int) -> List[str]:
    values = [log.times[i], *log.payload_position[i], *log.payload_velocity[i],
              *log.payload_omega[i], log.azimuth_deg[i], log.elevation_deg[i],
              *log.anchor_centroid[i], *log.swarm_center[i], *log.wind_force[i]]
    cells = [repr(float(value)) for value in values]
    for k in range(log.n):
        agent = [*log.agent_positions[i, k], *log.agent_controls[i, k], *log.cable_vectors[i, k],
                 log.cable_tensions[i, k]]
        cells.extend(repr(float(value)) for value in agent)
        cells.append("1" if log.agent_failed[i, k] else "0")
    return cells


def time_series_csv_text(log: TimeSeriesLog) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(time_series_header(log.n))
    for i in range(len(log)):
        writer.writerow(_row(log, i))
    return buffer.getvalue()


def time_series_digest(log: TimeSeriesLog) -> str:
    return hashlib.sha256(time_series_csv_text(log).encode("utf-8")).hexdigest()


def load_time_series(path) -> TimeSeriesLog:
    """Rebuild a TimeSeriesLog from a CSV written by emit_outputs"""
    path = Path(path)
    try:
        with open(path, "r", newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            rows = [row for row in reader if row]
    except (OSError, StopIteration) as e:
        raise OutputError(f"cannot read time series {path}: {e}")

    base = len(BASE_COLUMNS)
    n = (len(header) - base) // len(AGENT_COLUMNS)
    if header != time_series_header(n):
        raise OutputError(f"unexpected time-series header in {path}")
    if not rows:
        log = TimeSeriesLog.empty(path.stem, n)
    else:
        table = np.array([[float(cell) for cell in row] for row in rows])
        agents = table[:, base:].reshape(len(rows), n, len(AGENT_COLUMNS))
        log = TimeSeriesLog(
            scenario=path.stem,
            times=table[:, 0].copy(),
            payload_position=table[:, 1:4].copy(),
            payload_velocity=table[:, 4:7].copy(),
            payload_omega=table[:, 7:10].copy(),
            azimuth_deg=table[:, 10].copy(),
            elevation_deg=table[:, 11].copy(),
            anchor_centroid=table[:, 12:15].copy(),
            swarm_center=table[:, 15:18].copy(),
            wind_force=table[:, 18:21].copy(),
            agent_positions=agents[:, :, 0:3].copy(),
            agent_controls=agents[:, :, 3:6].copy(),
            cable_vectors=agents[:, :, 6:9].copy(),
            cable_tensions=agents[:, :, 9].copy(),
            agent_failed=agents[:, :, 10] > 0.5,
        )
    events_path = path.with_name("events.csv")
    if events_path.exists():
        with open(events_path, "r", newline="", encoding="utf-8") as handle:
            log.events = [{"time": float(row["time"]), "event": row["event"],
                           "detail": row["detail"]} for row in csv.DictReader(handle)]
    return log


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _wind_active(config: SimConfig, t: float) -> int:
    wind = config.scenario.wind
    return int(wind is not None and wind.start <= t < wind.end)


def _write_extracts(log: TimeSeriesLog, config: SimConfig, out_dir: Path) -> Dict[str, str]:
    paths = {}
    times = [repr(float(t)) for t in log.times]

    def cells(values):
        return [repr(float(value)) for value in values]

    path = out_dir / "payload_trajectory.csv"
    _write_csv(path, ["time", "x", "y", "z"],
               ([t, *cells(p)] for t, p in zip(times, log.payload_position)))
    paths["payload_trajectory"] = str(path)

    path = out_dir / "payload_attitude.csv"
    _write_csv(path, ["time", "azimuth_deg", "elevation_deg", "wind_active"],
               ([t, *cells((a, e)), str(_wind_active(config, float(t)))]
                for t, a, e in zip(times, log.azimuth_deg, log.elevation_deg)))
    paths["payload_attitude"] = str(path)

    path = out_dir / "payload_omega.csv"
    _write_csv(path, ["time", "omega_x", "omega_y", "omega_z", "omega_norm"],
               ([t, *cells(w), repr(float(np.linalg.norm(w)))]
                for t, w in zip(times, log.payload_omega)))
    paths["payload_omega"] = str(path)

    path = out_dir / "agent_trajectories.csv"
    header = ["time"] + [f"agent{k}_{axis}" for k in range(1, log.n + 1) for axis in "xyz"]
    _write_csv(path, header, ([t, *cells(p.ravel())] for t, p in zip(times, log.agent_positions)))
    paths["agent_trajectories"] = str(path)

    path = out_dir / "events.csv"
    _write_csv(path, ["time", "event", "detail"],
               ([repr(float(event["time"])), event["event"], event["detail"]]
                for event in log.events))
    paths["events"] = str(path)
    return paths


def build_summary(log: TimeSeriesLog, metrics: Optional[MissionMetrics],
                  verdicts: Dict[str, bool], config: SimConfig) -> Dict:
    return {
        "scenario": config.scenario.name,
        "samples": len(log),
        "metrics": metrics.to_dict() if metrics is not None else None,
        "verdicts": verdicts,
        "events": log.events,
        "config": config.model_dump(mode="json"),
    }


def emit_outputs(log: TimeSeriesLog, metrics: Optional[MissionMetrics], verdicts: Dict[str, bool],
                 config: SimConfig, out_dir, extracts: bool = True) -> Dict[str, str]:
    """Write time_series.csv, summary.json and optional plot extracts into out_dir"""
    out_dir = Path(out_dir)
    paths = {}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        series = out_dir / "time_series.csv"
        with open(series, "w", newline="", encoding="utf-8") as handle:
            handle.write(time_series_csv_text(log))
        paths["time_series"] = str(series)

        summary = out_dir / "summary.json"
        with open(summary, "w", encoding="utf-8") as handle:
            json.dump(build_summary(log, metrics, verdicts, config), handle, indent=2)
            handle.write("\n")
        paths["summary"] = str(summary)

        if extracts:
            paths.update(_write_extracts(log, config, out_dir))
    except OSError as e:
        logger.error(f"✗ Failed writing outputs to {out_dir}: {e}")
        raise OutputError(f"cannot write outputs under {out_dir}: {e}")
    logger.info(f"✓ Outputs written to {out_dir}")
    return paths
