"""Synthetic environments, error metrics, sensitivity sweeps, and the
speed/convergence benchmarks that compare the grid search against the
baseline localizers.

The synthetic environment runs a hidden simulation with the same solver the
localizer models it with, so a "perfect model" scenario (matching params,
constant wind, zero noise) must localize exactly; every experiment here
perturbs something on the model side and measures how far the estimate
drifts.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import active_sensing, fluid_sim
from .baselines import Acquisition, GpHyper, bo_localize, dmvw_map, gp_fit, gp_predict
from .errors import ValidationError
from .fluid_sim import SimParams, sample_bilinear, step_index_for
from .ogs_localizer import CandidateGrid, MeasurementLog, localize
from .wind_model import WindMeasurement

SWEEP_PARAMS = ("gas_release", "diffusion", "wind_speed_scale", "wind_direction_offset", "fidelity")
CURVE_ALGORITHMS = ("ogs", "gp-lcb3", "dmvw-lcb3")


# --------------------------------------------------------------------------
# synthetic environment

@dataclass(frozen=True)
class WindProtocol:
    mode: str = "variable"  # "none" | "constant" | "variable"
    base_direction_rad: float = math.pi
    speed_mps: float = 1.0
    jitter_rad: float = math.pi / 2  # variable: direction uniform in base +- jitter
    change_period_s: float = 30.0

    def __post_init__(self) -> None:
        if self.mode not in ("none", "constant", "variable"):
            raise ValidationError("wind mode must be none, constant, or variable")
        if self.speed_mps < 0.0 or self.jitter_rad < 0.0 or self.change_period_s <= 0.0:
            raise ValidationError("speed/jitter must be >= 0, change period > 0")


@dataclass(frozen=True)
class EnvSpec:
    params: SimParams  # hidden simulator resolution/physics
    source: tuple[float, float]
    wind: WindProtocol = WindProtocol()
    noise: float = 0.0  # multiplicative reading noise bound, in [0, 1]
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise <= 1.0:
            raise ValidationError("noise level must lie in [0, 1]")
        side = self.params.domain_side
        if not (0.0 <= self.source[0] <= side and 0.0 <= self.source[1] <= side):
            raise ValidationError("source must lie inside the hidden domain")


class SyntheticEnv:
    """Hidden plume simulation advanced lazily to each query time.

    Readings are bilinear density samples scaled by (1 + u) with u drawn
    uniformly from [-noise, +noise] in call order; the returned wind is the
    protocol's true wind at the query time. Query times must not move
    backward (the hidden state cannot be rewound).
    """

    def __init__(self, spec: EnvSpec) -> None:
        self.spec = spec
        self.domain_side = spec.params.domain_side
        self.true_source = np.array(spec.source, dtype=np.float64)
        self._state = fluid_sim.initial_state(spec.params)
        self._steps_done = 0
        self._last_t = 0.0
        self._noise_rng = np.random.default_rng([spec.seed, 0])
        self._wind_rng = np.random.default_rng([spec.seed, 1])
        self._chunk_dirs: list[float] = []

    def _direction_for_chunk(self, chunk: int) -> float:
        # chunks must be drawn in order so the rng stream is stable
        while len(self._chunk_dirs) <= chunk:
            p = self.spec.wind
            if p.mode == "variable":
                d = self._wind_rng.uniform(
                    p.base_direction_rad - p.jitter_rad, p.base_direction_rad + p.jitter_rad
                )
            else:
                d = p.base_direction_rad
            self._chunk_dirs.append(d % (2.0 * math.pi))
        return self._chunk_dirs[chunk]

    def wind_at_time(self, t_s: float) -> tuple[float, float]:
        """True (speed, direction) held during the step starting at t_s."""
        p = self.spec.wind
        if p.mode == "none":
            return 0.0, 0.0
        chunk = int(math.floor(t_s / p.change_period_s + 1e-9))
        return p.speed_mps, self._direction_for_chunk(chunk)

    def _wind_vector(self, t_s: float) -> np.ndarray:
        speed, direction = self.wind_at_time(t_s)
        return np.array([speed * math.cos(direction), speed * math.sin(direction)])

    def _advance_to(self, n_steps: int) -> None:
        params = self.spec.params
        while self._steps_done < n_steps:
            wind = self._wind_vector(self._state.sim_time)
            self._state = fluid_sim.step(
                self._state, params, wind, tuple(self.true_source), emit=True
            )
            self._steps_done += 1

    def field(self) -> np.ndarray:
        """Copy of the hidden density field at the last simulated step."""
        return self._state.density.values.copy()

    @property
    def sim_time_s(self) -> float:
        return self._state.sim_time

    def sample(self, location: Sequence[float], t_s: float) -> tuple[float, WindMeasurement]:
        if t_s < self._last_t - 1e-9:
            raise ValidationError(
                f"query time {t_s} precedes already-simulated time {self._last_t}"
            )
        loc = np.asarray(location, dtype=np.float64)
        if not (0.0 <= loc[0] <= self.domain_side and 0.0 <= loc[1] <= self.domain_side):
            raise ValidationError(f"sample location {loc!r} outside the domain")
        self._last_t = t_s
        self._advance_to(step_index_for(t_s, self.spec.params.dt))
        true_reading = float(
            sample_bilinear(self._state.density.values, loc[None, :], self.spec.params.cell_size)[0]
        )
        u = self._noise_rng.uniform(-self.spec.noise, self.spec.noise)
        speed, direction = self.wind_at_time(t_s)
        return true_reading * (1.0 + u), WindMeasurement(t_s, speed, direction)


def make_synthetic_env(spec: EnvSpec) -> SyntheticEnv:
    return SyntheticEnv(spec)


# --------------------------------------------------------------------------
# metrics and report rows

def localization_error(estimate: Sequence[float], truth: Sequence[float]) -> float:
    """Euclidean distance in meters."""
    return float(np.hypot(estimate[0] - truth[0], estimate[1] - truth[1]))


@dataclass
class RunRecord:
    scenario: str
    seed: int
    error_m: float
    iterations: int  # 0 where a single offline localize was run
    wall_s: float
    steps: int

    def __post_init__(self) -> None:
        if self.error_m < 0.0:
            raise ValidationError("localization error must be >= 0")


@dataclass
class SweepRow:
    param: str
    value: float
    mean_error_m: float
    var_error_m: float
    records: list[RunRecord]


@dataclass
class SpeedRow:
    cells_per_side: int
    ogs_wall_s: float
    ogs_error_m: float
    ogs_steps: int
    bo_wall_s: float
    bo_error_m: float
    bo_evaluations: int
    speedup: float


@dataclass
class CurvePoint:
    algorithm: str
    wind_mode: str
    samples: int
    mean_error_m: float
    sd_error_m: float
    n_runs: int


# --------------------------------------------------------------------------
# scenario plumbing

@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env: EnvSpec
    grid: CandidateGrid
    model: SimParams  # localizer-side simulation parameters
    probe_positions: tuple[tuple[float, float], ...]
    probe_times: tuple[float, ...]
    seeds: tuple[int, ...] = (0,)
    algorithms: tuple[str, ...] = ("ogs",)

    def __post_init__(self) -> None:
        if len(self.probe_positions) != len(self.probe_times):
            raise ValidationError("probe positions and times must pair up")
        if len(self.probe_positions) < 2:
            raise ValidationError("need at least two probes")
        if abs(self.grid.domain_side - self.env.params.domain_side) > 1e-9:
            raise ValidationError("candidate grid does not cover the environment domain")
        for a in self.algorithms:
            if a not in CURVE_ALGORITHMS and a != "bo":
                raise ValidationError(f"unknown algorithm {a!r}")


def collect_log(config: ExperimentConfig, seed: int) -> tuple[MeasurementLog, np.ndarray]:
    """Fly the configured probe schedule in a fresh environment instance."""
    env = make_synthetic_env(replace(config.env, seed=seed))
    gas, winds = [], []
    for pos, t in zip(config.probe_positions, config.probe_times):
        reading, wind = env.sample(pos, t)
        gas.append(reading)
        winds.append(wind)
    log = MeasurementLog(
        positions=np.array(config.probe_positions, dtype=np.float64),
        times_s=np.array(config.probe_times, dtype=np.float64),
        gas=np.array(gas),
        wind=winds,
        domain_side=env.domain_side,
    )
    return log, env.true_source


# --------------------------------------------------------------------------
# sensitivity sweep: perturb the model, hold the world fixed

def _offset_wind(log: MeasurementLog, offset_rad: float) -> MeasurementLog:
    wind = [
        WindMeasurement(w.t_s, w.speed_mps, (w.direction_rad + offset_rad) % (2.0 * math.pi))
        for w in log.wind
    ]
    return replace(log, wind=wind)


def _scale_wind(log: MeasurementLog, factor: float) -> MeasurementLog:
    wind = [WindMeasurement(w.t_s, w.speed_mps * factor, w.direction_rad) for w in log.wind]
    return replace(log, wind=wind)


def _even_cells(n: float) -> int:
    return max(4, int(round(n / 2.0)) * 2)


def _perturbed(
    base: SimParams, param: str, value: float, log: MeasurementLog
) -> tuple[SimParams, MeasurementLog]:
    if param == "gas_release":
        return replace(base, emission_rate=float(value)), log
    if param == "diffusion":
        return replace(base, diffusion=float(value)), log
    if param == "wind_speed_scale":
        return base, _scale_wind(log, float(value))
    if param == "wind_direction_offset":
        return base, _offset_wind(log, float(value))
    if param == "fidelity":
        # value is cell density relative to the base model (1 = unchanged)
        cells = _even_cells(base.grid_cells_per_side * math.sqrt(float(value)))
        return replace(base, grid_cells_per_side=cells), log
    raise ValidationError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")


def sensitivity_sweep(
    base: SimParams,
    param: str,
    values: Sequence[float],
    dataset: Sequence[tuple[MeasurementLog, Sequence[float]]],
    grid: CandidateGrid,
    scenario: str = "sweep",
) -> list[SweepRow]:
    """Localize every (log, truth) pair with one model parameter perturbed.

    The environment data is fixed; only the localizer's simulation setup
    changes, one parameter at a time, per the robustness protocol.
    """
    if param not in SWEEP_PARAMS:
        raise ValidationError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    if not dataset:
        raise ValidationError("dataset must contain at least one log")
    rows = []
    for value in values:
        records = []
        for run_idx, (log, truth) in enumerate(dataset):
            model, used_log = _perturbed(base, param, value, log)
            t0 = time.perf_counter()
            estimate, _ = localize(used_log, model, grid)
            wall = time.perf_counter() - t0
            # one-shot localize runs exactly one simulation over [0, t_max];
            # counting analytically keeps concurrent sweeps race-free
            steps = step_index_for(float(used_log.times_s.max()), model.dt)
            records.append(
                RunRecord(
                    scenario=scenario,
                    seed=run_idx,
                    error_m=localization_error(estimate.location, truth),
                    iterations=0,
                    wall_s=wall,
                    steps=steps,
                )
            )
        errors = np.array([r.error_m for r in records])
        rows.append(
            SweepRow(
                param=param,
                value=float(value),
                mean_error_m=float(errors.mean()),
                var_error_m=float(errors.var()),
                records=records,
            )
        )
    return rows


# --------------------------------------------------------------------------
# speed benchmark: one-shot grid search vs per-candidate BO

def benchmark_speed(
    config: ExperimentConfig,
    resolutions: Sequence[int],
    bo_budget: int = 20,
    acquisition: str | Acquisition = "lcb3",
    seed: int = 0,
) -> list[SpeedRow]:
    """Wall-clock and error of OGS vs BO at several model resolutions.

    Both methods see the identical log; OGS pays one enlarged (4x cells)
    simulation, BO pays one measurement-domain simulation per evaluation.
    """
    log, truth = collect_log(config, seed)
    rows = []
    for cells in resolutions:
        model = replace(config.model, grid_cells_per_side=int(cells))

        steps_before = fluid_sim.counters.steps
        t0 = time.perf_counter()
        ogs_est, _ = localize(log, model, config.grid)
        ogs_wall = time.perf_counter() - t0
        ogs_steps = fluid_sim.counters.steps - steps_before

        t0 = time.perf_counter()
        bo_est, trace = bo_localize(
            log, model, config.grid, acquisition, budget=bo_budget, seed=seed
        )
        bo_wall = time.perf_counter() - t0

        rows.append(
            SpeedRow(
                cells_per_side=int(cells),
                ogs_wall_s=ogs_wall,
                ogs_error_m=localization_error(ogs_est.location, truth),
                ogs_steps=ogs_steps,
                bo_wall_s=bo_wall,
                bo_error_m=localization_error(bo_est.location, truth),
                bo_evaluations=len(trace),
                speedup=bo_wall / max(ogs_wall, 1e-12),
            )
        )
    return rows


# --------------------------------------------------------------------------
# convergence curves: active loops for OGS and the mapping baselines

def _mapping_loop(
    env: SyntheticEnv,
    algorithm: str,
    init_waypoints: Sequence[Sequence[float]],
    grid: CandidateGrid,
    max_samples: int,
    sample_period: float,
    alpha: float = 3.0,
) -> list[np.ndarray]:
    """GP or DM+V/W active loop: fly to argmax(mean + alpha*sd) each tick.

    Returns the estimate (mean-map argmax) after every sample, starting
    once two samples exist.
    """
    positions: list[np.ndarray] = []
    times: list[float] = []
    gas: list[float] = []
    winds: list[WindMeasurement] = []

    def sample_at(point: np.ndarray, t_s: float) -> None:
        reading, wind = env.sample(point, t_s)
        positions.append(np.asarray(point, dtype=np.float64))
        times.append(t_s)
        gas.append(reading)
        winds.append(wind)

    t = 0.0
    for wp in init_waypoints:
        sample_at(np.asarray(wp, dtype=np.float64), t)
        t += sample_period

    centers = grid.centers()
    estimates: list[np.ndarray] = []
    while True:
        log = MeasurementLog(
            positions=np.array(positions),
            times_s=np.array(times),
            gas=np.array(gas),
            wind=list(winds),
            domain_side=env.domain_side,
        )
        if algorithm == "gp-lcb3":
            model = gp_fit(log, GpHyper(variance=15.0, lengthscale=7.0))
            mean, var = gp_predict(model, centers)
        elif algorithm == "dmvw-lcb3":
            maps = dmvw_map(log)
            # nearest map cell per candidate, exploiting the regular lattice
            cell = maps.xs[1] - maps.xs[0] if maps.xs.size > 1 else env.domain_side
            ix = np.clip(np.round(centers[:, 0] / cell - 0.5).astype(int), 0, maps.xs.size - 1)
            iy = np.clip(np.round(centers[:, 1] / cell - 0.5).astype(int), 0, maps.ys.size - 1)
            mean = maps.mean[iy, ix]
            var = maps.variance[iy, ix]
        else:
            raise ValidationError(f"unknown mapping algorithm {algorithm!r}")
        estimates.append(grid.location_of(int(np.argmax(mean))))
        if len(positions) >= max_samples:
            return estimates
        acq = mean + alpha * np.sqrt(np.maximum(var, 0.0))
        sample_at(centers[int(np.argmax(acq))], t)
        t += sample_period


def _ogs_loop(
    env: SyntheticEnv,
    init_waypoints: Sequence[Sequence[float]],
    model: SimParams,
    grid: CandidateGrid,
    max_samples: int,
    sample_period: float,
) -> list[np.ndarray]:
    """Estimates after every sample from the online OGS loop.

    After convergence the last estimate is held so curves across seeds stay
    aligned in length.
    """
    state, records = active_sensing.run_online(
        env,
        init_waypoints,
        model,
        grid,
        max_iters=max(1, max_samples - 2),
        sample_period=sample_period,
    )
    estimates = [np.asarray(r.suggestion, dtype=np.float64) for r in records]
    while len(estimates) < max_samples - 1:
        estimates.append(estimates[-1])
    return estimates[: max_samples - 1]


def convergence_curves(
    config: ExperimentConfig,
    algorithms: Sequence[str],
    wind_mode: str,
    seeds: Sequence[int],
    max_samples: int = 12,
    sample_period: float = 20.0,
    init_waypoints: Sequence[Sequence[float]] | None = None,
) -> list[CurvePoint]:
    """Mean and sd localization error per sample count for each algorithm.

    Every algorithm sees its own fresh environment instance per seed, all
    built from the same spec with the requested wind mode, and starts from
    the same two waypoints.
    """
    for a in algorithms:
        if a not in CURVE_ALGORITHMS:
            raise ValidationError(f"unknown algorithm {a!r}; choose from {CURVE_ALGORITHMS}")
    if wind_mode not in ("none", "constant", "variable"):
        raise ValidationError("wind_mode must be none, constant, or variable")
    if max_samples < 3:
        raise ValidationError("max_samples must be >= 3")
    if init_waypoints is None:
        init_waypoints = config.probe_positions[:2]

    env_spec = replace(config.env, wind=replace(config.env.wind, mode=wind_mode))
    points = []
    for algorithm in algorithms:
        per_seed: list[list[float]] = []
        for seed in seeds:
            env = make_synthetic_env(replace(env_spec, seed=seed))
            if algorithm == "ogs":
                estimates = _ogs_loop(
                    env, init_waypoints, config.model, config.grid, max_samples, sample_period
                )
            else:
                estimates = _mapping_loop(
                    env, algorithm, init_waypoints, config.grid, max_samples, sample_period
                )
            errors = [localization_error(e, env.true_source) for e in estimates]
            while len(errors) < max_samples - 1:
                errors.append(errors[-1])
            per_seed.append(errors[: max_samples - 1])
        table = np.array(per_seed)  # (seeds, sample counts)
        for col in range(table.shape[1]):
            points.append(
                CurvePoint(
                    algorithm=algorithm,
                    wind_mode=wind_mode,
                    samples=col + 2,  # estimates start once two samples exist
                    mean_error_m=float(table[:, col].mean()),
                    sd_error_m=float(table[:, col].std()),
                    n_runs=table.shape[0],
                )
            )
    return points


def worker_count(task_count: int) -> int:
    """Workers for fan-out: min(tasks, cpus, PLUMESEEK_THREADS if set)."""
    limit = os.cpu_count() or 1
    env_cap = os.environ.get("PLUMESEEK_THREADS")
    if env_cap is not None:
        try:
            cap = int(env_cap)
        except ValueError as exc:
            raise ValidationError(f"PLUMESEEK_THREADS must be an integer, got {env_cap!r}") from exc
        if cap < 1:
            raise ValidationError("PLUMESEEK_THREADS must be >= 1")
        limit = min(limit, cap)
    return max(1, min(task_count, limit))
