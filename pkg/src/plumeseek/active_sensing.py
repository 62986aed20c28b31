"""Online source seeking: sample, localize on the full history, fly to the
most likely source cell, repeat until the suggestion stops moving.

The loop treats travel as one sample period per leg (no flight kinematics),
so measurement times form a uniform grid t = 0, T, 2T, ... Convergence is
declared when the suggested candidate index equals the previous iteration's
suggestion, checked before flying; the converged iteration therefore adds
no measurement, which keeps waypoint and log lengths equal.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import fluid_sim
from .errors import ValidationError
from .fluid_sim import SimParams
from .ogs_localizer import CandidateGrid, LikelihoodMap, MeasurementLog, localize
from .wind_model import WindMeasurement


class Environment(Protocol):
    """Anything samplable at (location, time): synthetic world or replay."""

    domain_side: float

    def sample(self, location: Sequence[float], t_s: float) -> tuple[float, WindMeasurement]:
        ...


@dataclass
class MissionState:
    log: MeasurementLog
    waypoints: np.ndarray  # (k, 2) sampled positions, in visit order
    likelihood: LikelihoodMap | None
    suggestion: np.ndarray | None  # l*, last suggested source location
    suggestion_index: int | None
    iteration: int
    converged: bool


@dataclass
class IterationRecord:
    iteration: int
    t_s: float  # mission clock when the suggestion was computed
    suggestion: np.ndarray
    suggestion_index: int
    likelihood: LikelihoodMap
    waypoint: np.ndarray | None  # None on the converged iteration
    reading: float | None
    wind: WindMeasurement | None
    steps_used: int  # solver steps spent in this rebuild
    wall_s: float


def next_waypoint(state: MissionState) -> np.ndarray:
    """Most likely source cell center: fly there next."""
    if state.likelihood is None:
        raise ValidationError("no likelihood computed yet")
    idx = state.likelihood.argmax_index()
    return state.likelihood.grid.location_of(idx)


def _require_in_domain(point: np.ndarray, side: float) -> None:
    if not (0.0 <= point[0] <= side and 0.0 <= point[1] <= side):
        raise ValidationError(f"waypoint {point!r} outside [0, {side}]^2")


def run_online(
    env: Environment,
    init_waypoints: Sequence[Sequence[float]],
    params: SimParams,
    grid: CandidateGrid,
    max_iters: int = 20,
    sample_period: float = 20.0,
) -> tuple[MissionState, list[IterationRecord]]:
    """Run the measure / localize / fly loop until the suggestion repeats.

    Samples both initial waypoints (one sample_period apart), then each
    iteration re-localizes on the complete measurement history and either
    stops (suggestion unchanged) or flies to the suggestion and samples
    there one period later. Exhausting max_iters leaves converged False.
    """
    if len(init_waypoints) != 2:
        raise ValidationError("exactly two initial waypoints required")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    if sample_period <= 0.0:
        raise ValidationError("sample_period must be positive")
    if abs(grid.domain_side - env.domain_side) > 1e-9:
        raise ValidationError("candidate grid and environment domains differ")

    positions: list[np.ndarray] = []
    times: list[float] = []
    gas: list[float] = []
    winds: list[WindMeasurement] = []

    def sample_at(point: np.ndarray, t_s: float) -> tuple[float, WindMeasurement]:
        _require_in_domain(point, env.domain_side)
        reading, wind = env.sample(point, t_s)
        positions.append(np.asarray(point, dtype=np.float64))
        times.append(t_s)
        gas.append(reading)
        winds.append(wind)
        return reading, wind

    t = 0.0
    for wp in init_waypoints:
        sample_at(np.asarray(wp, dtype=np.float64), t)
        t += sample_period

    def current_log() -> MeasurementLog:
        return MeasurementLog(
            positions=np.array(positions),
            times_s=np.array(times),
            gas=np.array(gas),
            wind=list(winds),
            domain_side=env.domain_side,
        )

    records: list[IterationRecord] = []
    state = MissionState(
        log=current_log(),
        waypoints=np.array(positions),
        likelihood=None,
        suggestion=None,
        suggestion_index=None,
        iteration=0,
        converged=False,
    )

    prev_index: int | None = None
    for iteration in range(1, max_iters + 1):
        log = current_log()
        steps_before = fluid_sim.counters.steps
        t0 = time.perf_counter()
        estimate, likelihood = localize(log, params, grid)
        wall = time.perf_counter() - t0
        steps_used = fluid_sim.counters.steps - steps_before

        state.log = log
        state.waypoints = np.array(positions)
        state.likelihood = likelihood
        state.suggestion = estimate.location
        state.suggestion_index = estimate.index
        state.iteration = iteration

        if prev_index is not None and estimate.index == prev_index:
            state.converged = True
            records.append(
                IterationRecord(
                    iteration=iteration,
                    t_s=t,
                    suggestion=estimate.location,
                    suggestion_index=estimate.index,
                    likelihood=likelihood,
                    waypoint=None,
                    reading=None,
                    wind=None,
                    steps_used=steps_used,
                    wall_s=wall,
                )
            )
            break
        prev_index = estimate.index

        waypoint = next_waypoint(state)
        reading, wind = sample_at(waypoint, t)
        records.append(
            IterationRecord(
                iteration=iteration,
                t_s=t,
                suggestion=estimate.location,
                suggestion_index=estimate.index,
                likelihood=likelihood,
                waypoint=waypoint,
                reading=reading,
                wind=wind,
                steps_used=steps_used,
                wall_s=wall,
            )
        )
        t += sample_period

    state.log = current_log()
    state.waypoints = np.array(positions)
    return state, records
