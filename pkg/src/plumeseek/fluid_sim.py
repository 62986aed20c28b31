"""Eulerian gas transport on a square grid.

The solver follows the classic stable-fluids construction: an implicit
(red-black Gauss-Seidel) diffusion solve, semi-Lagrangian advection with
bilinear interpolation on a collocated grid, and a pressure projection that
removes the discrete divergence of the velocity field. Wind forcing is a
full replacement: each step the whole velocity field is set to
``wind_coupling x wind`` before being projected, which models a spatially
constant wind that the gas cannot push back against.

Step ordering (fixed; several downstream translation arguments rely on it):

1. apply_wind        (velocity := coupling * wind, everywhere)
2. project
3. advect velocity by itself
4. project
5. add_source        (only when emitting)
6. diffuse density
7. advect density

``sim_time`` advances by ``dt`` per step. Measurement timestamps map to the
state after ``floor(t/dt)`` completed steps, so a probe at t=0 reads the
initial (empty) field.

Fields are float64 arrays of shape (height, width); row index j runs along
y, column index i along x; the cell (i, j) is centered at
((i + 0.5) h, (j + 0.5) h) with h the cell size. Units: meters, seconds,
m/s; density is an arbitrary non-negative concentration unit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import kernels, pressure
from .errors import OutOfDomainError, ValidationError

Point = tuple[float, float]


# --------------------------------------------------------------------------
# instrumentation

class SolverCounters:
    """Global step/run counters used by cost assertions in tests."""

    def __init__(self) -> None:
        self.steps = 0
        self.runs = 0

    def reset(self) -> None:
        self.steps = 0
        self.runs = 0


counters = SolverCounters()


# --------------------------------------------------------------------------
# types

@dataclass
class ScalarGrid:
    """Cell-centered scalar field; values are row-major (height, width)."""

    width: int
    height: int
    cell_size: float
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 4 or self.height < 4:
            raise ValidationError("grid must be at least 4x4 cells")
        if not self.cell_size > 0.0:
            raise ValidationError("cell_size must be positive")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.height, self.width):
            raise ValidationError(
                f"values shape {self.values.shape} != (height, width) "
                f"({self.height}, {self.width})"
            )
        if self.values.size and self.values.min() < 0.0:
            raise ValidationError("scalar field must be non-negative")

    @classmethod
    def zeros(cls, width: int, height: int, cell_size: float) -> "ScalarGrid":
        return cls(width, height, cell_size, np.zeros((height, width)))


@dataclass
class VelocityGrid:
    """Collocated velocity components, same layout as the scalar grid."""

    width: int
    height: int
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        shape = (self.height, self.width)
        if self.u.shape != shape or self.v.shape != shape:
            raise ValidationError("velocity component shapes must match the grid")

    @classmethod
    def zeros(cls, width: int, height: int) -> "VelocityGrid":
        return cls(width, height, np.zeros((height, width)), np.zeros((height, width)))


@dataclass(frozen=True)
class SimParams:
    grid_cells_per_side: int
    domain_side: float
    diffusion: float
    dt: float
    solver_iterations: int = 20
    emission_rate: float = 50.0
    wind_coupling: float = 1.0
    boundary_mode: str = "open"

    def __post_init__(self) -> None:
        if self.grid_cells_per_side < 4:
            raise ValidationError("grid_cells_per_side must be >= 4")
        if not self.domain_side > 0.0:
            raise ValidationError("domain_side must be positive")
        if self.diffusion < 0.0:
            raise ValidationError("diffusion must be >= 0")
        if not self.dt > 0.0:
            raise ValidationError("dt must be positive")
        if self.solver_iterations < 1:
            raise ValidationError("solver_iterations must be >= 1")
        if self.emission_rate < 0.0:
            raise ValidationError("emission_rate must be >= 0")
        if self.boundary_mode not in pressure.BOUNDARY_MODES:
            raise ValidationError(f"boundary_mode must be one of {pressure.BOUNDARY_MODES}")

    @property
    def cell_size(self) -> float:
        return self.domain_side / self.grid_cells_per_side

    def enlarged(self) -> "SimParams":
        """Same cell size on a domain of twice the side (4x the cells)."""
        return replace(
            self,
            grid_cells_per_side=2 * self.grid_cells_per_side,
            domain_side=2.0 * self.domain_side,
        )


@dataclass
class SimState:
    density: ScalarGrid
    velocity: VelocityGrid
    sim_time: float = 0.0

    def __post_init__(self) -> None:
        d, v = self.density, self.velocity
        if (v.width, v.height) != (d.width, d.height):
            raise ValidationError("density and velocity grids must share dimensions")
        if self.sim_time < 0.0:
            raise ValidationError("sim_time must be >= 0")


def initial_state(params: SimParams) -> SimState:
    n = params.grid_cells_per_side
    return SimState(
        density=ScalarGrid.zeros(n, n, params.cell_size),
        velocity=VelocityGrid.zeros(n, n),
    )


# --------------------------------------------------------------------------
# sampling helpers

def sample_bilinear(values: np.ndarray, points: np.ndarray, cell_size: float) -> np.ndarray:
    """Bilinear read of a cell-centered field at (x, y) points (meters).

    Coordinates are clamped to the cell-center hull, matching the
    zero-gradient extension used by advection.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    h, w = values.shape
    gx = np.clip(pts[:, 0] / cell_size - 0.5, 0.0, w - 1.0)
    gy = np.clip(pts[:, 1] / cell_size - 0.5, 0.0, h - 1.0)
    i0 = np.minimum(np.floor(gx), w - 2.0).astype(np.int64)
    j0 = np.minimum(np.floor(gy), h - 2.0).astype(np.int64)
    fx = gx - i0
    fy = gy - j0
    top = values[j0, i0] * (1.0 - fx) + values[j0, i0 + 1] * fx
    bot = values[j0 + 1, i0] * (1.0 - fx) + values[j0 + 1, i0 + 1] * fx
    return top * (1.0 - fy) + bot * fy


def _require_inside(point: Point, side_x: float, side_y: float | None = None) -> None:
    if side_y is None:
        side_y = side_x
    x, y = float(point[0]), float(point[1])
    if not (0.0 <= x <= side_x and 0.0 <= y <= side_y):
        raise OutOfDomainError(f"point ({x}, {y}) outside [0, {side_x}] x [0, {side_y}]")


# --------------------------------------------------------------------------
# operations

def add_source(field: ScalarGrid, location: Point, rate: float, dt: float) -> ScalarGrid:
    """Deposit rate*dt of mass bilinearly onto the 4 cells nearest location.

    The deposited total is exactly rate*dt regardless of sub-cell position;
    locations within half a cell of the boundary are snapped inward so all
    weights stay non-negative.
    """
    _require_inside(location, field.width * field.cell_size, field.height * field.cell_size)
    if rate < 0.0:
        raise ValidationError("emission rate must be >= 0")
    h = field.cell_size
    gx = min(max(location[0] / h - 0.5, 0.0), field.width - 1.0)
    gy = min(max(location[1] / h - 0.5, 0.0), field.height - 1.0)
    i0 = min(int(math.floor(gx)), field.width - 2)
    j0 = min(int(math.floor(gy)), field.height - 2)
    fx = gx - i0
    fy = gy - j0
    amount = rate * dt
    out = field.values.copy()
    out[j0, i0] += amount * (1.0 - fx) * (1.0 - fy)
    out[j0, i0 + 1] += amount * fx * (1.0 - fy)
    out[j0 + 1, i0] += amount * (1.0 - fx) * fy
    out[j0 + 1, i0 + 1] += amount * fx * fy
    return ScalarGrid(field.width, field.height, field.cell_size, out)


def diffuse(field: ScalarGrid, diffusion: float, dt: float, iterations: int) -> ScalarGrid:
    """Implicit diffusion via red-black Gauss-Seidel; zero-gradient walls.

    Solves (I - a L) q = q0 with a = diffusion*dt/h^2; negatives are clamped
    to zero after the solve (the stencil is positivity-preserving, so the
    clamp is a guard rather than a correction).
    """
    if diffusion < 0.0:
        raise ValidationError("diffusion must be >= 0")
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    if diffusion == 0.0:
        return ScalarGrid(field.width, field.height, field.cell_size, field.values.copy())
    a = diffusion * dt / (field.cell_size * field.cell_size)
    out = kernels.diffuse_rb(field.values, a, iterations)
    np.maximum(out, 0.0, out=out)
    return ScalarGrid(field.width, field.height, field.cell_size, out)


def advect(field: ScalarGrid, velocity: VelocityGrid, dt: float) -> ScalarGrid:
    """Semi-Lagrangian advection of a scalar field by the velocity field."""
    s = dt / field.cell_size
    out = kernels.advect(field.values, velocity.u, velocity.v, s)
    np.maximum(out, 0.0, out=out)
    return ScalarGrid(field.width, field.height, field.cell_size, out)


def _advect_velocity(velocity: VelocityGrid, dt: float, cell_size: float) -> VelocityGrid:
    s = dt / cell_size
    un = kernels.advect(velocity.u, velocity.u, velocity.v, s)
    vn = kernels.advect(velocity.v, velocity.u, velocity.v, s)
    return VelocityGrid(velocity.width, velocity.height, un, vn)


def project(velocity: VelocityGrid, iterations: int, boundary_mode: str = "open") -> VelocityGrid:
    """Remove the discrete divergence of the velocity field.

    The Poisson problem for the potential is solved directly (cached sparse
    LU of the exact div(grad) operator), so the returned field's divergence
    is at rounding level; ``iterations`` is validated for interface
    compatibility but the solve is already converged at any value >= 1.
    """
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    ops = pressure.operators(velocity.height, velocity.width, boundary_mode)
    un, vn = ops.project(velocity.u, velocity.v)
    return VelocityGrid(velocity.width, velocity.height, un, vn)


def divergence(velocity: VelocityGrid, boundary_mode: str = "open") -> np.ndarray:
    """The discrete divergence field that project() drives to zero."""
    ops = pressure.operators(velocity.height, velocity.width, boundary_mode)
    return ops.divergence(velocity.u, velocity.v)


def apply_wind(velocity: VelocityGrid, wind: Sequence[float], coupling: float) -> VelocityGrid:
    """Replace the entire velocity field with coupling * wind."""
    shape = (velocity.height, velocity.width)
    return VelocityGrid(
        velocity.width,
        velocity.height,
        np.full(shape, coupling * float(wind[0])),
        np.full(shape, coupling * float(wind[1])),
    )


def step(
    state: SimState,
    params: SimParams,
    wind: Sequence[float],
    source: Point | None = None,
    emit: bool = True,
) -> SimState:
    """Advance one dt following the fixed operation ordering."""
    it = params.solver_iterations
    mode = params.boundary_mode
    vel = apply_wind(state.velocity, wind, params.wind_coupling)
    vel = project(vel, it, mode)
    vel = _advect_velocity(vel, params.dt, params.cell_size)
    vel = project(vel, it, mode)
    dens = state.density
    if emit and source is not None and params.emission_rate > 0.0:
        dens = add_source(dens, source, params.emission_rate, params.dt)
    dens = diffuse(dens, params.diffusion, params.dt, it)
    dens = advect(dens, vel, params.dt)
    counters.steps += 1
    return SimState(density=dens, velocity=vel, sim_time=state.sim_time + params.dt)


# --------------------------------------------------------------------------
# timed runs

def step_index_for(t: float, dt: float) -> int:
    """Completed-step index a timestamp maps to (floored, epsilon-guarded)."""
    return max(0, int(math.floor(t / dt + 1e-9)))


def _warn_if_misaligned(times: np.ndarray, dt: float) -> None:
    gaps = np.diff(np.unique(times))
    gaps = gaps[gaps > 0]
    if gaps.size:
        g = float(gaps.min())
        if abs(g / dt - round(g / dt)) > 1e-9:
            warnings.warn(
                f"dt={dt} does not divide the minimum measurement gap {g}; "
                "timestamps are floored to completed steps",
                stacklevel=3,
            )


def run(
    params: SimParams,
    wind_at: Callable[[float], Sequence[float]],
    source: Point | None,
    sample_times: Sequence[float],
    sampler: Callable[[SimState, int], None],
    emit: bool = True,
) -> SimState:
    """Run one simulation from t=0, invoking sampler at each sample time.

    ``wind_at`` maps a simulation time to the wind vector held during the
    step starting at that time. ``sampler`` receives the state after the
    completed step each timestamp floors to; times must be non-decreasing.
    Counts as a single simulation (one run counter increment) no matter how
    many samples are taken.
    """
    times = np.asarray(sample_times, dtype=np.float64)
    if times.size and np.any(np.diff(times) < 0.0):
        raise ValidationError("sample times must be non-decreasing")
    if source is not None:
        _require_inside(source, params.domain_side)
    _warn_if_misaligned(times, params.dt)

    counters.runs += 1
    state = initial_state(params)
    targets = [step_index_for(t, params.dt) for t in times]
    k = 0
    n_steps = 0
    while k < len(targets) and targets[k] == 0:
        sampler(state, k)
        k += 1
    while k < len(targets):
        wind = wind_at(state.sim_time)
        state = step(state, params, wind, source, emit)
        n_steps += 1
        while k < len(targets) and targets[k] == n_steps:
            sampler(state, k)
            k += 1
    return state


def simulate(
    params: SimParams,
    wind_at: Callable[[float], Sequence[float]],
    source: Point | None,
    probes: Sequence[tuple[Point, float]],
    emit: bool = True,
) -> np.ndarray:
    """Readings of one simulation at ((x, y), t) probes; one run total."""
    pts = np.array([[p[0][0], p[0][1]] for p in probes], dtype=np.float64)
    times = [float(p[1]) for p in probes]
    for pt in pts:
        _require_inside((pt[0], pt[1]), params.domain_side)
    out = np.empty(len(probes))

    def read(state: SimState, i: int) -> None:
        out[i] = sample_bilinear(state.density.values, pts[i : i + 1], params.cell_size)[0]

    run(params, wind_at, source, times, read, emit)
    return out
