"""Source localization by one-shot grid search.

With a spatially constant wind the simulated concentration field is a pure
translation of the source location: moving the source by d moves the field
by d. So instead of simulating every candidate source location, one
simulation on an enlarged domain (twice the side, four times the cells,
source near the center) contains every candidate's prediction — the
prediction for candidate c at probe position s is the enlarged field read
at s - c + c0, where c0 is where the enlarged-domain source actually sits.
Reading the full k x (m*n) concentration matrix out of a single run is
what makes the search cheap; the per-candidate score is the distance
between the normalized reading vector and the normalized matrix column,
and the estimate is the arg-min candidate.

Normalizing both vectors makes the score invariant to the (unknown) true
release rate, so the emission rate used by the model does not need to
match reality.

Geometry: the measurement domain is [0, L]^2; the enlarged domain spans
[-L/2, 3L/2]^2 on the same cell lattice (internally shifted to
[0, 2L]^2). The enlarged-domain source is snapped to the lattice point
nearest the center that shares the candidates' sub-cell offset, so every
candidate is an exact integer-cell translation of the simulated source and
the translation reads are exact up to boundary effects.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import fluid_sim
from .errors import ValidationError
from .fluid_sim import SimParams, SimState, sample_bilinear
from .wind_model import WindMeasurement, WindSeries, reconstruct

EPSILON = 1e-9
TAU_FLOOR = 1e-6


# --------------------------------------------------------------------------
# types

@dataclass
class MeasurementLog:
    """Time-ordered gas readings with per-sample wind, on [0, side]^2."""

    positions: np.ndarray  # (k, 2) meters
    times_s: np.ndarray  # (k,)
    gas: np.ndarray  # (k,) non-negative readings
    wind: list[WindMeasurement]
    domain_side: float

    def __post_init__(self) -> None:
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.times_s = np.asarray(self.times_s, dtype=np.float64)
        self.gas = np.asarray(self.gas, dtype=np.float64)
        k = self.positions.shape[0]
        if self.positions.shape != (k, 2):
            raise ValidationError("positions must be (k, 2)")
        if self.times_s.shape != (k,) or self.gas.shape != (k,) or len(self.wind) != k:
            raise ValidationError("log columns must have equal length")
        if k < 2:
            raise ValidationError("log needs at least 2 measurements")
        if np.any(np.diff(self.times_s) < 0.0):
            raise ValidationError("log times must be non-decreasing")
        if not np.all(np.isfinite(self.gas)) or np.any(self.gas < 0.0):
            raise ValidationError("gas readings must be finite and >= 0")
        if not self.domain_side > 0.0:
            raise ValidationError("domain_side must be positive")
        lo = self.positions.min()
        hi = self.positions.max()
        if lo < 0.0 or hi > self.domain_side:
            raise ValidationError("measurement positions must lie inside the domain")

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class CandidateGrid:
    """Regular lattice of candidate source locations covering [0, side]^2.

    nx * ny cells; candidate j (row-major: j = iy * nx + ix) is centered at
    ((ix + 0.5) * side/nx, (iy + 0.5) * side/ny).
    """

    nx: int
    ny: int
    domain_side: float

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1:
            raise ValidationError("candidate grid needs at least one cell per axis")
        if not self.domain_side > 0.0:
            raise ValidationError("domain_side must be positive")

    @property
    def count(self) -> int:
        return self.nx * self.ny

    @property
    def pitch(self) -> tuple[float, float]:
        return (self.domain_side / self.nx, self.domain_side / self.ny)

    def centers(self) -> np.ndarray:
        px, py = self.pitch
        ix = np.arange(self.nx)
        iy = np.arange(self.ny)
        xs = (ix + 0.5) * px
        ys = (iy + 0.5) * py
        gx, gy = np.meshgrid(xs, ys)  # row-major over iy, ix
        return np.column_stack([gx.ravel(), gy.ravel()])

    def location_of(self, index: int) -> np.ndarray:
        return self.centers()[index]

    def index_near(self, location: Sequence[float]) -> int:
        d = self.centers() - np.asarray(location, dtype=np.float64)
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))


@dataclass
class ConcentrationMatrix:
    """Predicted reading of every (measurement, candidate) pair."""

    values: np.ndarray  # (k, m*n)
    grid: CandidateGrid
    params: SimParams  # measurement-domain params the predictions used

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.count:
            raise ValidationError("matrix must be (k, grid.count)")


@dataclass
class LikelihoodMap:
    """Per-candidate probabilities, summing to one."""

    probabilities: np.ndarray  # (m*n,)
    grid: CandidateGrid
    tau: float

    def __post_init__(self) -> None:
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-9:
            raise ValidationError("likelihood map must sum to 1")

    def argmax_index(self) -> int:
        return int(np.argmax(self.probabilities))


@dataclass
class SourceEstimate:
    location: np.ndarray  # (2,)
    index: int
    q: np.ndarray  # (m*n,) per-candidate scores


# --------------------------------------------------------------------------
# scoring

def normalize(v: np.ndarray) -> np.ndarray:
    """(v + eps) / sum(v + eps): a strictly positive probability vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValidationError("normalize expects a vector of length >= 2")
    if not np.all(np.isfinite(v)) or np.any(v < 0.0):
        raise ValidationError("entries must be finite and >= 0")
    w = v + EPSILON
    return w / w.sum()


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """KL divergence of the normalized vectors, KL(norm(a) || norm(b))."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("distance expects equal-length vectors")
    p = normalize(a)
    q = normalize(b)
    return float(np.sum(p * (np.log(p) - np.log(q))))


def _scores(gas: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """distance(gas, column) for every column, vectorized."""
    p = normalize(gas)
    cols = matrix + EPSILON
    cols = cols / cols.sum(axis=0)
    return (p * np.log(p)).sum() - p @ np.log(cols)


def _likelihood(q: np.ndarray, grid: CandidateGrid, tau: float | None) -> LikelihoodMap:
    qmin = float(q.min())
    if tau is None:
        tau = float(np.median(q)) - qmin
    tau = max(float(tau), TAU_FLOOR)
    weights = np.exp(-(q - qmin) / tau)
    return LikelihoodMap(probabilities=weights / weights.sum(), grid=grid, tau=tau)


def scores_to_likelihood(
    q: np.ndarray, grid: CandidateGrid, tau: float | None = None
) -> LikelihoodMap:
    """Soft-min of per-candidate scores (lower score = likelier source).

    Infinite scores (unevaluated candidates) get zero probability; the
    automatic temperature is computed over the finite scores only.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (grid.count,):
        raise ValidationError("scores must have one entry per candidate")
    finite = np.isfinite(q)
    if not finite.any():
        raise ValidationError("at least one score must be finite")
    if finite.all():
        return _likelihood(q, grid, tau)
    qmin = float(q[finite].min())
    if tau is None:
        tau = float(np.median(q[finite])) - qmin
    tau = max(float(tau), TAU_FLOOR)
    weights = np.zeros_like(q)
    weights[finite] = np.exp(-(q[finite] - qmin) / tau)
    return LikelihoodMap(probabilities=weights / weights.sum(), grid=grid, tau=tau)


# --------------------------------------------------------------------------
# the one-shot matrix

def _source_anchor(grid: CandidateGrid, params: SimParams) -> np.ndarray:
    """Enlarged-domain source point: lattice-aligned with the candidates.

    Returns internal coordinates on [0, 2L]^2. The point is the one nearest
    the domain center that shares the candidates' sub-cell offset, so every
    (candidate - anchor) displacement is an integer number of cells.
    """
    h = params.cell_size
    centers0 = grid.centers()[0]
    anchor = np.empty(2)
    for axis in range(2):
        frac = (centers0[axis] / h) % 1.0
        target = params.domain_side / h  # center of the enlarged domain, in cells
        anchor[axis] = (math.floor(target - frac + 0.5) + frac) * h
    return anchor


def _check_alignment(grid: CandidateGrid, params: SimParams) -> None:
    h = params.cell_size
    for pitch in grid.pitch:
        ratio = pitch / h
        if abs(ratio - round(ratio)) > 1e-9:
            warnings.warn(
                f"candidate pitch {pitch} is not an integer multiple of the cell "
                f"size {h}; translation reads are approximate",
                stacklevel=3,
            )
            return


def build_matrix(
    log: MeasurementLog,
    params: SimParams,
    grid: CandidateGrid,
    wind: WindSeries | None = None,
) -> ConcentrationMatrix:
    """Predict all candidates' readings from one enlarged simulation.

    ``params`` describes the measurement-domain model; the simulation runs
    on params.enlarged() (2x side, 4x cells, same cell size) with the
    source at the anchored center. Row i is the enlarged density field at
    time t_i sampled at s_i - c_j + anchor for every candidate c_j.
    """
    if grid.domain_side != log.domain_side:
        raise ValidationError("candidate grid and log must share the domain")
    if abs(params.domain_side - log.domain_side) > 1e-12:
        raise ValidationError("model params must cover the measurement domain")
    _check_alignment(grid, params)
    if wind is None:
        wind = reconstruct(log.wind, dt_s=params.dt, horizon_s=float(log.times_s.max()))

    ep = params.enlarged()
    anchor = _source_anchor(grid, params)
    centers = grid.centers()
    k = len(log)
    # anchor is internal ([0, 2L]); a domain point x maps to x + L/2, and the
    # candidate translation c_j - anchor_internal folds both shifts into one:
    # read point = s_i - c_j + anchor.
    pts_per_row = [log.positions[i] - centers + anchor for i in range(k)]
    values = np.empty((k, grid.count))

    def fill(state: SimState, i: int) -> None:
        values[i] = sample_bilinear(state.density.values, pts_per_row[i], ep.cell_size)

    fluid_sim.run(ep, wind.at, (anchor[0], anchor[1]), log.times_s, fill)
    return ConcentrationMatrix(values=values, grid=grid, params=params)


# --------------------------------------------------------------------------
# localization

def localize(
    log: MeasurementLog,
    params: SimParams,
    grid: CandidateGrid,
    tau: float | None = None,
    wind: WindSeries | None = None,
    matrix: ConcentrationMatrix | None = None,
) -> tuple[SourceEstimate, LikelihoodMap]:
    """Arg-min candidate of the one-shot matrix, plus the likelihood map.

    The map is the softmax of -q/tau; tau defaults to median(q) - min(q)
    (floored at 1e-6), which leaves the arg-max unchanged for any positive
    choice.
    """
    if matrix is None:
        matrix = build_matrix(log, params, grid, wind)
    q = _scores(log.gas, matrix.values)
    p = int(np.argmin(q))
    estimate = SourceEstimate(location=grid.location_of(p), index=p, q=q)
    return estimate, _likelihood(q, grid, tau)


def naive_localize(
    log: MeasurementLog,
    params: SimParams,
    grid: CandidateGrid,
    tau: float | None = None,
) -> tuple[SourceEstimate, LikelihoodMap]:
    """Reference search: one enlarged simulation per candidate.

    Runs the same enlarged domain as build_matrix but places the source at
    each candidate in turn and reads the probes at their true positions.
    Exists as the independent route the one-shot matrix is verified
    against; cost is count() simulations instead of one.
    """
    wind = reconstruct(log.wind, dt_s=params.dt, horizon_s=float(log.times_s.max()))
    ep = params.enlarged()
    half = params.domain_side / 2.0
    centers = grid.centers()
    probe_pts = log.positions + half
    values = np.empty((len(log), grid.count))

    for j in range(grid.count):
        src = (centers[j, 0] + half, centers[j, 1] + half)
        col = np.empty(len(log))

        def read(state: SimState, i: int, _col: np.ndarray = col) -> None:
            _col[i] = sample_bilinear(
                state.density.values, probe_pts[i : i + 1], ep.cell_size
            )[0]

        fluid_sim.run(ep, wind.at, src, log.times_s, read)
        values[:, j] = col

    q = _scores(log.gas, values)
    p = int(np.argmin(q))
    estimate = SourceEstimate(location=grid.location_of(p), index=p, q=q)
    return estimate, _likelihood(q, grid, tau)
