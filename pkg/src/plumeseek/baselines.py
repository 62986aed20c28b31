"""Comparison methods: GP regression, kernel DM+V/W maps, and Bayesian
optimization over per-candidate simulations.

All three treat source localization less directly than the one-shot grid
search: the GP and DM+V/W build a concentration map from the readings and
take its peak as the source proxy (which sits downwind of the true source
under any steady wind), while BO minimizes the same simulation-vs-readings
distance the grid search scores, but pays one fresh simulation per
evaluation instead of one total.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import fluid_sim
from .errors import GpFitError, ValidationError
from .fluid_sim import SimParams
from .ogs_localizer import CandidateGrid, MeasurementLog, SourceEstimate, distance
from .wind_model import reconstruct

SQRT5 = math.sqrt(5.0)


# --------------------------------------------------------------------------
# Gaussian process regression (exact, Cholesky)

@dataclass(frozen=True)
class GpHyper:
    kernel: str = "rbf"  # "rbf" | "matern52"
    variance: float = 15.0
    lengthscale: float = 7.0
    noise: float = 1e-4  # observation noise variance

    def __post_init__(self) -> None:
        if self.kernel not in ("rbf", "matern52"):
            raise ValidationError("kernel must be 'rbf' or 'matern52'")
        if self.variance <= 0.0 or self.lengthscale <= 0.0:
            raise ValidationError("variance and lengthscale must be positive")
        if self.noise < 0.0:
            raise ValidationError("noise variance must be >= 0")


def _kernel_matrix(hyper: GpHyper, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    d2 = np.sum((xa[:, None, :] - xb[None, :, :]) ** 2, axis=2)
    if hyper.kernel == "rbf":
        return hyper.variance * np.exp(-0.5 * d2 / hyper.lengthscale**2)
    r = np.sqrt(np.maximum(d2, 0.0)) / hyper.lengthscale
    return hyper.variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


@dataclass
class GpModel:
    x: np.ndarray  # (n, 2)
    hyper: GpHyper
    chol: np.ndarray  # lower Cholesky of K + (noise + jitter) I
    alpha: np.ndarray  # (K + noise I)^-1 y
    jitter: float


def gp_fit(log: MeasurementLog, hyper: GpHyper | None = None) -> GpModel:
    """Fit an exact GP to the measured gas concentrations (position -> ppm)."""
    return gp_fit_xy(log.positions, log.gas, hyper)


def gp_fit_xy(x: np.ndarray, y: np.ndarray, hyper: GpHyper | None = None) -> GpModel:
    """Exact GP fit on raw arrays; jitter escalates by decades if Cholesky fails.

    Raises GpFitError when even the largest jitter (1e-6 x signal variance)
    cannot make the covariance positive definite.
    """
    hyper = hyper or GpHyper()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2 or x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise ValidationError("gp_fit expects (n, 2) locations and n observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("gp_fit inputs must be finite")
    k = _kernel_matrix(hyper, x, x)
    base = hyper.variance
    jitter = 0.0
    for exponent in (None, -12, -10, -8, -6):
        if exponent is not None:
            jitter = base * 10.0**exponent
        try:
            chol = np.linalg.cholesky(k + (hyper.noise + jitter) * np.eye(len(y)))
        except np.linalg.LinAlgError:
            continue
        alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
        return GpModel(x=x, hyper=hyper, chol=chol, alpha=alpha, jitter=jitter)
    raise GpFitError(
        f"covariance not positive definite even with jitter {jitter:g}; "
        "observations may be duplicated with incompatible values"
    )


def gp_predict(model: GpModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at query points (variance clipped >= 0)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ks = _kernel_matrix(model.hyper, model.x, xs)  # (n, m)
    mean = ks.T @ model.alpha
    w = np.linalg.solve(model.chol, ks)
    var = model.hyper.variance - np.sum(w * w, axis=0)
    return mean, np.maximum(var, 0.0)


def gp_peak(model: GpModel, grid: CandidateGrid) -> tuple[np.ndarray, int]:
    """Arg-max of the posterior mean over the candidate grid (first on tie)."""
    mean, _ = gp_predict(model, grid.centers())
    idx = int(np.argmax(mean))
    return grid.location_of(idx), idx


# --------------------------------------------------------------------------
# kernel DM+V/W maps

@dataclass(frozen=True)
class DmvwParams:
    cell_size: float = 0.2
    kernel_size: float = 10.0  # sigma in map cells
    evaluation_radius: float = 10.0  # meters around any sample
    time_scale: float = 1.0  # seconds
    wind_scale: float = 0.001  # (m/s)^-1: stretch/shift per unit wind speed
    confidence_scale: float = 1.0  # kernel mass where confidence reaches 1-1/e

    def __post_init__(self) -> None:
        if self.cell_size <= 0.0 or self.kernel_size <= 0.0:
            raise ValidationError("cell_size and kernel_size must be positive")
        if self.evaluation_radius <= 0.0 or self.time_scale <= 0.0:
            raise ValidationError("evaluation_radius and time_scale must be positive")
        if self.wind_scale < 0.0 or self.confidence_scale <= 0.0:
            raise ValidationError("wind_scale must be >= 0, confidence_scale > 0")


@dataclass
class DmvwMaps:
    xs: np.ndarray  # cell center x coordinates (width,)
    ys: np.ndarray  # cell center y coordinates (height,)
    mean: np.ndarray  # (height, width)
    variance: np.ndarray
    confidence: np.ndarray  # in [0, 1), decreasing away from samples
    params: DmvwParams

    def peak(self) -> tuple[np.ndarray, int]:
        idx = int(np.argmax(self.mean))
        j, i = divmod(idx, self.mean.shape[1])
        return np.array([self.xs[i], self.ys[j]]), idx


def dmvw_map(
    log: MeasurementLog,
    params: DmvwParams | None = None,
    t_now: float | None = None,
) -> DmvwMaps:
    """Kernel-weighted mean/variance maps with wind-deformed kernels.

    Each sample contributes a Gaussian kernel rotated to its local wind:
    stretched along the wind by 1 + wind_scale*|w| and displaced downwind
    by wind_scale*|w| sigmas, with weight decayed by
    exp(-(t_now - t_i)/time_scale). Cells farther than evaluation_radius
    from every sample hold the prior (the mean reading) at zero confidence.
    """
    params = params or DmvwParams()
    if len(log) < 1:
        raise ValidationError("need at least one measurement")
    if t_now is None:
        t_now = float(log.times_s.max())
    if t_now < float(log.times_s.max()):
        raise ValidationError("t_now must not precede the last measurement")

    n_cells = max(4, int(round(log.domain_side / params.cell_size)))
    coords = (np.arange(n_cells) + 0.5) * (log.domain_side / n_cells)
    gx, gy = np.meshgrid(coords, coords)
    cells = np.column_stack([gx.ravel(), gy.ravel()])

    sigma = params.kernel_size * params.cell_size
    prior = float(log.gas.mean())
    weights = np.zeros(cells.shape[0])
    weighted_sum = np.zeros(cells.shape[0])
    near = np.zeros(cells.shape[0], dtype=bool)
    per_sample_w = []

    for i in range(len(log)):
        w_vec = log.wind[i].vector()
        speed = float(np.hypot(w_vec[0], w_vec[1]))
        stretch = 1.0 + params.wind_scale * speed
        if speed > 0.0:
            e_par = w_vec / speed
        else:
            e_par = np.array([1.0, 0.0])
        e_perp = np.array([-e_par[1], e_par[0]])
        center = log.positions[i] + params.wind_scale * speed * sigma * e_par
        d = cells - center
        d_par = d @ e_par
        d_perp = d @ e_perp
        decay = math.exp(-(t_now - float(log.times_s[i])) / params.time_scale)
        wi = decay * np.exp(
            -0.5 * ((d_par / (sigma * stretch)) ** 2 + (d_perp / sigma) ** 2)
        )
        per_sample_w.append(wi)
        weights += wi
        weighted_sum += wi * log.gas[i]
        near |= np.einsum("ij,ij->i", cells - log.positions[i], cells - log.positions[i]) <= (
            params.evaluation_radius**2
        )

    tiny = 1e-300
    raw_mean = weighted_sum / np.maximum(weights, tiny)
    confidence = 1.0 - np.exp(-weights / params.confidence_scale)
    confidence = np.where(near, confidence, 0.0)
    mean = confidence * raw_mean + (1.0 - confidence) * prior

    var_sum = np.zeros_like(weights)
    for i, wi in enumerate(per_sample_w):
        var_sum += wi * (log.gas[i] - raw_mean) ** 2
    raw_var = var_sum / np.maximum(weights, tiny)
    variance = np.where(near, confidence * raw_var, 0.0)

    shape = (n_cells, n_cells)
    return DmvwMaps(
        xs=coords,
        ys=coords,
        mean=mean.reshape(shape),
        variance=variance.reshape(shape),
        confidence=confidence.reshape(shape),
        params=params,
    )


# --------------------------------------------------------------------------
# Bayesian optimization over candidate source locations

@dataclass(frozen=True)
class Acquisition:
    kind: str  # "lcb" | "ei" | "mpi"
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("lcb", "ei", "mpi"):
            raise ValidationError("acquisition kind must be lcb, ei, or mpi")
        if self.kind == "lcb" and self.alpha <= 0.0:
            raise ValidationError("lcb alpha must be positive")

    @classmethod
    def parse(cls, name: str) -> "Acquisition":
        """Parse 'lcb3', 'lcb0.5', 'ei', 'mpi'."""
        name = name.strip().lower()
        if name.startswith("lcb") and len(name) > 3:
            return cls("lcb", float(name[3:]))
        if name in ("lcb", "ei", "mpi"):
            return cls(name)
        raise ValidationError(f"unknown acquisition {name!r}")

    def label(self) -> str:
        if self.kind == "lcb":
            alpha = f"{self.alpha:g}"
            return f"lcb{alpha}"
        return self.kind


def _acquisition_scores(
    acq: Acquisition, mean: np.ndarray, var: np.ndarray, f_best: float
) -> np.ndarray:
    """Scores to minimize (objective f is minimized)."""
    sd = np.sqrt(np.maximum(var, 1e-300))
    if acq.kind == "lcb":
        return mean - acq.alpha * sd
    z = (f_best - mean) / sd
    cdf = 0.5 * (1.0 + _erf_vec(z / math.sqrt(2.0)))
    if acq.kind == "mpi":
        return -cdf
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return -((f_best - mean) * cdf + sd * pdf)


def _erf_vec(x: np.ndarray) -> np.ndarray:
    return np.vectorize(math.erf)(x)


@dataclass
class BoTracePoint:
    index: int
    location: np.ndarray
    value: float
    wall_s: float


def bo_localize(
    log: MeasurementLog,
    params: SimParams,
    grid: CandidateGrid,
    acquisition: Acquisition | str = "lcb1",
    budget: int = 20,
    seed: int = 0,
    hyper: GpHyper | None = None,
) -> tuple[SourceEstimate, list[BoTracePoint]]:
    """Search candidate source locations by Bayesian optimization.

    The objective is the same normalized-readings distance the grid search
    minimizes, but each evaluation runs a fresh simulation on the
    measurement domain with the source at the queried candidate. Two
    seed-random candidates start the search; afterwards a Matern-5/2 GP on
    standardized objective values picks the acquisition arg-min over the
    grid. Evaluation count equals budget exactly; returns the best-seen
    candidate and the full evaluation trace with wall times.
    """
    if isinstance(acquisition, str):
        acquisition = Acquisition.parse(acquisition)
    if budget < 2:
        raise ValidationError("budget must be >= 2 (two seed evaluations)")
    if hyper is None:
        hyper = GpHyper(kernel="matern52", variance=1.0, lengthscale=grid.domain_side / 5.0, noise=1e-6)
    rng = np.random.default_rng(seed)
    wind = reconstruct(log.wind, dt_s=params.dt, horizon_s=float(log.times_s.max()))
    centers = grid.centers()
    probes = [((p[0], p[1]), float(t)) for p, t in zip(log.positions, log.times_s)]

    def objective(j: int) -> float:
        src = (centers[j, 0], centers[j, 1])
        predicted = fluid_sim.simulate(params, wind.at, src, probes)
        return distance(log.gas, predicted)

    trace: list[BoTracePoint] = []
    evaluated: list[int] = []
    values: list[float] = []

    def evaluate(j: int) -> None:
        t0 = time.perf_counter()
        f = objective(j)
        trace.append(
            BoTracePoint(index=j, location=centers[j], value=f, wall_s=time.perf_counter() - t0)
        )
        evaluated.append(j)
        values.append(f)

    first, second = rng.integers(0, grid.count, size=2)
    evaluate(int(first))
    evaluate(int(second))

    while len(trace) < budget:
        y = np.array(values)
        scale = float(y.std())
        if scale <= 0.0:
            scale = 1.0
        y_std = (y - y.mean()) / scale
        model = gp_fit_xy(centers[evaluated], y_std, hyper)
        mean, var = gp_predict(model, centers)
        f_best = float(y_std.min())
        scores = _acquisition_scores(acquisition, mean, var, f_best)
        evaluate(int(np.argmin(scores)))

    best = int(np.argmin(values))
    # q holds the objective where evaluated, +inf for unvisited candidates
    q = np.full(grid.count, np.inf)
    for j, f in zip(evaluated, values):
        q[j] = min(q[j], f)
    estimate = SourceEstimate(
        location=centers[evaluated[best]], index=evaluated[best], q=q
    )
    return estimate, trace
