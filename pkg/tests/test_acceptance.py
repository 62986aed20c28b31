"""Acceptance gate: one test per shipped claim, scenarios and tolerances frozen.

Each test prints a single PASS line with its measured margins, so running
`pytest -s tests/test_acceptance.py` reads as a checklist.  Scenes are built
from fixed seeds; every threshold is pinned next to its assertion.
"""

import math
import statistics
import time
from dataclasses import replace

import numpy as np

from plumeseek import fluid_sim
from plumeseek.active_sensing import run_online
from plumeseek.baselines import bo_localize, dmvw_map, gp_fit, gp_peak
from plumeseek.cli import main
from plumeseek.experiment_harness import (
    EnvSpec,
    WindProtocol,
    localization_error,
    make_synthetic_env,
    sensitivity_sweep,
)
from plumeseek.fluid_sim import ScalarGrid, SimParams, VelocityGrid
from plumeseek.ogs_localizer import (
    CandidateGrid,
    MeasurementLog,
    build_matrix,
    distance,
    localize,
    normalize,
)
from plumeseek.wind_model import WindMeasurement, reconstruct


def _report(name: str, detail: str) -> None:
    print(f"\nPASS {name}: {detail}")


# One shared scene family: the source sits on a candidate center and the
# probes stagger down the plume axis, with one cold upwind anchor and one
# off-axis point, so readings span orders of magnitude in every scene.
PROBE_OFFSETS = ((3.0, 0.0), (4.5, 0.0), (6.0, 0.0), (-2.5, 0.0), (3.5, 2.0))
PROBE_TIMES = (6.0, 8.0, 10.0, 12.0, 14.0)


def _scene(seed: int, cells: int = 32, nx: int = 8, speed: float = 0.6):
    side = 32.0
    rng = np.random.default_rng(seed)
    grid = CandidateGrid(nx=nx, ny=nx, domain_side=side)
    theta = float(rng.choice(np.array([0.0, 0.5, 1.0, 1.5])) * math.pi)
    d = np.array([math.cos(theta), math.sin(theta)])
    perp = np.array([-d[1], d[0]])
    centers = grid.centers()
    ok = np.ones(len(centers), dtype=bool)
    for r, s in PROBE_OFFSETS:
        pts = centers + r * d + s * perp
        ok &= np.all((pts > 1.0) & (pts < side - 1.0), axis=1)
    source = centers[int(rng.choice(np.flatnonzero(ok)))]
    probes = tuple(tuple(source + r * d + s * perp) for r, s in PROBE_OFFSETS)
    params = SimParams(
        grid_cells_per_side=cells,
        domain_side=side,
        diffusion=1e-3,
        dt=1.0,
        emission_rate=2000.0,
    )
    wind = WindProtocol(mode="constant", base_direction_rad=theta, speed_mps=speed)
    return params, grid, source, probes, theta, wind


def _collect(params, source, probes, wind, noise, seed) -> MeasurementLog:
    env = make_synthetic_env(
        EnvSpec(params=params, source=tuple(source), wind=wind, noise=noise, seed=seed)
    )
    gas, winds = [], []
    for pos, t in zip(probes, PROBE_TIMES):
        g, w = env.sample(pos, t)
        gas.append(g)
        winds.append(w)
    return MeasurementLog(
        positions=np.array(probes),
        times_s=np.array(PROBE_TIMES),
        gas=np.array(gas),
        wind=winds,
        domain_side=params.domain_side,
    )


def test_one_shot_matrix_equivalence():
    """The single enlarged run reproduces per-candidate simulations."""
    t0 = time.perf_counter()
    params = SimParams(
        grid_cells_per_side=32, domain_side=32.0, diffusion=1e-3, dt=1.0,
        emission_rate=2000.0,
    )
    grid = CandidateGrid(nx=8, ny=8, domain_side=32.0)
    half = params.domain_side / 2.0
    worst = 0.0
    agree = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pos = rng.uniform(4.0, 28.0, size=(5, 2))
        times = np.sort(rng.choice(np.arange(4.0, 15.0), size=5, replace=False))
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        speed = float(rng.uniform(0.3, 1.0))
        log = MeasurementLog(
            positions=pos,
            times_s=times,
            gas=rng.uniform(1.0, 100.0, size=5),
            wind=[WindMeasurement(t, speed, theta) for t in times],
            domain_side=params.domain_side,
        )
        matrix = build_matrix(log, params, grid)

        # reference route: one enlarged simulation per candidate, source at
        # the candidate, probes at their true (shifted-to-center) positions
        series = reconstruct(log.wind, dt_s=params.dt, horizon_s=float(times[-1]))
        enlarged = params.enlarged()
        probe_list = [((x + half, y + half), t) for (x, y), t in zip(pos, times)]
        reference = np.empty_like(matrix.values)
        for j, c in enumerate(grid.centers()):
            reference[:, j] = fluid_sim.simulate(
                enlarged, series.at, (c[0] + half, c[1] + half), probe_list
            )

        worst = max(worst, np.abs(matrix.values - reference).max() / np.abs(reference).max())
        est, _ = localize(log, params, grid, matrix=matrix)
        p = normalize(log.gas)
        ref_scores = [distance(p, normalize(col)) for col in reference.T]
        agree += est.index == int(np.argmin(ref_scores))

    elapsed = time.perf_counter() - t0
    assert worst <= 1e-6, f"matrix deviates from per-candidate reference: {worst:.3e}"
    assert agree == 20, f"argmin agreement only {agree}/20"
    assert elapsed < 60.0, f"took {elapsed:.1f}s, budget 60s"
    _report(
        "one-shot matrix equivalence",
        f"max rel diff {worst:.2e} (tol 1e-6), argmin {agree}/20, {elapsed:.1f}s < 60s",
    )


def test_noise_free_self_consistency():
    """Matched model and environment, no noise: the estimate is exact."""
    t0 = time.perf_counter()
    exact = 0
    for seed in range(20):
        params, grid, source, probes, _, wind = _scene(seed)
        log = _collect(params, source, probes, wind, 0.0, seed)
        est, _ = localize(log, params, grid)
        exact += localization_error(est.location, source) == 0.0
    elapsed = time.perf_counter() - t0
    assert exact >= 19, f"exact hits only {exact}/20"
    assert elapsed < 120.0, f"took {elapsed:.1f}s, budget 120s"
    _report(
        "noise-free self-consistency",
        f"zero-error runs {exact}/20 (need >= 19), {elapsed:.1f}s < 120s",
    )


def test_noisy_online_convergence():
    """Closed-loop seeking under gusty wind and 10% reading noise."""
    t0 = time.perf_counter()
    params = SimParams(
        grid_cells_per_side=80, domain_side=80.0, diffusion=6e-4, dt=2.0,
        emission_rate=20.0,
    )
    grid = CandidateGrid(nx=8, ny=8, domain_side=80.0)
    source = (57.5, 42.5)
    wind = WindProtocol(
        mode="variable",
        base_direction_rad=math.pi,
        speed_mps=0.3,
        jitter_rad=math.pi / 2,
        change_period_s=30.0,
    )
    starts = [
        (47.5, 42.5),  # on plume, 10 m downwind
        (37.5, 42.5),  # on plume, 20 m downwind
        (47.5, 47.5),  # on plume, above axis
        (42.5, 37.5),  # on plume, below axis
        (47.5, 32.5),  # plume edge, 10 m off axis
        (42.5, 52.5),  # plume edge, 10 m off axis
        (32.5, 27.5),  # off plume
        (52.5, 57.5),  # off plume, upwind side
    ]
    within = 2 * grid.pitch[0]  # two candidate cells
    good = 0
    converged_samples = []
    errors = []
    for i, start in enumerate(starts):
        env = make_synthetic_env(
            EnvSpec(params=params, source=source, wind=wind, noise=0.10, seed=100 + i)
        )
        state, _ = run_online(
            env,
            [start, (start[0] + 5.0, start[1])],
            params,
            grid,
            max_iters=18,  # 2 initial samples + at most 18 flights
            sample_period=20.0,
        )
        samples = len(state.log)
        err = localization_error(state.suggestion, source)
        errors.append(err)
        good += state.converged and err <= within and samples <= 20
        if state.converged:
            converged_samples.append(samples)
    elapsed = time.perf_counter() - t0
    median_samples = statistics.median(converged_samples)
    assert good >= 6, f"only {good}/8 starts converged within {within} m, errors {errors}"
    assert median_samples <= 10, f"median converged sample count {median_samples}"
    assert elapsed < 600.0, f"took {elapsed:.1f}s, budget 600s"
    _report(
        "noisy online convergence",
        f"{good}/8 within {within:.0f} m on <= 20 samples (need >= 6), "
        f"median samples {median_samples} (need <= 10), {elapsed:.1f}s < 600s",
    )


def test_release_rate_invariance():
    """Scaling the true emission leaves the estimate and map unchanged."""
    worst = 0.0
    stable = True
    for seed in range(10):
        params, grid, source, probes, _, wind = _scene(seed)
        indices, maps = [], []
        for c in (0.1, 1.0, 10.0):
            env_params = replace(params, emission_rate=c * params.emission_rate)
            log = _collect(env_params, source, probes, wind, 0.0, seed)
            est, lik = localize(log, params, grid)
            indices.append(est.index)
            maps.append(lik.probabilities)
        stable &= indices[0] == indices[1] == indices[2]
        worst = max(worst, max(np.abs(m - maps[1]).max() for m in maps))
    assert stable, "argmin changed under emission rescaling"
    assert worst <= 1e-9, f"likelihood maps differ by {worst:.3e}"
    _report(
        "release-rate invariance",
        f"argmin identical for 0.1x/1x/10x over 10 seeds, "
        f"max map diff {worst:.2e} (tol 1e-9)",
    )


def test_model_sensitivity_trends():
    """Robust to release rate, degrades in order with wind model error."""
    base, grid, *_ = _scene(0)
    dataset = []
    for seed in range(20):
        params, _, source, probes, _, wind = _scene(seed)
        dataset.append((_collect(params, source, probes, wind, 0.10, seed), source))

    def medians(rows):
        return [float(np.median([r.error_m for r in row.records])) for row in rows]

    gas = medians(sensitivity_sweep(
        base, "gas_release", [200.0, 1000.0, 2000.0, 4000.0, 20000.0], dataset, grid))
    off = medians(sensitivity_sweep(
        base, "wind_direction_offset", [0.0, math.pi / 12, math.pi / 2], dataset, grid))
    spd_rows = sensitivity_sweep(
        base, "wind_speed_scale", [1.0, 2.0, 4.0, 8.0], dataset, grid)
    spd = medians(spd_rows)

    pitch = grid.pitch[0]
    assert max(gas) - min(gas) <= pitch, f"release-rate curve not flat: {gas}"
    assert off[2] >= off[1] >= off[0], f"direction-offset medians out of order: {off}"
    assert off[2] > 0.0, "quarter-turn offset should visibly degrade"
    assert spd[2] >= spd[1] >= spd[0], f"speed-scale medians out of order: {spd[:3]}"
    # the sweep must be live: an 8x speed error has to hurt somewhere
    assert spd_rows[3].mean_error_m > 0.0
    _report(
        "model sensitivity trends",
        f"release medians {gas} flat within {pitch} m; offset medians {off} ordered; "
        f"speed medians {spd[:3]} ordered (8x mean {spd_rows[3].mean_error_m:.2f} m)",
    )


def test_grid_search_vs_bayesian_optimization():
    """One enlarged run beats a 50-evaluation BO loop on cost and error."""
    wins = 0
    ogs_walls, bo_walls = [], []
    for seed in range(20):
        params, grid, source, probes, _, wind = _scene(seed, cells=64)
        log = _collect(params, source, probes, wind, 0.0, seed)

        t0 = time.perf_counter()
        est, _ = localize(log, params, grid)
        ogs_walls.append(time.perf_counter() - t0)
        ogs_err = localization_error(est.location, source)

        best_bo = math.inf
        for acq in ("lcb3", "lcb0.5", "ei", "mpi"):
            t0 = time.perf_counter()
            bo_est, _ = bo_localize(log, params, grid, acq, budget=50, seed=seed)
            wall = time.perf_counter() - t0
            if acq == "lcb3":
                bo_walls.append(wall)
            best_bo = min(best_bo, localization_error(bo_est.location, source))
        wins += ogs_err <= best_bo

    speedup = sum(bo_walls) / sum(ogs_walls)
    assert speedup >= 10.0, f"speedup only {speedup:.1f}x"
    assert wins >= 14, f"error no worse than BO's best in only {wins}/20 scenes"
    _report(
        "grid search vs Bayesian optimization",
        f"speedup {speedup:.1f}x (need >= 10x), "
        f"error <= BO best acquisition in {wins}/20 scenes (need >= 14)",
    )


def test_baseline_downwind_displacement():
    """Interpolating baselines peak downwind of the source; ours does not."""
    gp_down = dm_down = beats_gp = beats_dm = 0
    for seed in range(20):
        params, grid, source, probes, theta, wind = _scene(seed)
        log = _collect(params, source, probes, wind, 0.0, seed)
        downwind = np.array([math.cos(theta), math.sin(theta)])

        est, _ = localize(log, params, grid)
        ogs_err = localization_error(est.location, source)
        gp_loc, _ = gp_peak(gp_fit(log), grid)
        dm_loc, _ = dmvw_map(log).peak()

        gp_down += float(np.dot(gp_loc - source, downwind)) > 0.0
        dm_down += float(np.dot(dm_loc - source, downwind)) > 0.0
        beats_gp += ogs_err <= localization_error(gp_loc, source)
        beats_dm += ogs_err <= localization_error(dm_loc, source)

    assert gp_down >= 16, f"GP peak downwind in only {gp_down}/20 seeds"
    assert dm_down >= 16, f"DM+V/W peak downwind in only {dm_down}/20 seeds"
    assert beats_gp >= 14, f"error <= GP in only {beats_gp}/20 seeds"
    assert beats_dm >= 14, f"error <= DM+V/W in only {beats_dm}/20 seeds"
    _report(
        "baseline downwind displacement",
        f"GP downwind {gp_down}/20, DM+V/W downwind {dm_down}/20 (need >= 16); "
        f"error <= GP {beats_gp}/20, <= DM+V/W {beats_dm}/20 (need >= 14)",
    )


def test_solver_unit_properties():
    """Projection, diffusion mass balance, and zero-wind symmetry."""
    t0 = time.perf_counter()

    reductions = []
    rng = np.random.default_rng(7)
    for mode in ("open", "closed"):
        vel = VelocityGrid(64, 64, rng.normal(size=(64, 64)), rng.normal(size=(64, 64)))
        before = np.abs(fluid_sim.divergence(vel, mode)).max()
        after = np.abs(
            fluid_sim.divergence(fluid_sim.project(vel, 80, mode), mode)
        ).max()
        reductions.append(before / after)
    min_reduction = min(reductions)
    assert min_reduction >= 1e3, f"divergence reduced only {min_reduction:.1e}x"

    field = ScalarGrid(64, 64, 0.5, rng.random((64, 64)))
    mass0 = field.values.sum()
    for _ in range(50):
        field = fluid_sim.diffuse(field, 1e-3, 1.0, 20)
    drift = abs(field.values.sum() - mass0) / mass0
    assert drift <= 1e-9, f"diffusion mass drift {drift:.3e}"

    params = SimParams(
        grid_cells_per_side=64, domain_side=32.0, diffusion=1e-3, dt=1.0,
        emission_rate=50.0,
    )
    state = fluid_sim.initial_state(params)
    for _ in range(8):
        state = fluid_sim.step(state, params, (0.0, 0.0), source=(16.0, 16.0))
    dens = state.density.values
    asym = max(
        np.abs(dens - np.rot90(dens, k)).max() for k in (1, 2, 3)
    ) / dens.max()
    assert asym <= 1e-6, f"zero-wind field asymmetric: {asym:.3e}"

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"took {elapsed:.1f}s, budget 60s"
    _report(
        "solver unit properties",
        f"divergence cut {min_reduction:.1e}x (need 1e3), mass drift {drift:.1e} "
        f"(tol 1e-9), 4-fold asymmetry {asym:.1e} (tol 1e-6), {elapsed:.1f}s < 60s",
    )


def test_cli_determinism(tmp_path):
    """Every command, run twice with a fixed seed, emits identical bytes."""
    scenario = {
        "domain_side": 16.0, "cells": 16, "diffusion": 1.0e-3, "dt": 1.0,
        "emission_rate": 2000.0, "source_x": 11.0, "source_y": 7.0,
        "wind_mode": "constant", "wind_speed": 0.6,
        "wind_direction": math.pi, "seed": 0,
        "probe_xs": [10.0, 8.0, 6.0, 9.0, 5.0],
        "probe_ys": [7.0, 7.0, 7.0, 9.0, 7.0],
        "probe_times": [6.0, 8.0, 10.0, 12.0, 14.0],
    }
    grid = {"grid_nx": 8, "grid_ny": 8}
    active = {
        "init_x1": 5.0, "init_y1": 7.0, "init_x2": 7.0, "init_y2": 9.0,
        "sample_period": 5.0,
    }
    bench = {
        "sweep_params": ["gas_release"],
        "gas_release_values": [200.0, 2000.0],
        "speed_resolutions": [16],
        "bo_budget": 2,
        "bench_seeds": [0],
    }

    def write_yaml(name, mapping):
        lines = []
        for key, value in mapping.items():
            if isinstance(value, (list, tuple)):
                lines.append(f"{key}: [{', '.join(repr(v) for v in value)}]")
            elif isinstance(value, str):
                lines.append(f"{key}: {value}")
            else:
                lines.append(f"{key}: {value!r}")
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n")
        return path

    sim_cfg = write_yaml("sim.yaml", scenario)
    loc_cfg = write_yaml("loc.yaml", {
        **{k: v for k, v in scenario.items()
           if k in ("domain_side", "cells", "diffusion", "dt", "emission_rate")},
        **grid,
    })
    act_cfg = write_yaml("act.yaml", {
        **{k: v for k, v in scenario.items() if not k.startswith("probe_")},
        **grid,
        **active,
    })
    ben_cfg = write_yaml("bench.yaml", {**scenario, **grid, **bench})

    outputs = {}
    rcs = {}
    for run in ("one", "two"):
        base = tmp_path / run
        rc = main(["simulate", "--config", str(sim_cfg), "--out", str(base / "sim")])
        assert rc == 0
        flight = base / "sim" / "probes.csv"
        rcs[run] = [
            main(["localize", str(flight), "--config", str(loc_cfg),
                  "--out", str(base / "loc")]),
            main(["active", "--config", str(act_cfg), "--out", str(base / "act")]),
            main(["bench", "--config", str(ben_cfg), "--out", str(base / "ben")]),
        ]
        outputs[run] = {
            p.relative_to(base): p.read_bytes()
            for p in sorted(base.rglob("*")) if p.is_file()
        }
    assert rcs["one"] == rcs["two"] == [0, 0, 0]
    assert set(outputs["one"]) == set(outputs["two"])

    compared = 0
    for rel, blob in outputs["one"].items():
        if rel.name == "speed.csv":
            # wall-clock columns are timing; compare the numeric ones
            rows1 = blob.decode().splitlines()
            rows2 = outputs["two"][rel].decode().splitlines()
            assert len(rows1) == len(rows2)
            for a, b in zip(rows1[1:], rows2[1:]):
                fa, fb = a.split(","), b.split(",")
                for col in (0, 2, 3, 5, 6):  # cells, errors, steps, evaluations
                    assert fa[col] == fb[col], f"speed.csv column {col} differs"
        else:
            assert blob == outputs["two"][rel], f"{rel} differs between runs"
        compared += 1
    _report(
        "CLI determinism",
        f"{compared} output files byte-identical across repeat runs "
        f"(speed.csv timing columns exempt)",
    )
