"""Command-line entry points: simulate, localize, active, bench.

Every command reads one flat YAML config, writes its outputs under --out,
and finishes by writing a run manifest listing every file it produced.
Exit codes: 0 success, 1 config/input error, 2 unconverged active mission
(and argparse usage errors).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__, active_sensing, formats
from .baselines import bo_localize, dmvw_map, gp_fit, gp_peak, gp_predict
from .errors import ConfigError, PlumeseekError
from .experiment_harness import (
    SWEEP_PARAMS,
    EnvSpec,
    ExperimentConfig,
    WindProtocol,
    benchmark_speed,
    collect_log,
    localization_error,
    make_synthetic_env,
    sensitivity_sweep,
    worker_count,
)
from .fluid_sim import SimParams
from .ogs_localizer import CandidateGrid, MeasurementLog, localize, scores_to_likelihood

R = formats.REQUIRED

_MODEL_KEYS: dict[str, tuple[str, Any]] = {
    "domain_side": ("float", R),
    "cells": ("int", R),
    "diffusion": ("float", 1e-4),
    "dt": ("float", 1.0),
    "emission_rate": ("float", 50.0),
    "wind_coupling": ("float", 1.0),
    "boundary_mode": ("str", "open"),
    "solver_iterations": ("int", 20),
}

_ENV_KEYS: dict[str, tuple[str, Any]] = {
    "source_x": ("float", R),
    "source_y": ("float", R),
    "wind_mode": ("str", "constant"),
    "wind_speed": ("float", 1.0),
    "wind_direction": ("float", math.pi),
    "wind_jitter": ("float", math.pi / 2),
    "wind_change_period": ("float", 30.0),
    "noise": ("float", 0.0),
    "seed": ("int", 0),
}

_PROBE_KEYS: dict[str, tuple[str, Any]] = {
    "probe_times": ("float_list", R),
    "probe_xs": ("float_list", R),
    "probe_ys": ("float_list", R),
}

_GRID_KEYS: dict[str, tuple[str, Any]] = {
    "grid_nx": ("int", R),
    "grid_ny": ("int", R),
}

SIMULATE_SCHEMA = {**_MODEL_KEYS, **_ENV_KEYS, **_PROBE_KEYS}

LOCALIZE_SCHEMA = {
    **_MODEL_KEYS,
    **_GRID_KEYS,
    "tau": ("float", 0.0),  # 0 = automatic temperature
    "bo_budget": ("int", 20),
    "bo_acquisition": ("str", "lcb1"),
    "seed": ("int", 0),
}

ACTIVE_SCHEMA = {
    **_MODEL_KEYS,
    **_ENV_KEYS,
    **_GRID_KEYS,
    "init_x1": ("float", R),
    "init_y1": ("float", R),
    "init_x2": ("float", R),
    "init_y2": ("float", R),
    "sample_period": ("float", 20.0),
    "max_iters": ("int", 20),
}

BENCH_SCHEMA = {
    **_MODEL_KEYS,
    **_ENV_KEYS,
    **_PROBE_KEYS,
    **_GRID_KEYS,
    "sweep_params": ("str_list", list(SWEEP_PARAMS)),
    "gas_release_values": ("float_list", [10.0, 25.0, 50.0, 100.0, 200.0]),
    "diffusion_values": ("float_list", [1e-5, 1e-4, 1e-3]),
    "wind_speed_scale_values": ("float_list", [0.5, 1.0, 2.0]),
    "wind_direction_offset_values": ("float_list", [0.0, math.pi / 8, math.pi / 4]),
    "fidelity_values": ("float_list", [0.25, 0.5, 1.0]),
    "speed_resolutions": ("int_list", [32, 64]),
    "bo_budget": ("int", 20),
    "bo_acquisition": ("str", "lcb3"),
    "bench_seeds": ("int_list", [0]),
}


def _model_params(cfg: Mapping[str, Any]) -> SimParams:
    return SimParams(
        grid_cells_per_side=cfg["cells"],
        domain_side=cfg["domain_side"],
        diffusion=cfg["diffusion"],
        dt=cfg["dt"],
        solver_iterations=cfg["solver_iterations"],
        emission_rate=cfg["emission_rate"],
        wind_coupling=cfg["wind_coupling"],
        boundary_mode=cfg["boundary_mode"],
    )


def _env_spec(cfg: Mapping[str, Any], seed: int | None) -> EnvSpec:
    return EnvSpec(
        params=_model_params(cfg),
        source=(cfg["source_x"], cfg["source_y"]),
        wind=WindProtocol(
            mode=cfg["wind_mode"],
            base_direction_rad=cfg["wind_direction"],
            speed_mps=cfg["wind_speed"],
            jitter_rad=cfg["wind_jitter"],
            change_period_s=cfg["wind_change_period"],
        ),
        noise=cfg["noise"],
        seed=cfg["seed"] if seed is None else seed,
    )


def _probes(cfg: Mapping[str, Any]) -> tuple[tuple[tuple[float, float], ...], tuple[float, ...]]:
    xs, ys, ts = cfg["probe_xs"], cfg["probe_ys"], cfg["probe_times"]
    if not (len(xs) == len(ys) == len(ts)):
        raise ConfigError("probe_xs, probe_ys, probe_times must be equally long")
    return tuple(zip(xs, ys)), tuple(ts)


def _grid(cfg: Mapping[str, Any]) -> CandidateGrid:
    return CandidateGrid(nx=cfg["grid_nx"], ny=cfg["grid_ny"], domain_side=cfg["domain_side"])


def _finish(out: Path, cfg: Mapping[str, Any], seed: int, outputs: list[str]) -> None:
    manifest = formats.RunManifest(
        config_hash=formats.config_digest(cfg),
        seed=seed,
        version=__version__,
        outputs=sorted(outputs),
    )
    formats.write_manifest(out / "manifest.json", manifest)


def _estimate_json(
    path: Path, algo: str, location: np.ndarray, index: int, truth: str | None
) -> dict[str, Any]:
    record: dict[str, Any] = {
        "algorithm": algo,
        "x_m": float(location[0]),
        "y_m": float(location[1]),
        "candidate_index": int(index),
    }
    if truth is not None:
        tx, ty = (float(v) for v in truth.split(","))
        record["truth_x_m"] = tx
        record["truth_y_m"] = ty
        record["error_m"] = localization_error((record["x_m"], record["y_m"]), (tx, ty))
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


# --------------------------------------------------------------------------
# commands

def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = formats.load_config(args.config, SIMULATE_SCHEMA)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"] if args.seed is None else args.seed

    positions, times = _probes(cfg)
    order = sorted(range(len(times)), key=lambda i: times[i])
    positions = [positions[i] for i in order]
    times = [times[i] for i in order]
    env = make_synthetic_env(_env_spec(cfg, seed))
    gas, winds = [], []
    for pos, t in zip(positions, times):
        reading, wind = env.sample(pos, t)
        gas.append(reading)
        winds.append(wind)
    log = MeasurementLog(
        positions=np.array(positions),
        times_s=np.array(times),
        gas=np.array(gas),
        wind=winds,
        domain_side=cfg["domain_side"],
    )
    formats.write_flight_log(out / "probes.csv", log)
    field = env.field()
    formats.write_grid_csv(out / "field.csv", field, env.spec.params.cell_size)
    formats.write_pgm(out / "field.pgm", formats.to_gray(field))
    _finish(out, cfg, seed, ["probes.csv", "field.csv", "field.pgm", "manifest.json"])
    return 0


def cmd_localize(args: argparse.Namespace) -> int:
    cfg = formats.load_config(args.config, LOCALIZE_SCHEMA)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"] if args.seed is None else args.seed
    algo = args.algo or "ogs"

    log = formats.read_flight_log(args.flight_log, cfg["domain_side"])
    model = _model_params(cfg)
    grid = _grid(cfg)
    tau = cfg["tau"] if cfg["tau"] > 0.0 else None
    outputs = ["estimate.json", "map.csv", "map.pgm", "manifest.json"]

    if algo == "ogs":
        estimate, likelihood = localize(log, model, grid, tau=tau)
        location, index = estimate.location, estimate.index
        map_values = likelihood.probabilities.reshape(grid.ny, grid.nx)
        map_cell = grid.pitch[0]
    elif algo == "gp":
        gp = gp_fit(log)
        location, index = gp_peak(gp, grid)
        mean, _ = gp_predict(gp, grid.centers())
        map_values = mean.reshape(grid.ny, grid.nx)
        map_cell = grid.pitch[0]
    elif algo == "dmvw":
        maps = dmvw_map(log)
        location, index = maps.peak()
        map_values = maps.mean
        map_cell = maps.xs[1] - maps.xs[0] if maps.xs.size > 1 else log.domain_side
    elif algo == "bo":
        estimate, _trace = bo_localize(
            log, model, grid, cfg["bo_acquisition"], budget=cfg["bo_budget"], seed=seed
        )
        location, index = estimate.location, estimate.index
        likelihood = scores_to_likelihood(estimate.q, grid, tau)
        map_values = likelihood.probabilities.reshape(grid.ny, grid.nx)
        map_cell = grid.pitch[0]
    else:
        print(f"unknown algorithm {algo!r}; choose from ogs, gp, dmvw, bo", file=sys.stderr)
        return 1

    _estimate_json(out / "estimate.json", algo, np.asarray(location), index, args.truth)
    formats.write_grid_csv(out / "map.csv", np.asarray(map_values, dtype=np.float64), float(map_cell))
    formats.write_pgm(out / "map.pgm", formats.to_gray(np.asarray(map_values)))
    _finish(out, cfg, seed, outputs)
    return 0


def cmd_active(args: argparse.Namespace) -> int:
    cfg = formats.load_config(args.config, ACTIVE_SCHEMA)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"] if args.seed is None else args.seed

    env = make_synthetic_env(_env_spec(cfg, seed))
    model = _model_params(cfg)
    grid = _grid(cfg)
    state, records = active_sensing.run_online(
        env,
        [(cfg["init_x1"], cfg["init_y1"]), (cfg["init_x2"], cfg["init_y2"])],
        model,
        grid,
        max_iters=cfg["max_iters"],
        sample_period=cfg["sample_period"],
    )

    outputs = ["mission.jsonl", "manifest.json"]
    with open(out / "mission.jsonl", "w") as f:
        for rec in records:
            row = {
                "iteration": rec.iteration,
                "t_s": rec.t_s,
                "suggestion_x_m": float(rec.suggestion[0]),
                "suggestion_y_m": float(rec.suggestion[1]),
                "suggestion_index": rec.suggestion_index,
                "waypoint_x_m": None if rec.waypoint is None else float(rec.waypoint[0]),
                "waypoint_y_m": None if rec.waypoint is None else float(rec.waypoint[1]),
                "gas_ppm": rec.reading,
                "wind_speed_mps": None if rec.wind is None else rec.wind.speed_mps,
                "wind_dir_rad": None if rec.wind is None else rec.wind.direction_rad,
                "converged": state.converged and rec.iteration == state.iteration,
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
            snap = f"likelihood_{rec.iteration:03d}.csv"
            formats.write_grid_csv(
                out / snap,
                rec.likelihood.probabilities.reshape(grid.ny, grid.nx),
                grid.pitch[0],
            )
            outputs.append(snap)

    _finish(out, cfg, seed, outputs)
    return 0 if state.converged else 2


def _sweep_values(cfg: Mapping[str, Any], param: str) -> list[float]:
    return cfg[f"{param}_values"]


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = formats.load_config(args.config, BENCH_SCHEMA)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg["seed"] if args.seed is None else args.seed

    for p in cfg["sweep_params"]:
        if p not in SWEEP_PARAMS:
            print(f"unknown sweep parameter {p!r}; choose from {SWEEP_PARAMS}", file=sys.stderr)
            return 1

    positions, times = _probes(cfg)
    experiment = ExperimentConfig(
        name="bench",
        env=_env_spec(cfg, seed),
        grid=_grid(cfg),
        model=_model_params(cfg),
        probe_positions=positions,
        probe_times=times,
        seeds=tuple(cfg["bench_seeds"]),
    )
    dataset = [collect_log(experiment, s) for s in cfg["bench_seeds"]]

    def run_sweep(param: str):
        return sensitivity_sweep(
            experiment.model, param, _sweep_values(cfg, param), dataset, experiment.grid
        )

    params_list = list(cfg["sweep_params"])
    with ThreadPoolExecutor(max_workers=worker_count(len(params_list))) as pool:
        sections = list(pool.map(run_sweep, params_list))

    sweep_lines = ["param,value,mean_error_m,var_error_m,runs"]
    for rows in sections:
        for row in rows:
            sweep_lines.append(
                f"{row.param},{repr(row.value)},{repr(row.mean_error_m)},"
                f"{repr(row.var_error_m)},{len(row.records)}"
            )
    (out / "sweep.csv").write_text("\n".join(sweep_lines) + "\n")

    speed_rows = benchmark_speed(
        experiment,
        cfg["speed_resolutions"],
        bo_budget=cfg["bo_budget"],
        acquisition=cfg["bo_acquisition"],
        seed=seed,
    )
    speed_lines = [
        "cells_per_side,ogs_wall_s,ogs_error_m,ogs_steps,bo_wall_s,bo_error_m,bo_evaluations,speedup"
    ]
    for r in speed_rows:
        speed_lines.append(
            f"{r.cells_per_side},{repr(r.ogs_wall_s)},{repr(r.ogs_error_m)},{r.ogs_steps},"
            f"{repr(r.bo_wall_s)},{repr(r.bo_error_m)},{r.bo_evaluations},{repr(r.speedup)}"
        )
    (out / "speed.csv").write_text("\n".join(speed_lines) + "\n")

    _finish(out, cfg, seed, ["sweep.csv", "speed.csv", "manifest.json"])
    return 0


# --------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plumeseek", description="gas source localization via one-shot grid search"
    )
    parser.add_argument("--version", action="version", version=f"plumeseek {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="flat YAML config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_sim = sub.add_parser("simulate", help="run the plume simulator, write probes + field")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_loc = sub.add_parser("localize", help="estimate the source from a flight log")
    p_loc.add_argument("flight_log", help="flight log CSV")
    common(p_loc)
    p_loc.add_argument("--algo", default="ogs", help="ogs | gp | dmvw | bo")
    p_loc.add_argument("--truth", default=None, help="true source as 'x,y' for error reporting")
    p_loc.set_defaults(func=cmd_localize)

    p_act = sub.add_parser("active", help="online source seeking in a synthetic environment")
    common(p_act)
    p_act.set_defaults(func=cmd_active)

    p_ben = sub.add_parser("bench", help="sensitivity sweeps and OGS-vs-BO speed benchmark")
    common(p_ben)
    p_ben.set_defaults(func=cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PlumeseekError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
