"""File formats: flight-log CSV, grid CSV, 8-bit PGM images, calibration
tables, run manifests, and flat YAML configs.

All unit conversion happens here (file columns are seconds, meters, m/s,
radians, ppm); everything past this boundary works in those same SI units,
so "conversion" means validation, not arithmetic. Floats are serialized
with repr, which round-trips exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigError, LogFormatError
from .ogs_localizer import MeasurementLog
from .wind_model import TiltCalibration, WindMeasurement

FLIGHT_LOG_COLUMNS = ("t_s", "x_m", "y_m", "gas_ppm", "wind_speed_mps", "wind_dir_rad")
REQUIRED = object()  # schema default marking a key the config must supply


# --------------------------------------------------------------------------
# flight logs

def write_flight_log(path: str | Path, log: MeasurementLog) -> None:
    lines = [",".join(FLIGHT_LOG_COLUMNS)]
    for i in range(len(log)):
        w = log.wind[i]
        lines.append(
            ",".join(
                repr(float(v))
                for v in (
                    log.times_s[i],
                    log.positions[i, 0],
                    log.positions[i, 1],
                    log.gas[i],
                    w.speed_mps,
                    w.direction_rad,
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_float(raw: str, line_no: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise LogFormatError(f"line {line_no}: column {column!r} is not a number: {raw!r}") from None
    if math.isnan(value):
        raise LogFormatError(f"line {line_no}: column {column!r} is NaN")
    return value


def read_flight_log(path: str | Path, domain_side: float) -> MeasurementLog:
    """Parse a flight-log CSV; errors name the offending line and column.

    The file does not store the domain extent, so the caller supplies it;
    positions are validated against it by MeasurementLog.
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise LogFormatError("empty file: missing header")
    header = tuple(c.strip() for c in lines[0].split(","))
    if header != FLIGHT_LOG_COLUMNS:
        missing = [c for c in FLIGHT_LOG_COLUMNS if c not in header]
        if missing:
            raise LogFormatError(f"line 1: missing column {missing[0]!r}")
        raise LogFormatError(f"line 1: columns must be {','.join(FLIGHT_LOG_COLUMNS)}")

    times, xs, ys, gas, winds = [], [], [], [], []
    prev_t = -math.inf
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(FLIGHT_LOG_COLUMNS):
            raise LogFormatError(
                f"line {line_no}: expected {len(FLIGHT_LOG_COLUMNS)} fields, got {len(fields)}"
            )
        row = {
            col: _parse_float(raw, line_no, col)
            for col, raw in zip(FLIGHT_LOG_COLUMNS, fields)
        }
        if row["gas_ppm"] < 0.0:
            raise LogFormatError(f"line {line_no}: column 'gas_ppm' is negative")
        if row["t_s"] < prev_t:
            raise LogFormatError(f"line {line_no}: column 't_s' decreases")
        prev_t = row["t_s"]
        if row["wind_speed_mps"] < 0.0:
            raise LogFormatError(f"line {line_no}: column 'wind_speed_mps' is negative")
        times.append(row["t_s"])
        xs.append(row["x_m"])
        ys.append(row["y_m"])
        gas.append(row["gas_ppm"])
        winds.append(WindMeasurement(row["t_s"], row["wind_speed_mps"], row["wind_dir_rad"]))

    if len(times) < 2:
        raise LogFormatError("need at least two measurement rows")
    return MeasurementLog(
        positions=np.column_stack([xs, ys]),
        times_s=np.array(times),
        gas=np.array(gas),
        wind=winds,
        domain_side=domain_side,
    )


# --------------------------------------------------------------------------
# grid CSV and PGM

def write_grid_csv(path: str | Path, values: np.ndarray, cell_size: float) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise LogFormatError("grid values must be 2-D")
    h, w = values.shape
    lines = ["width,height,cell_size", f"{w},{h},{repr(float(cell_size))}"]
    for j in range(h):
        lines.append(",".join(repr(float(v)) for v in values[j]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path: str | Path) -> tuple[np.ndarray, float]:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or lines[0].strip() != "width,height,cell_size":
        raise LogFormatError("line 1: grid header must be 'width,height,cell_size'")
    meta = lines[1].split(",")
    if len(meta) != 3:
        raise LogFormatError("line 2: expected width,height,cell_size values")
    try:
        w, h, cell = int(meta[0]), int(meta[1]), float(meta[2])
    except ValueError as exc:
        raise LogFormatError(f"line 2: {exc}") from None
    rows = [ln for ln in lines[2:] if ln.strip()]
    if len(rows) != h:
        raise LogFormatError(f"expected {h} data rows, got {len(rows)}")
    values = np.empty((h, w))
    for j, row in enumerate(rows):
        fields = row.split(",")
        if len(fields) != w:
            raise LogFormatError(f"line {j + 3}: expected {w} values, got {len(fields)}")
        values[j] = [_parse_float(f, j + 3, f"col{i}") for i, f in enumerate(fields)]
    return values, cell


def to_gray(values: np.ndarray) -> np.ndarray:
    """Scale a non-negative field to uint8, peak mapped to 255."""
    values = np.asarray(values, dtype=np.float64)
    peak = values.max()
    if peak <= 0.0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.clip(np.rint(values / peak * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise LogFormatError("PGM writer expects a 2-D uint8 array")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise LogFormatError("not a binary PGM (P5) file")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # comment lines (#...) allowed between them
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if len(tokens) < 3:
        raise LogFormatError("truncated PGM header")
    w, h, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
    if maxval != 255:
        raise LogFormatError(f"only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # the single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    if pixels.size != w * h:
        raise LogFormatError("truncated PGM pixel data")
    return pixels.reshape(h, w).copy()


# --------------------------------------------------------------------------
# tilt calibration tables

def write_calibration(path: str | Path, cal: TiltCalibration) -> None:
    lines = ["tilt_deg,speed_mps"]
    for t, s in zip(cal.tilt_deg, cal.speed_mps):
        lines.append(f"{repr(float(t))},{repr(float(s))}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_calibration(path: str | Path) -> TiltCalibration:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "tilt_deg,speed_mps":
        raise LogFormatError("line 1: calibration header must be 'tilt_deg,speed_mps'")
    tilts, speeds = [], []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise LogFormatError(f"line {line_no}: expected 2 fields")
        tilts.append(_parse_float(fields[0], line_no, "tilt_deg"))
        speeds.append(_parse_float(fields[1], line_no, "speed_mps"))
    return TiltCalibration(tilt_deg=np.array(tilts), speed_mps=np.array(speeds))


# --------------------------------------------------------------------------
# run manifest

@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    outputs: list[str]


def config_digest(config: Mapping[str, Any]) -> str:
    canon = json.dumps({k: config[k] for k in sorted(config)}, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(path: str | Path, manifest: RunManifest) -> None:
    Path(path).write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> RunManifest:
    raw = json.loads(Path(path).read_text())
    return RunManifest(**raw)


# --------------------------------------------------------------------------
# flat YAML configuration

def _as_float_list(v: Any) -> list[float]:
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list")
    return [float(x) for x in v]


def _as_int_list(v: Any) -> list[int]:
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list")
    return [int(x) for x in v]


def _as_str_list(v: Any) -> list[str]:
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list")
    return [str(x) for x in v]


CASTERS: dict[str, Callable[[Any], Any]] = {
    "float": float,
    "int": int,
    "str": str,
    "bool": bool,
    "float_list": _as_float_list,
    "int_list": _as_int_list,
    "str_list": _as_str_list,
}


def load_config(
    path: str | Path, schema: Mapping[str, tuple[str, Any]]
) -> dict[str, Any]:
    """Load a flat YAML mapping against a {key: (type, default)} schema.

    Unknown keys, nested mappings, type mismatches, and missing required
    keys (default is the REQUIRED sentinel) all raise ConfigError.
    """
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of key: value")
    out: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, dict):
            raise ConfigError(f"config key {key!r} must be flat, not a mapping")
        caster = CASTERS[schema[key][0]]
        try:
            out[key] = caster(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None
    for key, (_, default) in schema.items():
        if key not in out:
            if default is REQUIRED:
                raise ConfigError(f"missing required config key {key!r}")
            out[key] = default
    return out
