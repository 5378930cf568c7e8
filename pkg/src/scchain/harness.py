"""Experiment configuration, reproducible run directories and result overlays."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import __version__
from .ensembles import ConnectivityMatrix, EnsembleError, parse_spec, protection_ratio, design_rate, degree_profile
from .evolution import integrate, threshold, decodable_region_epsilon, per_layer_r1, per_layer_v, v_outer
from .peeling import run_trials
from .stream import BPConfig, simulate_biawgn, window_campaign

SCHEMA_VERSION = 1
MODES = ("simulate", "threshold", "evolve", "window")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config: " + "; ".join(problems))
        self.problems = problems


class RunExists(FileExistsError):
    pass


def load_ensemble(spec: str) -> ConnectivityMatrix:
    """Matrix file path or inline spec like ``loop:3,6,15``."""
    p = Path(spec)
    if p.is_file():
        return ConnectivityMatrix.from_text(p.read_text())
    return parse_spec(spec)


def parse_grid(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or comma list."""
    if ":" in text:
        a, b, step = (float(x) for x in text.split(":"))
        if step <= 0 or b < a:
            raise ValueError(f"bad range {text!r}")
        n = int(math.floor((b - a) / step + 1e-9)) + 1
        return [round(a + k * step, 12) for k in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


@dataclass
class ExperimentConfig:
    ensemble: str = ""
    mode: str = "simulate"
    M: int = 500
    channel: str = "bec"
    grid: list[float] = field(default_factory=list)
    trials: int = 100
    base_seed: int = 0
    decoder: str = "pd"
    W: int = 12
    avoid_4cycles: bool = True
    tol: float = 1e-4
    step: float | None = None
    stride: float = 0.1
    threads: int = 1
    out: str = ""

    def validate(self) -> ConnectivityMatrix:
        problems = []
        T = None
        if not self.ensemble:
            problems.append("ensemble: missing")
        else:
            try:
                T = load_ensemble(self.ensemble)
            except (EnsembleError, ValueError, OSError) as exc:
                problems.append(f"ensemble: {exc}")
        if self.mode not in MODES:
            problems.append(f"mode: must be one of {MODES}")
        if self.channel not in ("bec", "biawgn"):
            problems.append("channel: must be bec or biawgn")
        if self.decoder not in ("pd", "bp", "window"):
            problems.append("decoder: must be pd, bp or window")
        if self.mode in ("simulate", "evolve", "window") and not self.grid:
            problems.append("grid: must be nonempty")
        if self.trials < 1:
            problems.append("trials: must be >= 1")
        if self.M < 1:
            problems.append("M: must be >= 1")
        if self.mode == "window" or self.decoder == "window":
            if self.W < 4:
                problems.append("W: must be >= l + 1")
        if self.tol <= 0:
            problems.append("tol: must be positive")
        if self.step is not None and self.step <= 0:
            problems.append("step: must be positive")
        if self.threads < 1:
            problems.append("threads: must be >= 1")
        if not self.out:
            problems.append("out: missing output directory")
        if problems:
            raise ConfigError(problems)
        return T

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    kind = _FIELD_TYPES[key]
    if key == "grid":
        return parse_grid(value)
    if kind == "int":
        return int(value)
    if kind == "bool":
        return value.strip().lower() in ("1", "true", "yes", "on")
    if kind in ("float", "float | None"):
        return None if value.strip().lower() == "none" else float(value)
    return value


def read_config_file(path: str | os.PathLike) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _FIELD_TYPES:
            raise ConfigError([f"{path}:{n}: unknown or malformed entry {line!r}"])
        out[key] = _coerce(key, value.strip())
    return out


def build_config(file_values: dict | None = None, cli_values: dict | None = None) -> ExperimentConfig:
    """Merge defaults < config file < command line."""
    merged = {}
    for src in (file_values or {}, cli_values or {}):
        merged.update({k: _coerce(k, v) for k, v in src.items() if v is not None})
    return ExperimentConfig(**merged)


def matrix_hash(T: ConnectivityMatrix) -> str:
    return hashlib.sha256(T.to_text().encode()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    config: dict
    matrix_sha256: str
    version: str
    base_seed: int
    started: str
    finished: str | None = None
    status: str = "running"
    schema_version: int = SCHEMA_VERSION

    def write(self, directory: Path):
        (directory / "manifest.json").write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")

    @classmethod
    def read(cls, directory: Path) -> "RunManifest":
        data = json.loads((Path(directory) / "manifest.json").read_text())
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema {data.get('schema_version')}")
        return cls(**data)

    def verify(self, directory: Path) -> bool:
        text = (Path(directory) / "matrix.txt").read_text()
        return hashlib.sha256(text.encode()).hexdigest() == self.matrix_sha256


def trajectory_csv(T: ConnectivityMatrix, epsilon: float, stride: float = 0.1, step: float | None = None) -> str:
    traj = integrate(T, epsilon, step, sample_dt=stride)
    layers = T.layer_map()
    n = int(layers.max())
    outer = T.outer_positions() if T.family == "loop" else None
    head = ["tau", "r1_total"] + [f"r1_layer_{j}" for j in range(1, n + 1)]
    head += ["v_total"] + [f"v_layer_{j}" for j in range(1, n + 1)] + ["v_outer"]
    lines = [",".join(head)]
    for s in traj.samples:
        row = [s.tau, s.r[0].sum(), *per_layer_r1(s, layers), s.v.sum(), *per_layer_v(s, layers)]
        row.append(v_outer(s, outer) if outer is not None else math.nan)
        lines.append(",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def ensemble_summary(T: ConnectivityMatrix) -> dict:
    prof = degree_profile(T)
    out = {
        "family": T.family,
        "params": T.params,
        "dim": T.dim,
        "l": T.l,
        "r": T.r,
        "design_rate": str(design_rate(T)),
        "design_rate_float": float(design_rate(T)),
        "d_v": prof.d_v.tolist(),
        "d_c": prof.d_c.tolist(),
        "check_degree": prof.check_degree.tolist(),
    }
    if T.family == "multilayer":
        eta = protection_ratio(T.params["N"], T.params["t"])
        out["protection_ratio"] = str(eta)
    return out


def _prepare_dir(out: Path, overwrite: bool):
    if out.exists() and (out / "manifest.json").exists() and not overwrite:
        raise RunExists(f"{out} already holds a run; pass overwrite to replace it")
    out.mkdir(parents=True, exist_ok=True)


def run_experiment(config: ExperimentConfig, overwrite: bool = False) -> Path:
    """Validate, run and persist one experiment; returns the artifact directory."""
    T = config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise RunExists(f"{out} is locked by another run") from None
    try:
        _prepare_dir(out, overwrite)
        (out / "matrix.txt").write_text(T.to_text())
        manifest = RunManifest(config.to_dict(), matrix_hash(T), __version__, config.base_seed, _now())
        manifest.write(out)
        status = "complete"
        if config.mode == "threshold":
            res = threshold(T, config.tol, config.step)
            payload = {"epsilon_star": res.epsilon_star, "tol": config.tol, "probes": res.trajectories_evaluated}
            (out / "threshold.json").write_text(json.dumps(payload, indent=2) + "\n")
        elif config.mode == "evolve":
            for eps in config.grid:
                (out / f"trajectory_eps{eps:g}.csv").write_text(trajectory_csv(T, eps, config.stride, config.step))
        elif config.mode == "window":
            cmp = window_campaign(T, config.M, config.grid, config.trials, config.base_seed, config.W,
                                  avoid_4cycles=config.avoid_4cycles)
            (out / "window_compare.csv").write_text(cmp.to_csv())
        else:
            if config.channel == "biawgn":
                table = simulate_biawgn(T, config.M, config.grid, config.trials, config.base_seed,
                                        avoid_4cycles=config.avoid_4cycles, workers=config.threads)
            else:
                if config.decoder == "window":
                    raise ConfigError(["decoder: use mode=window for window campaigns"])
                table = run_trials(T, config.M, config.grid, config.trials, config.base_seed,
                                   avoid_4cycles=config.avoid_4cycles, decoder=config.decoder,
                                   workers=config.threads)
            (out / "bler.csv").write_text(table.to_csv())
            if table.incomplete:
                status = "incomplete"
        manifest.status = status
        manifest.finished = _now()
        manifest.write(out)
    except BaseException:
        if (out / "manifest.json").exists():
            m = json.loads((out / "manifest.json").read_text())
            m["status"] = "incomplete"
            m["finished"] = _now()
            (out / "manifest.json").write_text(json.dumps(m, indent=2) + "\n")
        raise
    finally:
        lock.release()
    return out


PREDICTION_COLUMNS = ("p_short", "p_long", "bler")


def _read_csv(path_or_text) -> list[dict]:
    p = Path(path_or_text) if not str(path_or_text).count("\n") else None
    text = p.read_text() if p is not None else str(path_or_text)
    return list(csv.DictReader(io.StringIO(text)))


def overlay(bler_csv, prediction_csv, column: str | None = None) -> str:
    """Inner join of an empirical table and a prediction table on the grid value.

    Adds ``ratio = prediction / empirical``.
    """
    emp = _read_csv(bler_csv)
    pred = _read_csv(prediction_csv)
    if not emp or not pred:
        raise ValueError("overlay inputs must have data rows")
    key = "eps" if "eps" in emp[0] else "ebn0"
    if key not in pred[0]:
        raise ValueError(f"prediction table lacks grid column {key!r}")
    col = column or next((c for c in PREDICTION_COLUMNS if c in pred[0]), None)
    if col is None or col not in pred[0]:
        raise ValueError("prediction table has no prediction column")
    index = {round(float(r[key]), 10): r for r in pred}
    lines = [f"{key},bler,ci_low,ci_high,prediction,ratio"]
    joined = 0
    for r in emp:
        g = round(float(r[key]), 10)
        if g not in index:
            continue
        b = float(r["bler"])
        p = float(index[g][col])
        ratio = p / b if b > 0 else (1.0 if p == 0 else math.inf)
        lines.append(",".join(repr(float(x)) for x in (float(r[key]), b, float(r["ci_low"]), float(r["ci_high"]), p, ratio)))
        joined += 1
    if not joined:
        raise ValueError("empty join: the two tables share no grid values")
    return "\n".join(lines) + "\n"
