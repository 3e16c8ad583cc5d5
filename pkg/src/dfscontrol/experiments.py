"""Batch harness for the four-level example: single runs, initial-state
sweeps, decay scans, and control-vs-decay convergence-time maps.

All angle values in JSON configs, grid specifications and emitted CSV rows
are in units of pi; conversion to radians happens on load. The basis order
of every file output is (e, 1, 2, 3). Output files are byte-deterministic
for a fixed configuration: runs are independent, grid points are written in
grid order regardless of worker scheduling, and floats are formatted with a
fixed precision.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .control import ControlConfig, LyapunovController
from .core import DensityMatrix
from .fourlevel import FourLevelParams, InitialStateAngles, build_model, dark_states, initial_state
from .lindblad import Trajectory, evolve

__all__ = [
    "RunConfig",
    "SweepResult",
    "default_config",
    "config_from_dict",
    "load_config",
    "parse_grid_spec",
    "grid_points",
    "convergence_time",
    "run_single",
    "sweep_initial_states",
    "decay_scan",
    "compare_control_vs_decay",
    "TRAJECTORY_HEADER",
    "SWEEP_HEADER",
    "COMPARE_HEADER",
    "DECAY_SCAN_GAMMAS",
    "COMPARE_DECAY_GAMMA",
]

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = "t,V,P_DFS,P_D1,P_D2,f1,f2,f3,trace_dev,herm_dev,purity,n0,capped"
SWEEP_HEADER = "beta1,beta2,beta3,P_DFS_final,P_D1_final,T_conv,dV_violations"
COMPARE_HEADER = "beta1,beta2,beta3,T_conv_control,T_conv_decay"
SURFACE_HEADER = "gamma,t,P_DFS,P_D1"
DECAY_TCONV_HEADER = "gamma,T_conv,P_DFS_final,P_D1_final"

# Decay rates scanned by the decay-scan experiment.
DECAY_SCAN_GAMMAS = tuple(round(0.05 * k, 10) for k in range(11))
# Decay rate of the no-control arm of the comparison map.
COMPARE_DECAY_GAMMA = 0.1

_CONFIG_KEYS = {
    "delta",
    "omega",
    "theta",
    "phi",
    "gammas",
    "beta",
    "dt",
    "t_max",
    "sample_every",
    "epsilon_conv",
    "control",
    "grid",
}
_CONTROL_KEYS = {"enabled", "n0_strategy", "denominator_floor", "field_cap"}
_GRID_KEYS = {"beta1", "beta2", "beta3"}


@dataclass(frozen=True)
class RunConfig:
    """Everything one closed-loop run needs (angles in radians internally)."""

    params: FourLevelParams = field(default_factory=FourLevelParams)
    angles: InitialStateAngles = field(default_factory=InitialStateAngles)
    control: ControlConfig = field(default_factory=ControlConfig)
    dt: float = 1e-3
    t_max: float = 500.0
    sample_every: int = 100
    epsilon_conv: float = 0.01

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not (self.t_max > self.dt):
            raise ValueError(f"t_max must exceed dt, got {self.t_max!r}")
        if not (0 < self.epsilon_conv < 1):
            raise ValueError(f"epsilon_conv must be in (0, 1), got {self.epsilon_conv!r}")
        if int(self.sample_every) < 1:
            raise ValueError(f"sample_every must be >= 1, got {self.sample_every!r}")


def default_config() -> dict:
    """JSON-ready defaults: the example's parameters (angles in units of pi)."""
    return {
        "delta": 3.0,
        "omega": 5.0,
        "theta": 1.0 / 3.0,
        "phi": 0.25,
        "gammas": [0.0, 0.0, 0.0],
        "beta": [0.2, 0.35, 0.2],
        "dt": 1e-3,
        "t_max": 500.0,
        "sample_every": 100,
        "epsilon_conv": 0.01,
        "control": {
            "enabled": True,
            "n0_strategy": "max-denominator",
            "denominator_floor": 1e-2,
            "field_cap": 50.0,
        },
        "grid": {
            "beta1": {"start": 0.0, "stop": 0.5, "step": 0.05},
            "beta2": {"start": 0.0, "stop": 0.5, "step": 0.05},
            "beta3": [0.25],
        },
    }


def _axis_values_pi(spec, name: str) -> np.ndarray:
    """Grid axis (units of pi) from a {start, stop, step} dict or a list."""
    if isinstance(spec, dict):
        unknown = set(spec) - {"start", "stop", "step"}
        if unknown:
            raise ValueError(f"grid axis {name!r} has unknown keys {sorted(unknown)}")
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        if step <= 0:
            raise ValueError(f"grid axis {name!r} needs step > 0")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        if count < 1:
            raise ValueError(f"grid axis {name!r} is empty")
        return start + step * np.arange(count)
    values = np.asarray(spec, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError(f"grid axis {name!r} is empty")
    return values


def _grid_from_obj(obj: dict) -> dict[str, np.ndarray]:
    unknown = set(obj) - _GRID_KEYS
    if unknown:
        raise ValueError(f"unknown grid keys {sorted(unknown)}")
    grid = {}
    for name in ("beta1", "beta2", "beta3"):
        if name in obj:
            grid[name] = _axis_values_pi(obj[name], name) * math.pi
    return grid


def config_from_dict(data: dict) -> tuple[RunConfig, dict[str, np.ndarray]]:
    """Build a RunConfig (and the grid, in radians) from a JSON-style dict.

    Unknown keys are rejected; angles (theta, phi, beta, grid values) are in
    units of pi.
    """
    merged = default_config()
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    for key, value in data.items():
        if key in ("control", "grid"):
            sub = dict(merged[key])
            allowed = _CONTROL_KEYS if key == "control" else _GRID_KEYS
            extra = set(value) - allowed
            if extra:
                raise ValueError(f"unknown {key} keys {sorted(extra)}")
            sub.update(value)
            merged[key] = sub
        else:
            merged[key] = value

    gammas = tuple(float(g) for g in merged["gammas"])
    params = FourLevelParams(
        delta=float(merged["delta"]),
        omega=float(merged["omega"]),
        theta=float(merged["theta"]) * math.pi,
        phi=float(merged["phi"]) * math.pi,
        gammas=gammas,
    )
    angles = InitialStateAngles.from_pi_units(merged["beta"])
    ctl = merged["control"]
    strategy = ctl["n0_strategy"]
    if isinstance(strategy, float):
        strategy = int(strategy)
    cap = ctl["field_cap"]
    control = ControlConfig(
        enabled=bool(ctl["enabled"]),
        n0_strategy=strategy,
        denominator_floor=float(ctl["denominator_floor"]),
        field_cap=None if cap is None else float(cap),
    )
    cfg = RunConfig(
        params=params,
        angles=angles,
        control=control,
        dt=float(merged["dt"]),
        t_max=float(merged["t_max"]),
        sample_every=int(merged["sample_every"]),
        epsilon_conv=float(merged["epsilon_conv"]),
    )
    return cfg, _grid_from_obj(merged["grid"])


def load_config(path) -> tuple[RunConfig, dict[str, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def parse_grid_spec(text: str) -> dict[str, np.ndarray]:
    """Parse a compact grid override like ``beta1=0:0.5:0.05,beta3=0.25``.

    Each entry is ``name=start:stop:step`` or ``name=value`` (units of pi).
    """
    obj: dict = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, rhs = part.partition("=")
        name = name.strip()
        if name not in _GRID_KEYS or not rhs:
            raise ValueError(f"bad grid entry {part!r} (expected beta1/beta2/beta3=...)")
        pieces = rhs.split(":")
        if len(pieces) == 1:
            obj[name] = [float(pieces[0])]
        elif len(pieces) == 3:
            obj[name] = {
                "start": float(pieces[0]),
                "stop": float(pieces[1]),
                "step": float(pieces[2]),
            }
        else:
            raise ValueError(f"bad grid entry {part!r} (use value or start:stop:step)")
    return _grid_from_obj(obj)


def grid_points(grid: dict[str, np.ndarray], base: InitialStateAngles) -> list[InitialStateAngles]:
    """Cartesian grid points (beta1-major order); missing axes stay at ``base``."""
    axes = [
        np.atleast_1d(grid.get("beta1", np.array([base.beta1]))),
        np.atleast_1d(grid.get("beta2", np.array([base.beta2]))),
        np.atleast_1d(grid.get("beta3", np.array([base.beta3]))),
    ]
    return [
        InitialStateAngles(float(b1), float(b2), float(b3))
        for b1, b2, b3 in itertools.product(*axes)
    ]


def convergence_time(traj: Trajectory, epsilon: float) -> float | None:
    """Earliest sampled time after which P_DFS stays at or above 1 - epsilon.

    Returns None when the threshold is not sustained through the end of the
    trajectory.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    if not (0 < epsilon < 1):
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon!r}")
    if "P_DFS" not in traj.observables:
        raise KeyError("trajectory lacks the P_DFS observable")
    p = traj.observables["P_DFS"]
    threshold = 1.0 - epsilon
    idx = len(p)
    while idx > 0 and p[idx - 1] >= threshold:
        idx -= 1
    if idx == len(p):
        return None
    return float(traj.t[idx])


def _fmt(x) -> str:
    return format(float(x), ".12g")


def _fmt_tconv(t: float | None) -> str:
    return "none" if t is None else _fmt(t)


def _json_ready(value):
    if isinstance(value, dict):
        return {k: _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(_json_ready(payload), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write the per-sample history (four-level layout: 2 dark states, 3 fields)."""
    if traj.fields.shape[1] != 3 or "P_D2" not in traj.observables:
        raise ValueError("trajectory CSV layout expects 3 fields and a 2-dim subspace")
    obs = traj.observables
    diag = traj.diagnostics
    lines = [TRAJECTORY_HEADER]
    for i in range(len(traj)):
        n0 = traj.n0[i]
        lines.append(
            ",".join(
                [
                    _fmt(traj.t[i]),
                    _fmt(traj.v[i]),
                    _fmt(obs["P_DFS"][i]),
                    _fmt(obs["P_D1"][i]),
                    _fmt(obs["P_D2"][i]),
                    _fmt(traj.fields[i, 0]),
                    _fmt(traj.fields[i, 1]),
                    _fmt(traj.fields[i, 2]),
                    _fmt(diag["trace_dev"][i]),
                    _fmt(diag["herm_dev"][i]),
                    _fmt(diag["purity"][i]),
                    "none" if n0 < 0 else str(int(n0) + 1),
                    str(int(traj.capped[i])),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _summarize(cfg: RunConfig, traj: Trajectory) -> dict:
    obs = traj.observables
    diag = traj.diagnostics
    t_conv = convergence_time(traj, cfg.epsilon_conv)
    return {
        "final_P_DFS": float(obs["P_DFS"][-1]),
        "final_P_D1": float(obs["P_D1"][-1]),
        "final_P_D2": float(obs["P_D2"][-1]) if "P_D2" in obs else None,
        "final_V": float(traj.v[-1]),
        "T_conv": t_conv,
        "max_dV": traj.counters["max_dv"],
        "max_sampled_dV": float(np.diff(traj.v).max()) if len(traj) > 1 else 0.0,
        "max_trace_dev": float(diag["trace_dev"].max()),
        "max_herm_dev": float(diag["herm_dev"].max()),
        "min_eig": float(diag["min_eig"].min()),
        "dV_violations": traj.counters["dv_violations"],
        "renormalizations": traj.counters["renormalizations"],
        "floored_steps": traj.counters["floored_steps"],
        "capped_steps": traj.counters["capped_steps"],
        "max_raw_trace_dev": traj.counters["max_raw_trace_dev"],
        "backend": traj.backend,
        "samples": len(traj),
        "dt": cfg.dt,
        "t_max": cfg.t_max,
        "sample_every": cfg.sample_every,
        "epsilon_conv": cfg.epsilon_conv,
        "params": {
            "delta": cfg.params.delta,
            "omega": cfg.params.omega,
            "theta_pi": cfg.params.theta / math.pi,
            "phi_pi": cfg.params.phi / math.pi,
            "gammas": list(cfg.params.gammas),
        },
        "beta_pi": list(cfg.angles.in_pi_units()),
        "control": {
            "enabled": cfg.control.enabled,
            "n0_strategy": cfg.control.n0_strategy,
            "denominator_floor": cfg.control.denominator_floor,
            "field_cap": cfg.control.field_cap,
        },
    }


def run_single(
    cfg: RunConfig, out_dir=None, *, backend: str | None = None
) -> tuple[Trajectory, dict]:
    """One closed-loop run; optionally writes trajectory.csv and summary.json."""
    model = build_model(cfg.params)
    target = dark_states(cfg.params.theta, cfg.params.phi)
    rho0 = DensityMatrix.from_pure(initial_state(cfg.angles))
    controller = LyapunovController(model, cfg.control) if cfg.control.enabled else None
    traj = evolve(
        model,
        controller,
        rho0,
        target,
        cfg.t_max,
        cfg.dt,
        cfg.sample_every,
        backend=backend,
    )
    summary = _summarize(cfg, traj)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(traj, out / "trajectory.csv")
        _write_json(out / "summary.json", summary)
    return traj, summary


# --- sweeps -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    beta_pi: tuple[float, float, float]
    p_dfs_final: float
    p_d1_final: float
    t_conv: float | None
    dv_violations: int
    error: str | None = None

    def csv_line(self) -> str:
        if self.error is not None:
            values = ["nan", "nan", "none", "0"]
        else:
            values = [
                _fmt(self.p_dfs_final),
                _fmt(self.p_d1_final),
                _fmt_tconv(self.t_conv),
                str(self.dv_violations),
            ]
        return ",".join([_fmt(b) for b in self.beta_pi] + values)


@dataclass
class SweepResult:
    rows: list[SweepRow]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r.error is not None)

    def write_csv(self, path) -> None:
        lines = [SWEEP_HEADER] + [r.csv_line() for r in self.rows]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _point_summary(cfg: RunConfig) -> dict:
    """Worker task: one grid point reduced to its summary (picklable)."""
    try:
        _traj, summary = run_single(cfg, out_dir=None)
        return summary
    except Exception as exc:  # per-point failures recorded in-row, sweep continues
        return {"error": f"{type(exc).__name__}: {exc}"}


def _map_ordered(fn, tasks, workers: int | None):
    if not tasks:
        return []
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, min(int(workers), len(tasks)))
    if workers == 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def sweep_initial_states(
    cfg: RunConfig,
    grid: dict[str, np.ndarray],
    out_dir=None,
    workers: int | None = None,
) -> SweepResult:
    """Run one point per grid entry; rows come back in grid order."""
    points = grid_points(grid, cfg.angles)
    if not points:
        raise ValueError("empty sweep grid")
    tasks = [replace(cfg, angles=pt) for pt in points]
    summaries = _map_ordered(_point_summary, tasks, workers)
    rows = []
    for pt, summary in zip(points, summaries):
        beta_pi = pt.in_pi_units()
        if "error" in summary:
            logger.warning("sweep point beta=%s failed: %s", beta_pi, summary["error"])
            rows.append(SweepRow(beta_pi, math.nan, math.nan, None, 0, summary["error"]))
        else:
            rows.append(
                SweepRow(
                    beta_pi,
                    summary["final_P_DFS"],
                    summary["final_P_D1"],
                    summary["T_conv"],
                    summary["dV_violations"],
                )
            )
    result = SweepResult(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.write_csv(out / "sweep.csv")
    return result


def decay_scan(
    cfg: RunConfig,
    gamma_values=None,
    out_dir=None,
    *,
    keep_surface: bool = True,
) -> dict:
    """Sweep a common decay rate gamma over all three channels, control per cfg.

    Emits the (gamma, t) probability surface plus a per-gamma convergence
    table; returns the per-gamma summaries.
    """
    gammas = DECAY_SCAN_GAMMAS if gamma_values is None else tuple(float(g) for g in gamma_values)
    if any(g < 0 for g in gammas):
        raise ValueError("decay rates must be nonnegative")
    surface_lines = [SURFACE_HEADER]
    tconv_lines = [DECAY_TCONV_HEADER]
    per_gamma = []
    for g in gammas:
        cfg_g = replace(cfg, params=replace(cfg.params, gammas=(g, g, g)))
        traj, summary = run_single(cfg_g, out_dir=None)
        summary["gamma"] = g
        per_gamma.append(summary)
        if keep_surface:
            p_dfs = traj.observables["P_DFS"]
            p_d1 = traj.observables["P_D1"]
            for i in range(len(traj)):
                surface_lines.append(
                    f"{_fmt(g)},{_fmt(traj.t[i])},{_fmt(p_dfs[i])},{_fmt(p_d1[i])}"
                )
        tconv_lines.append(
            ",".join(
                [
                    _fmt(g),
                    _fmt_tconv(summary["T_conv"]),
                    _fmt(summary["final_P_DFS"]),
                    _fmt(summary["final_P_D1"]),
                ]
            )
        )
    result = {"gammas": list(gammas), "runs": per_gamma}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if keep_surface:
            (out / "decay_surface.csv").write_text(
                "\n".join(surface_lines) + "\n", encoding="utf-8"
            )
        (out / "decay_tconv.csv").write_text("\n".join(tconv_lines) + "\n", encoding="utf-8")
    return result


def _compare_point(task: tuple[RunConfig, RunConfig]) -> dict:
    """Worker task: (controlled gamma=0, decay-only) runs for one grid point."""
    cfg_control, cfg_decay = task
    out: dict = {}
    for label, cfg_arm in (("control", cfg_control), ("decay", cfg_decay)):
        try:
            _traj, summary = run_single(cfg_arm, out_dir=None)
            out[f"T_conv_{label}"] = summary["T_conv"]
            out[f"P_DFS_final_{label}"] = summary["final_P_DFS"]
            out[f"min_eig_{label}"] = summary["min_eig"]
            out[f"max_trace_dev_{label}"] = summary["max_trace_dev"]
            out[f"max_herm_dev_{label}"] = summary["max_herm_dev"]
        except Exception as exc:
            out[f"T_conv_{label}"] = None
            out[f"error_{label}"] = f"{type(exc).__name__}: {exc}"
    return out


def compare_control_vs_decay(
    cfg: RunConfig,
    grid: dict[str, np.ndarray],
    out_dir=None,
    workers: int | None = None,
    decay_gamma: float = COMPARE_DECAY_GAMMA,
) -> dict:
    """Convergence-time maps: control on without decay vs decay alone.

    Per grid point runs (control enabled, gamma = 0) and (control disabled,
    gamma_j = decay_gamma), emits both maps side by side, and reports the
    fraction of points where the controlled time beats the decay-only time.
    """
    points = grid_points(grid, cfg.angles)
    if not points:
        raise ValueError("empty comparison grid")
    tasks = []
    for pt in points:
        cfg_control = replace(
            cfg,
            angles=pt,
            params=replace(cfg.params, gammas=(0.0, 0.0, 0.0)),
            control=replace(cfg.control, enabled=True),
        )
        cfg_decay = replace(
            cfg,
            angles=pt,
            params=replace(cfg.params, gammas=(decay_gamma,) * 3),
            control=replace(cfg.control, enabled=False),
        )
        tasks.append((cfg_control, cfg_decay))
    results = _map_ordered(_compare_point, tasks, workers)

    lines = [COMPARE_HEADER]
    n_control_finite = 0
    n_both = 0
    n_control_faster = 0
    for pt, res in zip(points, results):
        tc, td = res["T_conv_control"], res["T_conv_decay"]
        if tc is not None:
            n_control_finite += 1
        if tc is not None and td is not None:
            n_both += 1
            if tc < td:
                n_control_faster += 1
        beta_pi = pt.in_pi_units()
        lines.append(
            ",".join([_fmt(b) for b in beta_pi] + [_fmt_tconv(tc), _fmt_tconv(td)])
        )
    eig_mins = [
        res[key]
        for res in results
        for key in ("min_eig_control", "min_eig_decay")
        if key in res
    ]
    trace_maxes = [
        res[key]
        for res in results
        for key in ("max_trace_dev_control", "max_trace_dev_decay")
        if key in res
    ]
    herm_maxes = [
        res[key]
        for res in results
        for key in ("max_herm_dev_control", "max_herm_dev_decay")
        if key in res
    ]
    summary = {
        "n_points": len(points),
        "n_control_finite": n_control_finite,
        "n_both_finite": n_both,
        "n_control_faster": n_control_faster,
        "fraction_control_faster": (n_control_faster / n_both) if n_both else None,
        "decay_gamma": decay_gamma,
        "epsilon_conv": cfg.epsilon_conv,
        "t_max": cfg.t_max,
        "min_eig_overall": min(eig_mins) if eig_mins else None,
        "max_trace_dev_overall": max(trace_maxes) if trace_maxes else None,
        "max_herm_dev_overall": max(herm_maxes) if herm_maxes else None,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        _write_json(out / "compare_summary.json", summary)
    return {"summary": summary, "rows": results, "points": points}
