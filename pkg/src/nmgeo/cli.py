"""Command-line interface and stable CSV/JSON serialization.

Every subcommand writes one output file plus a JSON run manifest
(<out>.manifest.json with parameters, library versions, seed and wall
time; written even when the computation fails).  Exit codes: 0 success,
1 computation error, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__
from .dynamics import (
    evolve_master_equation,
    expectations_sigma,
    f_z_from_g,
    non_markovianity,
    qfi_series,
)
from .errors import ConfigError, ConfigParseError, NmgeoError, UnknownConfigKey
from .gfunction import (
    g_markov_limit,
    g_markov_limit_deriv,
    markov_root_times,
    solve_g,
)
from .geomphase import BETA_CLAMP, geometric_phase
from .model import GridSpec, ModelParams, PureState2, TimeSeries, validate_params
from .phasediagram import (
    GREEN_BLUE_JOIN,
    PhaseCell,
    blue_boundary,
    green_boundary,
    sweep,
    tangency_boundary,
)
from .qsd import ensemble_density

SERIES_COLUMNS = [
    "t", "g", "gp", "Fz_re", "Fz_im", "beta_re", "beta_im",
    "beta_I_clamped", "pole", "sx", "sy", "sz", "Nt", "D", "qfi",
]
SWEEP_COLUMNS = ["gamma_w", "kappa", "region", "t_first_divergence", "N_total", "error"]


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _clamped_beta_column(series: TimeSeries) -> np.ndarray:
    """beta_I clipped to +-50; pole samples take the sign of the nearest finite one."""
    beta_i = np.asarray(series["beta_I"], dtype=float)
    out = np.clip(beta_i, -BETA_CLAMP, BETA_CLAMP)
    bad = np.nonzero(~np.isfinite(beta_i))[0]
    finite = np.nonzero(np.isfinite(beta_i))[0]
    for i in bad:
        if finite.size:
            j = finite[np.argmin(np.abs(finite - i))]
            out[i] = math.copysign(BETA_CLAMP, beta_i[j]) if beta_i[j] != 0 else -BETA_CLAMP
        else:
            out[i] = -BETA_CLAMP
    return out


def _series_table(series: TimeSeries) -> dict:
    """Column name -> array (or None when the channel is absent)."""
    cols: dict = {name: None for name in SERIES_COLUMNS}
    cols["t"] = series.t
    if "g" in series:
        cols["g"] = np.asarray(series["g"], dtype=float)
    if "gp" in series:
        cols["gp"] = np.asarray(series["gp"], dtype=float)
    if "F_z" in series:
        fz = series["F_z"]
        cols["Fz_re"], cols["Fz_im"] = fz.real, fz.imag
    if "beta" in series:
        b = series["beta"]
        cols["beta_re"], cols["beta_im"] = b.real, b.imag
    if "beta_I" in series:
        cols["beta_I_clamped"] = _clamped_beta_column(series)
    if "pole" in series:
        cols["pole"] = np.asarray(series["pole"], dtype=int)
    for name in ("sx", "sy", "sz", "qfi"):
        if name in series:
            cols[name] = np.asarray(series[name], dtype=float)
    if "N_t" in series:
        cols["Nt"] = np.asarray(series["N_t"], dtype=float)
    if "D" in series:
        cols["D"] = np.asarray(series["D"], dtype=float)
    return cols


def write_series_csv(series: TimeSeries, path: str) -> None:
    """Fixed-header CSV, 17 significant digits, absent channels as empty fields."""
    cols = _series_table(series)
    n = series.grid.n_steps + 1
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for k in range(n):
            row = []
            for name in SERIES_COLUMNS:
                arr = cols[name]
                if arr is None:
                    row.append("")
                elif name == "pole":
                    row.append(str(int(arr[k])))
                else:
                    row.append(_fmt(arr[k]))
            fh.write(",".join(row) + "\n")


def write_series_json(series: TimeSeries, path: str) -> None:
    cols = _series_table(series)
    payload = {
        name: (None if arr is None else np.asarray(arr, dtype=float).tolist())
        for name, arr in cols.items()
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def write_sweep_csv(cells: list[PhaseCell], path: str) -> None:
    """gamma_w,kappa,region,t_first_divergence,N_total,error rows."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for c in cells:
            row = [
                _fmt(c.gamma_w),
                _fmt(c.kappa),
                c.region,
                "" if c.t_first_divergence is None else _fmt(c.t_first_divergence),
                "" if math.isnan(c.n_total) else _fmt(c.n_total),
                "" if c.error is None else c.error.replace(",", ";").replace("\n", " "),
            ]
            fh.write(",".join(row) + "\n")


def write_sweep_json(cells: list[PhaseCell], path: str) -> None:
    payload = [
        {
            "gamma_w": c.gamma_w,
            "kappa": c.kappa,
            "region": c.region,
            "t_first_divergence": c.t_first_divergence,
            "N_total": None if math.isnan(c.n_total) else c.n_total,
            "error": c.error,
        }
        for c in cells
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_COMMON_KEYS = {"gamma_w", "kappa", "omega", "Gamma_w", "t_max", "dt", "out", "format"}
_KNOWN_KEYS = {
    "gfun": set(_COMMON_KEYS),
    "phase": _COMMON_KEYS | {"theta"},
    "dynamics": _COMMON_KEYS | {"theta"},
    "nonmarkov": set(_COMMON_KEYS),
    "qfi": _COMMON_KEYS | {"theta", "convention"},
    "sweep": _COMMON_KEYS | {"gamma_w_range", "kappa_range", "workers"},
    "boundaries": _COMMON_KEYS | {"gamma_w_range"},
    "markov-limit": set(_COMMON_KEYS),
    "qsd": _COMMON_KEYS | {"theta", "n_traj", "seed", "workers"},
}


def load_config(path: str, subcommand: str | None = None) -> dict:
    """Flat key/value JSON mirroring the CLI flags (underscored names)."""
    try:
        with open(path) as fh:
            raw = fh.read()
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(cfg, dict):
        raise ConfigParseError(f"{path}: top-level JSON value must be an object")
    known = _KNOWN_KEYS.get(subcommand) if subcommand else None
    if known is None:
        known = set().union(*_KNOWN_KEYS.values())
    for key in cfg:
        if key not in known:
            raise UnknownConfigKey(f"{path}: unknown configuration key {key!r}")
    return cfg


def _parse_range(text: str, name: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"{name} must be start:stop:step, got {text!r}")
    try:
        a, b, s = (float(x) for x in parts)
    except ValueError as exc:
        raise ConfigError(f"{name}: non-numeric bound in {text!r}") from exc
    if s <= 0.0 or b < a:
        raise ConfigError(f"{name}: need start <= stop and step > 0, got {text!r}")
    n = int(math.floor((b - a) / s + 0.5)) + 1
    return a + s * np.arange(n)


@dataclass
class RunConfig:
    """Resolved inputs of one CLI invocation."""

    subcommand: str
    out: str
    format: str = "csv"
    gamma_w: float = 0.9
    kappa: float = 0.43
    omega: float = 1.0
    Gamma_w: float = 1.0
    theta: float = math.pi / 4.0
    t_max: float = 20.0
    dt: float = 0.01
    convention: str = "qfi"
    gamma_w_range: str | None = None
    kappa_range: str | None = None
    n_traj: int = 20000
    seed: int = 1
    workers: int | None = None
    extras: dict = field(default_factory=dict)

    def params(self) -> ModelParams:
        return validate_params(
            ModelParams(
                kappa=self.kappa,
                gamma_w=self.gamma_w,
                omega=self.omega,
                omega_c=self.omega,
                Omega_w=self.omega,
                Gamma_w=self.Gamma_w,
            )
        )

    def grid(self) -> GridSpec:
        return GridSpec.uniform(self.t_max, self.dt)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmgeo",
        description="Qubit-in-lossy-cavity dynamics: g(t), phases, "
        "non-Markovianity, QFI, QSD trajectories and the phase diagram.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(sp, theta=False):
        sp.add_argument("--config", default=None, help="flat JSON config; CLI flags win")
        sp.add_argument("--gamma-w", dest="gamma_w", type=float, default=None)
        sp.add_argument("--kappa", type=float, default=None)
        sp.add_argument("--omega", type=float, default=None,
                        help="resonant frequency (sets omega = omega_c = Omega_w)")
        sp.add_argument("--Gamma-w", dest="Gamma_w", type=float, default=None)
        sp.add_argument("--t-max", dest="t_max", type=float, default=None)
        sp.add_argument("--dt", type=float, default=None)
        sp.add_argument("--out", default=None, required=False)
        sp.add_argument("--format", choices=["csv", "json"], default=None)
        if theta:
            sp.add_argument("--theta", type=float, default=None)

    common(sub.add_parser("gfun", help="g, g' time series"))
    common(sub.add_parser("phase", help="complex geometric phase series"), theta=True)
    common(sub.add_parser("dynamics", help="master-equation evolution and <sigma_i>"), theta=True)
    common(sub.add_parser("nonmarkov", help="accumulated backflow N_t"))
    qfi_p = sub.add_parser("qfi", help="quantum Fisher information series")
    common(qfi_p, theta=True)
    qfi_p.add_argument("--convention", choices=["qfi", "bloch"], default=None)
    sweep_p = sub.add_parser("sweep", help="phase-diagram classification sweep")
    common(sweep_p)
    sweep_p.add_argument("--gamma-w-range", dest="gamma_w_range", default=None,
                         help="start:stop:step")
    sweep_p.add_argument("--kappa-range", dest="kappa_range", default=None,
                         help="start:stop:step")
    sweep_p.add_argument("--workers", type=int, default=None)
    bnd_p = sub.add_parser("boundaries", help="analytic boundary curves")
    common(bnd_p)
    bnd_p.add_argument("--gamma-w-range", dest="gamma_w_range", default=None,
                       help="start:stop:step")
    common(sub.add_parser("markov-limit", help="memory-less-bath closed-form g"))
    qsd_p = sub.add_parser("qsd", help="QSD Monte-Carlo ensemble vs master equation")
    common(qsd_p, theta=True)
    qsd_p.add_argument("--n-traj", dest="n_traj", type=int, default=None)
    qsd_p.add_argument("--seed", type=int, default=None)
    qsd_p.add_argument("--workers", type=int, default=None)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(subcommand=args.subcommand, out="")
    file_values = {}
    if getattr(args, "config", None):
        file_values = load_config(args.config, args.subcommand)
    for key, value in file_values.items():
        setattr(cfg, key, value)
    for key in vars(args):
        if key in ("config", "subcommand"):
            continue
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    if not cfg.out:
        raise ConfigError("--out is required (flag or config file)")
    if cfg.dt <= 0.0 or cfg.t_max <= 0.0:
        raise ConfigError(f"need t_max > 0 and dt > 0, got t_max={cfg.t_max}, dt={cfg.dt}")
    if not (0.0 <= cfg.theta <= math.pi):
        raise ConfigError(f"--theta must lie in [0, pi], got {cfg.theta}")
    if cfg.convention not in ("qfi", "bloch"):
        raise ConfigError(f"--convention must be 'qfi' or 'bloch', got {cfg.convention!r}")
    if cfg.subcommand == "sweep":
        if not cfg.gamma_w_range or not cfg.kappa_range:
            raise ConfigError("sweep requires --gamma-w-range and --kappa-range")
        _parse_range(cfg.gamma_w_range, "--gamma-w-range")
        _parse_range(cfg.kappa_range, "--kappa-range")
    if cfg.subcommand == "boundaries":
        if not cfg.gamma_w_range:
            cfg.gamma_w_range = "0.05:3.0:0.05"
        _parse_range(cfg.gamma_w_range, "--gamma-w-range")
    if cfg.subcommand == "qsd" and cfg.n_traj < 100:
        raise ConfigError("qsd needs --n-traj >= 100")
    return cfg


# ---------------------------------------------------------------------------
# subcommand handlers: return (series-or-cells, manifest extras)
# ---------------------------------------------------------------------------

def _run_gfun(cfg: RunConfig):
    sol = solve_g(cfg.params())
    grid = cfg.grid()
    g, gp, _ = sol.eval(grid.times())
    return TimeSeries(grid, {"g": g, "gp": gp}), {"method": sol.method}


def _run_phase(cfg: RunConfig):
    p = cfg.params()
    grid = cfg.grid()
    ps = geometric_phase(p, cfg.theta, grid)
    extras = {
        "divergence_times": ps.divergence_times,
        "eta_windings": ps.eta_windings,
        "consistency_residual": ps.consistency_residual,
    }
    return ps.series, extras


def _run_dynamics(cfg: RunConfig):
    p = cfg.params()
    grid = cfg.grid()
    sol = solve_g(p)
    rho0 = PureState2.from_bloch_angle(cfg.theta).density_matrix()
    rho = evolve_master_equation(p, rho0, grid, gsol=sol)
    sig = expectations_sigma(rho)
    g, gp, _ = sol.eval(grid.times())
    fz = f_z_from_g(sol, grid).series["F_z"]
    series = TimeSeries(
        grid,
        {
            "g": g, "gp": gp, "F_z": fz,
            "sx": sig["sx"], "sy": sig["sy"], "sz": sig["sz"],
            "D": np.abs(g),
        },
    )
    return series, {"method": sol.method}


def _run_nonmarkov(cfg: RunConfig):
    p = cfg.params()
    report = non_markovianity(p, cfg.t_max, cfg.dt)
    grid = report.series.grid
    sol = solve_g(p)
    fz = f_z_from_g(sol, grid).series["F_z"]
    series = report.series.with_channels(F_z=fz, D=np.abs(report.series["g"]))
    extras = {"n_total": report.n_total, "backflow_windows": report.windows}
    return series, extras


def _run_qfi(cfg: RunConfig):
    p = cfg.params()
    grid = cfg.grid()
    sol = solve_g(p)
    qfi = qfi_series(p, cfg.theta, grid, cfg.convention, gsol=sol)
    fz = f_z_from_g(sol, grid).series["F_z"]
    series = TimeSeries(grid, {"qfi": qfi, "F_z": fz})
    return series, {"convention": cfg.convention}


def _run_sweep(cfg: RunConfig):
    gammas = _parse_range(cfg.gamma_w_range, "--gamma-w-range")
    kappas = _parse_range(cfg.kappa_range, "--kappa-range")
    cells = sweep(gammas, kappas, cfg.t_max, dt=cfg.dt, workers=cfg.workers)
    counts: dict = {}
    for c in cells:
        counts[c.region] = counts.get(c.region, 0) + 1
    extras = {
        "n_gamma": len(gammas),
        "n_kappa": len(kappas),
        "region_counts": counts,
    }
    return cells, extras


def _run_boundaries(cfg: RunConfig):
    gammas = _parse_range(cfg.gamma_w_range, "--gamma-w-range")
    rows = []
    for gw in gammas:
        row = {"gamma_w": float(gw), "green": None, "blue": None, "tangency": None}
        if 0.0 < gw <= 2.25:
            row["green"] = green_boundary(float(gw))
        if GREEN_BLUE_JOIN <= gw <= 3.0:
            row["blue"] = blue_boundary(float(gw))
        if 0.0 < gw < GREEN_BLUE_JOIN:
            try:
                row["tangency"] = tangency_boundary(float(gw))
            except NmgeoError as exc:
                row["tangency_error"] = str(exc)
        rows.append(row)
    return rows, {"join_point": {"gamma_w": GREEN_BLUE_JOIN, "kappa": 3.0 * math.sqrt(3.0) / 16.0}}


def _write_boundaries(rows, cfg: RunConfig):
    if cfg.format == "json":
        with open(cfg.out, "w") as fh:
            json.dump(rows, fh)
            fh.write("\n")
        return
    with open(cfg.out, "w", newline="") as fh:
        fh.write("gamma_w,kappa_green,kappa_blue,kappa_tangency\n")
        for row in rows:
            fields = [_fmt(row["gamma_w"])]
            for key in ("green", "blue", "tangency"):
                fields.append("" if row.get(key) is None else _fmt(row[key]))
            fh.write(",".join(fields) + "\n")


def _run_markov_limit(cfg: RunConfig):
    grid = cfg.grid()
    ts = grid.times()
    g = g_markov_limit(cfg.Gamma_w, cfg.kappa, ts)
    gp = g_markov_limit_deriv(cfg.Gamma_w, cfg.kappa, ts)
    series = TimeSeries(grid, {"g": g, "gp": gp, "D": np.abs(g)})
    extras: dict = {"root_times": []}
    if cfg.Gamma_w == 1.0 and cfg.kappa > 0.25:
        delta = cfg.kappa - 0.25
        times = []
        n = 1
        while True:
            times = markov_root_times(delta, n)
            if times[-1] > cfg.t_max or n > 10_000:
                break
            n += 1
        extras["root_times"] = [t for t in times if t <= cfg.t_max]
    return series, extras


def _run_qsd(cfg: RunConfig):
    p = cfg.params()
    grid = cfg.grid()
    result = ensemble_density(p, cfg.theta, grid, cfg.n_traj, cfg.seed, workers=cfg.workers)
    rho0 = PureState2.from_bloch_angle(cfg.theta).density_matrix()
    ref = evolve_master_equation(p, rho0, grid, gsol=solve_g(p))
    dev = max(
        float(np.max(np.abs(result.series["rho_ee"] - ref["rho_ee"]))),
        float(np.max(np.abs(result.series["rho_eg"] - ref["rho_eg"]))),
        float(np.max(np.abs(result.series["rho_gg"] - ref["rho_gg"]))),
    )
    sig = expectations_sigma(result.series)
    series = TimeSeries(grid, {"sx": sig["sx"], "sy": sig["sy"], "sz": sig["sz"]})
    extras = {
        "n_traj": result.n_traj,
        "seed": result.base_seed,
        "max_deviation_from_master_equation": dev,
        "deviation_band_5_over_sqrt_n": 5.0 / math.sqrt(cfg.n_traj),
        "mean_final_norm_sq": result.mean_final_norm_sq,
        "stderr_final_norm_sq": result.stderr_final_norm_sq,
    }
    return series, extras


_HANDLERS = {
    "gfun": _run_gfun,
    "phase": _run_phase,
    "dynamics": _run_dynamics,
    "nonmarkov": _run_nonmarkov,
    "qfi": _run_qfi,
    "sweep": _run_sweep,
    "boundaries": _run_boundaries,
    "markov-limit": _run_markov_limit,
    "qsd": _run_qsd,
}


def _manifest(cfg: RunConfig, status: str, wall: float, extras: dict, error: str | None):
    return {
        "subcommand": cfg.subcommand,
        "params": {
            "gamma_w": cfg.gamma_w,
            "kappa": cfg.kappa,
            "omega": cfg.omega,
            "Gamma_w": cfg.Gamma_w,
        },
        "theta": cfg.theta,
        "grid": {"t_max": cfg.t_max, "dt": cfg.dt},
        "seed": cfg.seed,
        "n_traj": cfg.n_traj if cfg.subcommand == "qsd" else None,
        "output": cfg.out,
        "format": cfg.format,
        "versions": {
            "nmgeo": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": wall,
        "status": status,
        "error": error,
        **extras,
    }


def run(argv=None) -> int:
    """Parse argv, execute one subcommand, write output + manifest."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"nmgeo: configuration error: {exc}", file=sys.stderr)
        return 2
    extras: dict = {}
    try:
        result, extras = _HANDLERS[cfg.subcommand](cfg)
        if cfg.subcommand == "sweep":
            if cfg.format == "json":
                write_sweep_json(result, cfg.out)
            else:
                write_sweep_csv(result, cfg.out)
        elif cfg.subcommand == "boundaries":
            _write_boundaries(result, cfg)
        else:
            if cfg.format == "json":
                write_series_json(result, cfg.out)
            else:
                write_series_csv(result, cfg.out)
    except ConfigError as exc:
        print(f"nmgeo: configuration error: {exc}", file=sys.stderr)
        return 2
    except NmgeoError as exc:
        wall = time.perf_counter() - t0
        _write_manifest_file(cfg, _manifest(cfg, "error", wall, extras, str(exc)))
        print(f"nmgeo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"nmgeo: i/o error: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0
    _write_manifest_file(cfg, _manifest(cfg, "ok", wall, extras, None))
    return 0


def _write_manifest_file(cfg: RunConfig, manifest: dict):
    try:
        with open(cfg.out + ".manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, default=_json_default)
            fh.write("\n")
    except OSError as exc:
        print(f"nmgeo: could not write manifest: {exc}", file=sys.stderr)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def main() -> None:
    sys.exit(run())
