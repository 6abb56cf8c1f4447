"""Total, dynamical and complex geometric phases of the averaged evolution.

For initial Bloch angle theta the complex geometric phase is

    beta = [cos(theta) (omega t + i log g) - i log eta] / 2,
    eta  = [g (1 + cos th) + (1 - cos th) e^{i omega t}]
         / [g (1 - cos th) + (1 + cos th) e^{i omega t}],

equal to (total phase) - (dynamical phase) with

    phi_T = -i/2 (log g + log eta),
    phi_d = -omega t cos(th)/2 - i/2 (cos th + 1) log g.

Branch policy: principal logs unwrapped for continuity sample-to-sample,
with the unwrap state reset across each sign change of g (a genuine
divergence of Im beta).  Im beta itself is branch-independent:
Im beta = [cos(th) log|g| - log|eta|] / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRangeAngle
from .gfunction import GSolution, find_g_roots, solve_g
from .model import GridSpec, ModelParams, TimeSeries, validate_params

POLE_G_TOL = 1e-12
BETA_CLAMP = 50.0


@dataclass(frozen=True)
class PhaseSeries:
    """Phase channels on a grid.

    series channels: phi_T, phi_d, beta (complex), beta_I (real) and the
    boolean pole mask (samples landing on a zero of g; NaN in the phase
    channels there).  divergence_times lists the zeros of g up to the end
    of the grid; eta_windings holds the final 2-pi branch index of log eta
    for each inter-root segment; consistency_residual is the largest
    |beta - (phi_T - phi_d)| away from poles.
    """

    series: TimeSeries
    divergence_times: list
    eta_windings: list
    consistency_residual: float

    @property
    def beta_I(self) -> np.ndarray:
        return self.series["beta_I"]


def _check_theta(theta: float):
    if not (0.0 <= theta <= math.pi):
        raise OutOfRangeAngle(f"theta must lie in [0, pi], got {theta}")


def _eta_of(g: np.ndarray, cth: float, phase: np.ndarray) -> np.ndarray:
    return (g * (1.0 + cth) + (1.0 - cth) * phase) / (
        g * (1.0 - cth) + (1.0 + cth) * phase
    )


def _segments(ts: np.ndarray, roots: list) -> list:
    """Index ranges of ts split at the g-roots (unwrap reset points)."""
    edges = [0]
    for r in roots:
        edges.append(int(np.searchsorted(ts, r)))
    edges.append(ts.size)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _resolved_logs(g: np.ndarray, eta: np.ndarray, segments: list):
    """Branch-resolved log g and log eta plus per-segment winding numbers.

    log g is the principal complex log (real for g > 0, +i pi for g < 0).
    The phase of eta starts from the principal value at each segment head
    and is unwrapped for continuity inside the segment.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        log_g = np.log(g.astype(complex))
        mag_eta = np.log(np.abs(eta))
    ang = np.angle(eta)
    unwrapped = np.array(ang, copy=True)
    windings = []
    for a, b in segments:
        unwrapped[a:b] = np.unwrap(ang[a:b])
        windings.append(int(round((unwrapped[b - 1] - ang[b - 1]) / (2.0 * math.pi))))
    return log_g, mag_eta + 1j * unwrapped, windings


def total_phase(
    p: ModelParams, theta: float, g: np.ndarray, grid: GridSpec, roots: list | None = None
) -> np.ndarray:
    """phi_T = -i/2 (log g + log eta) with the shared branch policy."""
    _check_theta(theta)
    ts = grid.times()
    cth = math.cos(theta)
    if abs(cth) == 1.0:
        # pole states: eta reduces to g e^{-+ i omega t}; all logs cancel in beta
        log_g, log_eta, _ = _pole_state_logs(p, g, ts, cth)
        return -0.5j * (log_g + log_eta)
    eta = _eta_of(g, cth, np.exp(1j * p.omega * ts))
    segs = _segments(ts, roots if roots is not None else [])
    log_g, log_eta, _ = _resolved_logs(g, eta, segs)
    out = -0.5j * (log_g + log_eta)
    out[np.abs(g) < POLE_G_TOL] = np.nan
    return out


def _pole_state_logs(p, g, ts, cth):
    with np.errstate(divide="ignore"):
        log_g = np.log(g.astype(complex))
    # theta = 0: eta = g e^{-i w t}; theta = pi: eta = e^{i w t} / g
    log_eta = log_g - 1j * p.omega * ts if cth > 0 else 1j * p.omega * ts - log_g
    return log_g, log_eta, []


def dynamical_phase(
    p: ModelParams, theta: float, g: np.ndarray, grid: GridSpec, roots: list | None = None
) -> np.ndarray:
    """phi_d = -omega t cos(th)/2 - i/2 (cos th + 1) log g."""
    _check_theta(theta)
    ts = grid.times()
    cth = math.cos(theta)
    if cth == -1.0:  # log g coefficient vanishes exactly: omega t / 2, no poles
        return (-0.5 * p.omega * ts * cth).astype(complex)
    with np.errstate(divide="ignore"):
        log_g = np.log(g.astype(complex))
    out = -0.5 * p.omega * ts * cth - 0.5j * (cth + 1.0) * log_g
    out[np.abs(g) < POLE_G_TOL] = np.nan
    return out


def geometric_phase(
    p: ModelParams,
    theta: float,
    grid: GridSpec,
    *,
    gsol: GSolution | None = None,
) -> PhaseSeries:
    """Full phase bundle on the grid, with divergence times from the g-roots."""
    validate_params(p)
    _check_theta(theta)
    sol = gsol if gsol is not None else solve_g(p)
    ts = grid.times()
    g = sol.g(ts)
    cth = math.cos(theta)
    roots = find_g_roots(sol, grid.t_end)

    if abs(cth) == 1.0:
        zero = np.zeros(ts.size, dtype=complex)
        series = TimeSeries(
            grid,
            {
                "phi_T": zero,
                "phi_d": zero.copy(),
                "beta": zero.copy(),
                "beta_I": np.zeros(ts.size),
                "pole": np.zeros(ts.size, dtype=bool),
                "g": g,
            },
        )
        return PhaseSeries(series, [], [], 0.0)

    pole = np.abs(g) < POLE_G_TOL
    eta = _eta_of(g, cth, np.exp(1j * p.omega * ts))
    segs = _segments(ts, roots)
    log_g, log_eta, windings = _resolved_logs(g, eta, segs)

    phi_t = -0.5j * (log_g + log_eta)
    phi_d = -0.5 * p.omega * ts * cth - 0.5j * (cth + 1.0) * log_g
    beta = 0.5 * (cth * (p.omega * ts + 1j * log_g) - 1j * log_eta)
    finite = ~pole
    residual = float(np.max(np.abs(beta[finite] - (phi_t[finite] - phi_d[finite]))))

    beta_i = np.where(pole, np.nan, beta.imag)
    for arr in (phi_t, phi_d, beta):
        arr[pole] = np.nan
    series = TimeSeries(
        grid,
        {
            "phi_T": phi_t,
            "phi_d": phi_d,
            "beta": beta,
            "beta_I": beta_i,
            "pole": pole,
            "g": g,
        },
    )
    return PhaseSeries(series, roots, windings, residual)


def beta_imag_at(p: ModelParams, theta: float, sol: GSolution, t) -> np.ndarray:
    """Pointwise Im beta = [cos(th) log|g| - log|eta|] / 2 (branch-free)."""
    _check_theta(theta)
    cth = math.cos(theta)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if abs(cth) == 1.0:
        return np.zeros(t.size)
    g = sol.g(t)
    eta = _eta_of(g, cth, np.exp(1j * p.omega * t))
    with np.errstate(divide="ignore"):
        return 0.5 * (cth * np.log(np.abs(g)) - np.log(np.abs(eta)))


def divergence_report(p: ModelParams, theta: float, t_max: float) -> list:
    """(t_div, growth_ok) for every zero of g in (0, t_max].

    growth_ok checks that |Im beta| strictly grows on both sides as the
    sampling offset shrinks through 1e-3, 1e-5, 1e-7 (logarithmic
    divergence).  Pole states theta in {0, pi} report an empty list.
    """
    validate_params(p)
    _check_theta(theta)
    if abs(math.cos(theta)) == 1.0:
        return []
    sol = solve_g(p)
    out = []
    for t_div in find_g_roots(sol, t_max):
        ok = True
        for side in (-1.0, 1.0):
            mags = [
                abs(float(beta_imag_at(p, theta, sol, t_div + side * eps)[0]))
                for eps in (1e-3, 1e-5, 1e-7)
            ]
            ok = ok and mags[0] < mags[1] < mags[2]
        out.append((t_div, ok))
    return out
