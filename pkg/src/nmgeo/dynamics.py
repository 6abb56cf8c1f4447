"""Time-local coefficients, master-equation evolution and information measures.

The decay coefficient F_z(t) = -g'(t) / (kappa g(t)) drives the Lindblad-form
master equation

    drho/dt = -i [omega sigma_z/2 + kappa Im(F_z) sigma^+ sigma^-, rho]
              + 2 kappa Re(F_z) D[sigma^-] rho.

Around zeros of g, F_z has poles while the state itself stays smooth, so
evolution and the non-Markovianity measure are computed from g directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationFailure, ValidationError
from .gfunction import GSolution, find_g_roots, solve_g
from .model import DensityMatrix2, GridSpec, ModelParams, TimeSeries, validate_params

FROM_G = "from-g"
FROM_ODE_ORACLE = "ode-oracle"

QFI_CONVENTION = "qfi"      # |psi(0)> = cos(theta)|g> + sin(theta)|e>
BLOCH_CONVENTION = "bloch"  # |psi(0)> = cos(theta/2)|e> + sin(theta/2)|g>

POLE_G_TOL = 1e-12
_FZ_BLOWUP = 1e8


@dataclass(frozen=True)
class OCoefficients:
    """F_z / F_w coefficient series.

    series carries complex channels "F_z" (and "F_w" when available) plus a
    boolean "pole" mask; samples under the mask hold NaN.  pole_time is the
    blow-up time when the ODE route hit |F_z| = 1e8 (a zero of g), else None.
    """

    series: TimeSeries
    source: str
    pole_time: float | None = None


def f_z_from_g(sol: GSolution, grid: GridSpec) -> OCoefficients:
    """F_z = -g'/(kappa g) on the grid; |g| < 1e-12 samples become pole markers."""
    kappa = sol.params.kappa
    if not (kappa > 0.0):
        raise ValidationError("F_z from g requires kappa > 0")
    g, gp, _ = sol.eval(grid.times())
    pole = np.abs(g) < POLE_G_TOL
    den = np.where(pole, 1.0, kappa * g)
    fz = (-gp / den).astype(complex)
    fz[pole] = complex(math.nan, math.nan)
    return OCoefficients(
        series=TimeSeries(grid, {"F_z": fz, "pole": pole}), source=FROM_G
    )


def f_w_closed_form(sol: GSolution, t) -> np.ndarray:
    """F_w = -i (g'' + kappa^2 g) / (kappa g), the w-noise coefficient."""
    kappa = sol.params.kappa
    g, _, gpp = sol.eval(t)
    return -1j * (gpp + kappa**2 * g) / (kappa * g)


def _derivative_4th(y: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order finite-difference derivative on a uniform grid."""
    d = np.empty_like(y)
    d[2:-2] = (-y[4:] + 8.0 * y[3:-1] - 8.0 * y[1:-3] + y[:-4]) / (12.0 * dt)
    # one-sided five-point stencils at the edges
    c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12.0 * dt)
    d[0] = c @ y[:5]
    d[1] = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12.0 * dt) @ y[:5]
    d[-2] = -np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12.0 * dt) @ y[-5:][::-1]
    d[-1] = -c @ y[-5:][::-1]
    return d


def f_w_from_f_z(f_z: np.ndarray, kappa: float, dt: float) -> np.ndarray:
    """F_w = i [F_z' - kappa - kappa F_z^2] with F_z' by 4th-order differences.

    Samples within two points of a pole marker (NaN) stay NaN.
    """
    fz = np.asarray(f_z, dtype=complex)
    if fz.size < 5:
        raise ValidationError("need at least 5 samples for the 4th-order stencil")
    dfz = _derivative_4th(fz, dt)
    return 1j * (dfz - kappa - kappa * fz**2)


def f_ode_oracle(p: ModelParams, grid: GridSpec) -> OCoefficients:
    """F_z, F_w by direct integration of their coupled equations.

        F_z' = kappa - i F_w + i (omega - omega_c) F_z + kappa F_z^2
        F_w' = -i (gamma_w Gamma_w / 2) F_z
               + [i omega - (gamma_w + i Omega_w)] F_w + kappa F_z F_w

    Handles detuning; resonance is the special case.  Integration stops when
    |F_z| reaches 1e8 (a zero of g); remaining samples are pole-marked and
    pole_time records the blow-up time.
    """
    validate_params(p)
    kappa, det = p.kappa, p.omega - p.omega_c
    aw0 = 0.5 * p.gamma_w * p.Gamma_w
    cw = 1j * p.omega - (p.gamma_w + 1j * p.Omega_w)

    def rhs(t, y):
        fz = y[0] + 1j * y[1]
        fw = y[2] + 1j * y[3]
        dz = kappa - 1j * fw + 1j * det * fz + kappa * fz**2
        dw = -1j * aw0 * fz + cw * fw + kappa * fz * fw
        return [dz.real, dz.imag, dw.real, dw.imag]

    def blowup(t, y):
        return math.hypot(y[0], y[1]) - _FZ_BLOWUP

    blowup.terminal = True
    ts = grid.times()
    sol = solve_ivp(
        rhs,
        (ts[0], ts[-1]),
        [0.0, 0.0, 0.0, 0.0],
        method="DOP853",
        rtol=1e-11,
        atol=1e-13,
        t_eval=ts,
        events=blowup,
    )
    if not sol.success and sol.status != 1:
        raise IntegrationFailure(f"F_z/F_w integration failed: {sol.message}")
    n = grid.n_steps + 1
    fz = np.full(n, np.nan, dtype=complex)
    fw = np.full(n, np.nan, dtype=complex)
    m = sol.y.shape[1]
    fz[:m] = sol.y[0] + 1j * sol.y[1]
    fw[:m] = sol.y[2] + 1j * sol.y[3]
    pole = np.isnan(fz.real)
    pole_time = float(sol.t_events[0][0]) if sol.status == 1 else None
    return OCoefficients(
        series=TimeSeries(grid, {"F_z": fz, "F_w": fw, "pole": pole}),
        source=FROM_ODE_ORACLE,
        pole_time=pole_time,
    )


def evolve_master_equation(
    p: ModelParams,
    rho0: DensityMatrix2,
    grid: GridSpec,
    *,
    gsol: GSolution | None = None,
    f_z=None,
) -> TimeSeries:
    """Master-equation evolution of rho0 on the grid.

    With gsol (resonant case) the evolution uses g directly,

        rho_ee(t) = rho_ee(0) g^2,   rho_eg(t) = rho_eg(0) e^{-i omega t} g,

    which passes smoothly through the poles of F_z.  With f_z (a series
    carrying an "F_z" channel, or a callable t -> complex; possibly
    complex/detuned) the Lindblad equation is integrated numerically; the
    window must not contain poles.  Exactly one of gsol / f_z must be given.
    """
    if (gsol is None) == (f_z is None):
        raise ValidationError("provide exactly one of gsol or f_z")
    ts = grid.times()
    if gsol is not None:
        if not p.resonant():
            raise ValidationError("the g-based propagator assumes resonance")
        g = gsol.g(ts)
        ree = rho0.rho_ee.real * g**2
        reg = rho0.rho_eg * np.exp(-1j * p.omega * ts) * g
        rgg = rho0.rho_gg.real + rho0.rho_ee.real * (1.0 - g**2)
        return TimeSeries(
            grid,
            {"rho_ee": ree, "rho_eg": reg, "rho_ge": np.conj(reg), "rho_gg": rgg},
        )

    if callable(f_z):
        fz_at = f_z
    else:
        fzv = f_z["F_z"]
        if np.any(np.isnan(fzv.real)):
            raise IntegrationFailure("F_z series contains pole markers inside the window")
        ft = f_z.grid.times()

        def fz_at(t):
            return complex(np.interp(t, ft, fzv.real), np.interp(t, ft, fzv.imag))

    def rhs(t, y):
        ree, rer, rei, rgg = y
        fz = fz_at(t)
        reg = rer + 1j * rei
        d_ee = -2.0 * p.kappa * fz.real * ree
        d_eg = -(1j * (p.omega + p.kappa * fz.imag) + p.kappa * fz.real) * reg
        d_gg = 2.0 * p.kappa * fz.real * ree
        return [d_ee, d_eg.real, d_eg.imag, d_gg]

    y0 = [rho0.rho_ee.real, rho0.rho_eg.real, rho0.rho_eg.imag, rho0.rho_gg.real]
    sol = solve_ivp(
        rhs, (ts[0], ts[-1]), y0, method="DOP853", rtol=1e-12, atol=1e-14, t_eval=ts
    )
    if not sol.success:
        raise IntegrationFailure(f"master-equation integration failed: {sol.message}")
    reg = sol.y[1] + 1j * sol.y[2]
    return TimeSeries(
        grid,
        {"rho_ee": sol.y[0], "rho_eg": reg, "rho_ge": np.conj(reg), "rho_gg": sol.y[3]},
    )


def density_matrix_at(series: TimeSeries, k: int) -> DensityMatrix2:
    return DensityMatrix2(
        series["rho_ee"][k], series["rho_eg"][k], series["rho_ge"][k], series["rho_gg"][k]
    )


def density_series_diagnostics(series: TimeSeries) -> tuple[float, float]:
    """(max |trace - 1|, min eigenvalue) across the series."""
    ree = series["rho_ee"].real
    rgg = series["rho_gg"].real
    reg = series["rho_eg"]
    tr_err = float(np.max(np.abs(ree + rgg - 1.0)))
    mean = 0.5 * (ree + rgg)
    rad = np.sqrt(0.25 * (ree - rgg) ** 2 + np.abs(reg) ** 2)
    return tr_err, float(np.min(mean - rad))


def expectations_sigma(series: TimeSeries) -> TimeSeries:
    """Pauli expectation channels sx, sy, sz of a density-matrix series."""
    reg = series["rho_eg"]
    sx = 2.0 * reg.real
    sy = -2.0 * reg.imag
    sz = series["rho_ee"].real - series["rho_gg"].real
    return TimeSeries(series.grid, {"sx": sx, "sy": sy, "sz": sz})


def trace_distance(rho1: DensityMatrix2, rho2: DensityMatrix2) -> float:
    """Half the sum of absolute eigenvalues of rho1 - rho2."""
    a = (rho1.rho_ee - rho2.rho_ee).real
    d = (rho1.rho_gg - rho2.rho_gg).real
    b = rho1.rho_eg - rho2.rho_eg
    mean, rad = 0.5 * (a + d), math.sqrt(0.25 * (a - d) ** 2 + abs(b) ** 2)
    return 0.5 * (abs(mean + rad) + abs(mean - rad))


@dataclass(frozen=True)
class NonMarkovReport:
    """Accumulated trace-distance backflow N_t and the windows producing it.

    series channels: g, abs_g and the non-decreasing N_t.  windows are the
    maximal open intervals where d|g|/dt > 0 (equivalently Re F_z < 0 away
    from zeros of g); n_total is N_t at the end of the grid.
    """

    series: TimeSeries
    windows: list
    n_total: float


def non_markovianity(p: ModelParams, t_max: float, dt: float = 0.01) -> NonMarkovReport:
    """BLP measure for the optimal pair, where the trace distance is |g(t)|.

    N_t accumulates the positive increments of |g| on the grid, so zeros of
    g are integrable kinks rather than failures.
    """
    validate_params(p)
    sol = solve_g(p)
    grid = GridSpec.uniform(t_max, dt)
    ts = grid.times()
    g, gp, _ = sol.eval(ts)
    absg = np.abs(g)
    inc = np.maximum(np.diff(absg), 0.0)
    n_t = np.concatenate([[0.0], np.cumsum(inc)])
    windows = _backflow_windows(sol, t_max)
    series = TimeSeries(grid, {"g": g, "abs_g": absg, "N_t": n_t})
    return NonMarkovReport(series=series, windows=windows, n_total=float(n_t[-1]))


def _backflow_windows(sol: GSolution, t_max: float) -> list:
    """Maximal intervals of (0, t_max) where g * g' > 0, edges refined."""
    bounds = [0.0]
    bounds += find_g_roots(sol, t_max)
    step = sol.scan_step()
    ts = np.linspace(0.0, t_max, int(math.ceil(t_max / step)) + 1)
    gp = sol.eval(ts)[1]
    sign = np.sign(gp)
    from .gfunction import _bisect_root

    f = lambda t: float(sol.eval(t)[1][0])
    for i in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        bounds.append(_bisect_root(f, ts[i], ts[i + 1]))
    bounds.append(t_max)
    bounds = sorted(bounds)
    windows = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi - lo < 1e-12:
            continue
        mid = 0.5 * (lo + hi)
        g, gp, _ = sol.eval(mid)
        if g[0] * gp[0] > 0.0:
            if windows and abs(windows[-1][1] - lo) < 1e-9:
                windows[-1] = (windows[-1][0], hi)
            else:
                windows.append((lo, hi))
    return windows


def _initial_family(theta: float, convention: str):
    """(rho_ee(0), rho_eg(0), d rho_ee(0)/d theta, d rho_eg(0)/d theta)."""
    if convention == QFI_CONVENTION:
        return (
            math.sin(theta) ** 2,
            math.sin(theta) * math.cos(theta),
            math.sin(2.0 * theta),
            math.cos(2.0 * theta),
        )
    if convention == BLOCH_CONVENTION:
        return (
            math.cos(theta / 2.0) ** 2,
            0.5 * math.sin(theta),
            -0.5 * math.sin(theta),
            0.5 * math.cos(theta),
        )
    raise ValidationError(f"unknown initial-state convention {convention!r}")


def _qfi_from_matrices(rho: np.ndarray, drho: np.ndarray) -> np.ndarray:
    """Quantum Fisher information of stacked (n,2,2) rho with derivative drho.

    F = sum over eigenpairs with p_i + p_j > 1e-12 of 2 |<i|drho|j>|^2 / (p_i + p_j).
    """
    p, u = np.linalg.eigh(rho)
    m = np.einsum("nij,njk,nkl->nil", np.conj(np.swapaxes(u, 1, 2)), drho, u)
    psum = p[:, :, None] + p[:, None, :]
    w = np.where(psum > 1e-12, 2.0 / np.where(psum > 1e-12, psum, 1.0), 0.0)
    return np.einsum("nij,nij->n", w, np.abs(m) ** 2).real


def qfi_series(
    p: ModelParams,
    theta: float,
    grid: GridSpec,
    convention: str = QFI_CONVENTION,
    *,
    gsol: GSolution | None = None,
    derivative: str = "analytic",
    fd_step: float = 1e-5,
) -> np.ndarray:
    """QFI of the evolved family rho(t; theta) at each grid time.

    The theta-derivative is taken analytically from the closed-form state by
    default; derivative="fd" uses central differences with step fd_step.
    """
    validate_params(p)
    sol = gsol if gsol is not None else solve_g(p)
    ts = grid.times()
    g = sol.g(ts)
    phase = np.exp(-1j * p.omega * ts)

    def family(th):
        ree0, reg0, _, _ = _initial_family(th, convention)
        rho = np.empty((ts.size, 2, 2), dtype=complex)
        rho[:, 0, 0] = ree0 * g**2
        rho[:, 0, 1] = reg0 * phase * g
        rho[:, 1, 0] = np.conj(rho[:, 0, 1])
        rho[:, 1, 1] = 1.0 - rho[:, 0, 0]
        return rho

    rho = family(theta)
    if derivative == "analytic":
        _, _, dee0, deg0 = _initial_family(theta, convention)
        drho = np.empty_like(rho)
        drho[:, 0, 0] = dee0 * g**2
        drho[:, 0, 1] = deg0 * phase * g
        drho[:, 1, 0] = np.conj(drho[:, 0, 1])
        drho[:, 1, 1] = -drho[:, 0, 0]
    elif derivative == "fd":
        drho = (family(theta + fd_step) - family(theta - fd_step)) / (2.0 * fd_step)
    else:
        raise ValidationError(f"unknown derivative mode {derivative!r}")
    return _qfi_from_matrices(rho, drho)


def qfi_theta(
    p: ModelParams,
    theta: float,
    t: float,
    convention: str = QFI_CONVENTION,
    *,
    gsol: GSolution | None = None,
    derivative: str = "analytic",
) -> float:
    """QFI at a single time; see qfi_series."""
    sol = gsol if gsol is not None else solve_g(p)
    g = sol.g(t)
    phase = np.exp(-1j * p.omega * np.array([t]))
    ree0, reg0, dee0, deg0 = _initial_family(theta, convention)

    def build(ree0_, reg0_):
        rho = np.empty((1, 2, 2), dtype=complex)
        rho[:, 0, 0] = ree0_ * g**2
        rho[:, 0, 1] = reg0_ * phase * g
        rho[:, 1, 0] = np.conj(rho[:, 0, 1])
        rho[:, 1, 1] = 1.0 - rho[:, 0, 0]
        return rho

    rho = build(ree0, reg0)
    if derivative == "analytic":
        drho = np.empty_like(rho)
        drho[:, 0, 0] = dee0 * g**2
        drho[:, 0, 1] = deg0 * phase * g
        drho[:, 1, 0] = np.conj(drho[:, 0, 1])
        drho[:, 1, 1] = -drho[:, 0, 0]
    else:
        h = 1e-5
        up = _initial_family(theta + h, convention)
        dn = _initial_family(theta - h, convention)
        drho = (build(up[0], up[1]) - build(dn[0], dn[1])) / (2.0 * h)
    return float(_qfi_from_matrices(rho, drho)[0])
