"""Linear quantum-state-diffusion trajectories with the two colored noises.

Each trajectory integrates the linear stochastic equation

    d psi / dt = [ -i H_s + kappa sigma^- z*_t - kappa F_z sigma^+ sigma^-
                   - i w*_t F_z sigma^- - i z*_t F_w sigma^- ] psi,

with z*_t = -i conj(z) e^{i omega_c t} for one standard complex Gaussian z
per trajectory, and w_t a stationary complex Ornstein-Uhlenbeck process
with covariance M[w_t conj(w_s)] = (gamma_w Gamma_w / 2)
exp(-gamma_w |t-s| - i Omega_w (t-s)); the equation consumes w*_t = conj(w_t).
The unnormalized ensemble mean M[psi psi^dagger] reproduces the reduced
density operator.

Reproducibility: trajectory i draws from default_rng([base_seed, i]), and
ensemble reduction runs over fixed-size chunks in index order, so results
are bitwise identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import PoleInWindow, ValidationError
from .gfunction import GSolution, find_g_roots, solve_g
from .model import GridSpec, ModelParams, PureState2, TimeSeries, validate_params
from .phasediagram import resolve_workers

CHUNK = 256  # fixed reduction granularity; must not depend on worker count


@dataclass(frozen=True)
class NoiseRealization:
    """One trajectory's noise samples on the grid."""

    z_star: np.ndarray
    w_star: np.ndarray
    base_seed: int
    traj_index: int


@dataclass(frozen=True)
class TrajectoryState:
    """Unnormalized state history of one trajectory; states has shape (n+1, 2)."""

    states: np.ndarray

    @property
    def final_norm_squared(self) -> float:
        return float(np.sum(np.abs(self.states[-1]) ** 2))


def _check_grid(p: ModelParams, grid: GridSpec):
    if math.isinf(p.gamma_w):
        raise ValidationError(
            "trajectory noise needs a finite gamma_w (delta-correlated noise "
            "is outside the exact-discretization scheme)"
        )
    if p.gamma_w * grid.dt >= 0.1:
        raise ValidationError(
            f"grid too coarse: gamma_w * dt = {p.gamma_w * grid.dt:.3f} must stay below 0.1"
        )


def _noise_chunk(p: ModelParams, grid: GridSpec, base_seed: int, indices) -> tuple:
    """(z_star, w_star) arrays of shape (m, n+1) for the given trajectory indices.

    Draw order per trajectory is fixed (z, then w_0, then the n OU
    increments), so a trajectory's noises do not depend on chunking.
    """
    n = grid.n_steps
    dt = grid.dt
    m = len(indices)
    z = np.empty(m, dtype=complex)
    w0 = np.empty(m, dtype=complex)
    xi = np.empty((m, n), dtype=complex)
    var_st = 0.5 * p.gamma_w * p.Gamma_w
    sig_step = math.sqrt(var_st * (1.0 - math.exp(-2.0 * p.gamma_w * dt)))
    for row, idx in enumerate(indices):
        rng = np.random.default_rng([base_seed, idx])
        a = rng.standard_normal(2)
        z[row] = (a[0] + 1j * a[1]) / math.sqrt(2.0)
        b = rng.standard_normal(2)
        w0[row] = math.sqrt(var_st) * (b[0] + 1j * b[1]) / math.sqrt(2.0)
        c = rng.standard_normal((n, 2))
        xi[row] = sig_step * (c[:, 0] + 1j * c[:, 1]) / math.sqrt(2.0)
    ts = grid.times()
    z_star = -1j * np.conj(z)[:, None] * np.exp(1j * p.omega_c * ts)[None, :]
    w = np.empty((m, n + 1), dtype=complex)
    w[:, 0] = w0
    decay = np.exp(-(p.gamma_w + 1j * p.Omega_w) * dt)
    for k in range(n):
        w[:, k + 1] = w[:, k] * decay + xi[:, k]
    return z_star, np.conj(w)


def sample_noises(
    p: ModelParams, grid: GridSpec, base_seed: int, traj_index: int
) -> NoiseRealization:
    """Noises for one trajectory; see the module docstring for conventions."""
    validate_params(p)
    _check_grid(p, grid)
    z_star, w_star = _noise_chunk(p, grid, base_seed, [traj_index])
    return NoiseRealization(z_star[0], w_star[0], base_seed, traj_index)


def _stage_coefficients(p: ModelParams, grid: GridSpec, gsol: GSolution | None):
    """F_z and F_w at the grid times and at the step midpoints.

    F_z = -g'/(kappa g) and F_w = -i (g'' + kappa^2 g) / (kappa g); for
    kappa = 0 both vanish identically.
    """
    ts = grid.times()
    mids = ts[:-1] + 0.5 * grid.dt
    if p.kappa == 0.0:
        zk = np.zeros(ts.size, dtype=complex)
        zh = np.zeros(mids.size, dtype=complex)
        return zk, zh, zk.copy(), zh.copy()
    sol = gsol if gsol is not None else solve_g(p)

    def coeffs(tt):
        g, gp, gpp = sol.eval(tt)
        fz = -gp / (p.kappa * g)
        fw = -1j * (gpp + p.kappa**2 * g) / (p.kappa * g)
        return fz.astype(complex), fw
    fz_k, fw_k = coeffs(ts)
    fz_h, fw_h = coeffs(mids)
    return fz_k, fz_h, fw_k, fw_h


def _rk4_evolve(p, grid, states0, z_star, w_star, stage, on_step=None) -> np.ndarray:
    """Vectorized per-step RK4 over (m, 2) states; noises held per step.

    on_step(k, states) is invoked after every step (and once at k = 0) so
    callers can accumulate without storing all trajectories.
    """
    fz_k, fz_h, fw_k, fw_h = stage
    dt = grid.dt
    hw = 0.5 * p.omega
    kap = p.kappa
    S = np.array(states0, dtype=complex)
    if on_step is not None:
        on_step(0, S)

    def rhs(S, fz, fw, zst, wst):
        ce, cg = S[:, 0], S[:, 1]
        dce = (-1j * hw - kap * fz) * ce
        dcg = 1j * hw * cg + (kap * zst - 1j * wst * fz - 1j * zst * fw) * ce
        return np.stack([dce, dcg], axis=1)

    for k in range(grid.n_steps):
        zst = z_star[:, k]
        wst = w_star[:, k]
        k1 = rhs(S, fz_k[k], fw_k[k], zst, wst)
        k2 = rhs(S + 0.5 * dt * k1, fz_h[k], fw_h[k], zst, wst)
        k3 = rhs(S + 0.5 * dt * k2, fz_h[k], fw_h[k], zst, wst)
        k4 = rhs(S + dt * k3, fz_k[k + 1], fw_k[k + 1], zst, wst)
        S = S + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if on_step is not None:
            on_step(k + 1, S)
    return S


def evolve_trajectory(
    p: ModelParams,
    psi0: PureState2,
    noises: NoiseRealization,
    grid: GridSpec,
    *,
    gsol: GSolution | None = None,
) -> TrajectoryState:
    """Integrate one unnormalized trajectory on the grid.

    The window must not contain a zero of g (F_z pole).
    """
    validate_params(p)
    _check_grid(p, grid)
    _check_no_pole(p, grid, gsol)
    stage = _stage_coefficients(p, grid, gsol)
    hist = np.empty((grid.n_steps + 1, 2), dtype=complex)

    def record(k, S):
        hist[k] = S[0]

    _rk4_evolve(
        p,
        grid,
        psi0.amplitudes()[None, :],
        noises.z_star[None, :],
        noises.w_star[None, :],
        stage,
        on_step=record,
    )
    return TrajectoryState(hist)


def _check_no_pole(p: ModelParams, grid: GridSpec, gsol: GSolution | None):
    if p.kappa == 0.0:
        return
    sol = gsol if gsol is not None else solve_g(p)
    roots = find_g_roots(sol, grid.t_end)
    if roots:
        raise PoleInWindow(
            f"g vanishes at t = {roots[0]:.6f} inside [0, {grid.t_end}]; "
            "F_z has a pole there"
        )


@dataclass(frozen=True)
class EnsembleResult:
    """Monte-Carlo mean density matrix with per-entry standard errors.

    series channels rho_ee / rho_eg / rho_ge / rho_gg hold the mean outer
    product; stderr_ee / stderr_eg / stderr_gg the corresponding standard
    errors of the mean.
    """

    series: TimeSeries
    n_traj: int
    base_seed: int
    mean_final_norm_sq: float
    stderr_final_norm_sq: float


def ensemble_density(
    p: ModelParams,
    theta: float,
    grid: GridSpec,
    n_traj: int,
    base_seed: int,
    *,
    workers: int | None = None,
) -> EnsembleResult:
    """Mean of psi psi^dagger over n_traj trajectories, with standard errors.

    Bitwise deterministic for fixed (base_seed, n_traj, grid): per-chunk
    partial sums (fixed chunk size) are reduced in chunk order regardless
    of how many workers ran them.
    """
    validate_params(p)
    if n_traj < 100:
        raise ValidationError(f"n_traj must be >= 100, got {n_traj}")
    _check_grid(p, grid)
    gsol = solve_g(p) if p.kappa > 0.0 else None
    _check_no_pole(p, grid, gsol)
    stage = _stage_coefficients(p, grid, gsol)
    psi0 = PureState2.from_bloch_angle(theta).amplitudes()
    n = grid.n_steps

    def run_chunk(chunk_index: int):
        lo = chunk_index * CHUNK
        hi = min(lo + CHUNK, n_traj)
        idx = range(lo, hi)
        z_star, w_star = _noise_chunk(p, grid, base_seed, idx)
        m = hi - lo
        sum_rho = np.zeros((n + 1, 2, 2), dtype=complex)
        sum_sq = np.zeros((n + 1, 2, 2))

        def accumulate(k, S):
            sum_rho[k] += np.einsum("mi,mj->ij", S, np.conj(S))
            a2 = np.abs(S) ** 2
            sum_sq[k] += np.einsum("mi,mj->ij", a2, a2)

        S_end = _rk4_evolve(
            p, grid, np.tile(psi0, (m, 1)), z_star, w_star, stage, on_step=accumulate
        )
        norms = np.sum(np.abs(S_end) ** 2, axis=1)
        return sum_rho, sum_sq, float(np.sum(norms)), float(np.sum(norms**2)), m

    n_chunks = (n_traj + CHUNK - 1) // CHUNK
    n_workers = resolve_workers(workers)
    if n_workers == 1 or n_chunks == 1:
        parts = [run_chunk(i) for i in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run_chunk, range(n_chunks)))

    sum_rho = np.zeros((n + 1, 2, 2), dtype=complex)
    sum_sq = np.zeros((n + 1, 2, 2))
    norm_sum = 0.0
    norm_sumsq = 0.0
    for rho_c, sq_c, ns, nss, _ in parts:  # chunk order fixed by map
        sum_rho += rho_c
        sum_sq += sq_c
        norm_sum += ns
        norm_sumsq += nss

    mean = sum_rho / n_traj
    var = np.maximum(sum_sq / n_traj - np.abs(mean) ** 2, 0.0)
    stderr = np.sqrt(var / n_traj)
    series = TimeSeries(
        grid,
        {
            "rho_ee": mean[:, 0, 0].real,
            "rho_eg": mean[:, 0, 1],
            "rho_ge": mean[:, 1, 0],
            "rho_gg": mean[:, 1, 1].real,
            "stderr_ee": stderr[:, 0, 0],
            "stderr_eg": stderr[:, 0, 1],
            "stderr_gg": stderr[:, 1, 1],
        },
    )
    mean_norm = norm_sum / n_traj
    var_norm = max(norm_sumsq / n_traj - mean_norm**2, 0.0)
    return EnsembleResult(
        series=series,
        n_traj=n_traj,
        base_seed=base_seed,
        mean_final_norm_sq=mean_norm,
        stderr_final_norm_sq=math.sqrt(var_norm / n_traj),
    )
