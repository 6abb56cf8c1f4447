"""The auxiliary amplitude function g(t) and its representations.

At resonance g solves the linear third-order ODE

    g''' = -gamma_w g'' - (gamma_w Gamma_w + 2 kappa^2)/2 g' - gamma_w kappa^2 g,
    g(0) = 1,  g'(0) = 0,  g''(0) = -kappa^2,

whose modes are exp(x t / 2) with x running over the roots of

    x^3 + 2 gamma_w x^2 + (4 kappa^2 + 2 gamma_w Gamma_w) x + 8 kappa^2 gamma_w = 0.

The closed root-sum solution, an independent high-order ODE oracle, the
memory-less-bath closed forms, and sign-change root finding all live here.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DegenerateRoots, IntegrationFailure, NotResonant
from .model import GridSpec, ModelParams, TimeSeries, validate_params

ROOT_SUM = "root-sum"
ODE_FALLBACK = "ode-fallback"
MARKOV = "markov"

_DEGENERACY_RTOL = 1e-8
_REALNESS_TOL = 1e-9


def cubic_coefficients(p: ModelParams) -> np.ndarray:
    """Monic coefficients [1, 2 gw, 4 k^2 + 2 gw Gw, 8 k^2 gw] of the characteristic cubic."""
    return np.array(
        [
            1.0,
            2.0 * p.gamma_w,
            4.0 * p.kappa**2 + 2.0 * p.gamma_w * p.Gamma_w,
            8.0 * p.kappa**2 * p.gamma_w,
        ]
    )


def ode_state_matrix(p: ModelParams) -> np.ndarray:
    """Matrix M of the first-order form d/dt (g, g', g'') = M (g, g', g'').

    Its eigenvalues are x_i / 2 for the characteristic roots x_i.
    """
    return np.array(
        [
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [
                -p.gamma_w * p.kappa**2,
                -0.5 * (p.gamma_w * p.Gamma_w + 2.0 * p.kappa**2),
                -p.gamma_w,
            ],
        ]
    )


def cubic_roots(p: ModelParams) -> np.ndarray:
    """Roots of the characteristic cubic, sorted by (real, imag).

    Complex roots come out as an exact conjugate pair.  Requires resonant
    parameters; kappa = 0 is allowed (roots 0 and the free-cavity pair).
    """
    validate_params(p)
    if not p.resonant():
        raise NotResonant("characteristic cubic is derived at omega == omega_c == Omega_w")
    coeffs = cubic_coefficients(p)
    roots = np.roots(coeffs).astype(complex)
    # Newton polish: companion eigenvalues are good to ~1e-12 relative; two
    # steps push residuals to rounding so exp(x t / 2) stays accurate at large t.
    dcoeffs = np.polyder(coeffs)
    for _ in range(2):
        fv = np.polyval(coeffs, roots)
        dv = np.polyval(dcoeffs, roots)
        ok = np.abs(dv) > 0
        roots[ok] = roots[ok] - fv[ok] / dv[ok]
    scale = max(1.0, float(np.max(np.abs(roots))))
    imag = np.abs(roots.imag) > 1e-10 * scale
    if np.count_nonzero(imag) == 2:
        i, j = np.nonzero(imag)[0]
        pair = 0.5 * (roots[i] + np.conj(roots[j]))
        roots[i], roots[j] = pair, np.conj(pair)
        k = np.nonzero(~imag)[0][0]
        roots[k] = roots[k].real
    elif np.count_nonzero(imag) == 0:
        roots = roots.real.astype(complex)
    order = np.lexsort((roots.imag, roots.real))
    return roots[order]


def cubic_discriminant(p: ModelParams) -> float:
    """Discriminant-sign indicator of the characteristic cubic.

    D <= 0 means three real roots; D > 0 one real root plus a conjugate
    pair.  Only the sign is meaningful (overall constant fixed to 1).
    """
    validate_params(p)
    gw, k2, Gw = p.gamma_w, p.kappa**2, p.Gamma_w
    return float(
        gw**2 * (36.0 * k2 - 9.0 * gw * Gw + 4.0 * gw**2) ** 2
        - 2.0 * (-6.0 * k2 - 3.0 * gw * Gw + 2.0 * gw**2) ** 3
    )


@dataclass
class GSolution:
    """Evaluatable representation of g, g', g''.

    method is one of ROOT_SUM (characteristic roots + mode weights),
    ODE_FALLBACK (dense adaptive integration; used when roots are within
    1e-8 relative of each other) or MARKOV (memory-less closed forms for
    gamma_w = inf).
    """

    params: ModelParams
    method: str
    roots: np.ndarray | None = None
    weights: np.ndarray | None = None
    _dense: object = field(default=None, repr=False)
    _dense_t_end: float = field(default=0.0, repr=False)

    def eval(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(g, g', g'') at times t; accepts scalars or arrays, returns arrays."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.method == MARKOV:
            g = g_markov_limit(self.params.Gamma_w, self.params.kappa, t)
            gp = g_markov_limit_deriv(self.params.Gamma_w, self.params.kappa, t)
            gpp = self._markov_second_deriv(t)
            return g, gp, gpp
        if self.method == ODE_FALLBACK:
            self._ensure_dense(float(np.max(t)) if t.size else 1.0)
            y = self._dense(t)
            return y[0], y[1], y[2]
        e = np.exp(np.outer(t, self.roots) / 2.0)
        half = self.roots / 2.0
        g = e @ self.weights
        gp = e @ (self.weights * half)
        gpp = e @ (self.weights * half**2)
        resid = max(np.max(np.abs(g.imag)), np.max(np.abs(gp.imag)), np.max(np.abs(gpp.imag)))
        if resid > _REALNESS_TOL:
            raise DegenerateRoots(
                f"imaginary residue {resid:.2e} exceeds {_REALNESS_TOL}; roots too close"
            )
        return g.real, gp.real, gpp.real

    def g(self, t) -> np.ndarray:
        return self.eval(t)[0]

    def scan_step(self) -> float:
        """Root-scan step: 1/20 of the shortest characteristic time scale."""
        p = self.params
        scales = [1.0 / max(p.kappa, 1e-12)]
        if self.method == MARKOV:
            c2 = p.Gamma_w**2 - 16.0 * p.kappa**2
            scales.append(4.0 / p.Gamma_w)
            if c2 < 0.0:
                scales.append(2.0 * math.pi * 4.0 / math.sqrt(-c2))
        else:
            scales.append(1.0 / p.gamma_w)
            if self.roots is not None:
                im = float(np.max(np.abs(self.roots.imag)))
                if im > 0.0:
                    scales.append(2.0 * math.pi / im)
        return min(scales) / 20.0

    def _ensure_dense(self, t_end: float):
        if self._dense is not None and t_end <= self._dense_t_end:
            return
        t_hi = max(2.0 * t_end, 200.0)
        sol = _integrate_g(self.params, (0.0, t_hi), dense=True)
        self._dense = sol.sol
        self._dense_t_end = t_hi

    def _markov_second_deriv(self, t: np.ndarray) -> np.ndarray:
        # g'' = -Gw/4 g' - kappa^2 * e^{-Gw t/4} cosh(c t/4) from differentiating g'.
        Gw, k = self.params.Gamma_w, self.params.kappa
        c2 = Gw**2 - 16.0 * k**2
        gp = g_markov_limit_deriv(Gw, k, t)
        if abs(c2) < 1e-12 * max(Gw**2, 1.0):
            ch = np.ones_like(t)
        elif c2 > 0.0:
            ch = np.cosh(np.sqrt(c2) * t / 4.0)
        else:
            ch = np.cos(np.sqrt(-c2) * t / 4.0)
        return -0.25 * Gw * gp - k**2 * np.exp(-Gw * t / 4.0) * ch


def solve_g(p: ModelParams) -> GSolution:
    """Build the g(t) representation for resonant parameters.

    Distinct characteristic roots give the root-sum; near-degenerate roots
    (pairwise distance < 1e-8 relative) fall back to dense integration;
    gamma_w = inf selects the memory-less closed forms.
    """
    validate_params(p)
    if p.is_markov_limit:
        return GSolution(params=p, method=MARKOV)
    roots = cubic_roots(p)
    scale = max(1.0, float(np.max(np.abs(roots))))
    gaps = [abs(roots[i] - roots[j]) for i in range(3) for j in range(i + 1, 3)]
    if min(gaps) < _DEGENERACY_RTOL * scale:
        return GSolution(params=p, method=ODE_FALLBACK)
    gw, Gw, k2 = p.gamma_w, p.Gamma_w, p.kappa**2
    num = 2.0 * gw * Gw + 2.0 * roots * gw + roots**2
    den = 4.0 * k2 + 2.0 * gw * Gw + 4.0 * roots * gw + 3.0 * roots**2
    with np.errstate(divide="ignore", invalid="ignore"):
        weights = num / den
    # mode weights are p'(x_i)-reciprocals: huge values mean the gap check
    # missed a near-degeneracy (double roots split like sqrt(eps))
    if not np.all(np.isfinite(weights)) or np.max(np.abs(weights)) > 1e6:
        return GSolution(params=p, method=ODE_FALLBACK)
    return GSolution(params=p, method=ROOT_SUM, roots=roots, weights=weights)


def g_eval(sol: GSolution, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(g, g', g'') at t >= 0; see GSolution.eval."""
    return sol.eval(t)


def _g_rhs(t, y, gw, Gw, k2):
    return [y[1], y[2], -gw * y[2] - 0.5 * (gw * Gw + 2.0 * k2) * y[1] - gw * k2 * y[0]]


def _integrate_g(p: ModelParams, t_span, t_eval=None, dense=False):
    sol = solve_ivp(
        _g_rhs,
        t_span,
        [1.0, 0.0, -p.kappa**2],
        args=(p.gamma_w, p.Gamma_w, p.kappa**2),
        method="DOP853",
        rtol=1e-13,
        atol=1e-15,
        t_eval=t_eval,
        dense_output=dense,
    )
    if not sol.success:
        raise IntegrationFailure(f"g integration failed: {sol.message}")
    return sol


def g_ode_oracle(p: ModelParams, grid: GridSpec) -> TimeSeries:
    """g, g', g'' by adaptive integration, independent of the root-sum."""
    validate_params(p)
    if not p.resonant():
        raise NotResonant("the third-order g equation holds at resonance only")
    ts = grid.times()
    sol = _integrate_g(p, (ts[0], ts[-1]), t_eval=ts)
    return TimeSeries(grid, {"g": sol.y[0], "gp": sol.y[1], "gpp": sol.y[2]})


def g_markov_limit(Gamma_w: float, kappa: float, t) -> np.ndarray:
    """Memory-less-bath g(t).

    exp(-Gw t/4) [Gw sinh(c t/4)/c + cosh(c t/4)] with c = sqrt(Gw^2-16 k^2);
    for Gw = 4 kappa the limit exp(-Gw t/4)(Gw t + 4)/4; imaginary c turns
    cosh/sinh into cos/sin so the value is always real.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    c2 = Gamma_w**2 - 16.0 * kappa**2
    env = np.exp(-Gamma_w * t / 4.0)
    if abs(c2) < 1e-12 * max(Gamma_w**2, 1.0):
        return 0.25 * env * (Gamma_w * t + 4.0)
    if c2 > 0.0:
        c = math.sqrt(c2)
        return env * (Gamma_w * np.sinh(c * t / 4.0) / c + np.cosh(c * t / 4.0))
    c = math.sqrt(-c2)
    return env * (Gamma_w * np.sin(c * t / 4.0) / c + np.cos(c * t / 4.0))


def g_markov_limit_deriv(Gamma_w: float, kappa: float, t) -> np.ndarray:
    """d/dt of the memory-less g: -4 k^2 exp(-Gw t/4) sinh(c t/4)/c."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    c2 = Gamma_w**2 - 16.0 * kappa**2
    env = np.exp(-Gamma_w * t / 4.0)
    if abs(c2) < 1e-12 * max(Gamma_w**2, 1.0):
        return -4.0 * kappa**2 * env * (t / 4.0)
    if c2 > 0.0:
        c = math.sqrt(c2)
        return -4.0 * kappa**2 * env * np.sinh(c * t / 4.0) / c
    c = math.sqrt(-c2)
    return -4.0 * kappa**2 * env * np.sin(c * t / 4.0) / c


def _bisect_root(f, lo: float, hi: float, xtol: float = 1e-12) -> float:
    flo = f(lo)
    if flo == 0.0:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < xtol:
            return mid
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (flo < 0.0) == (fm < 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_g_roots(sol: GSolution, t_max: float) -> list[float]:
    """Times of sign changes of g in (0, t_max], refined to ~1e-12.

    Tangential touches (no sign change) are not reported; an empty list is
    a valid result.
    """
    if not (t_max > 0.0):
        raise ValueError(f"t_max must be > 0, got {t_max}")
    step = sol.scan_step()
    n = int(math.ceil(t_max / step))
    ts = np.linspace(0.0, t_max, n + 1)
    gv = sol.g(ts)
    sign = np.sign(gv)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    f = lambda t: float(sol.g(t)[0])
    roots = [_bisect_root(f, ts[i], ts[i + 1]) for i in flips]
    # a sample landing exactly on a zero: count it if the neighbours straddle
    for i in np.nonzero(sign == 0.0)[0]:
        if 0 < i < n and sign[i - 1] * sign[i + 1] < 0:
            roots.append(float(ts[i]))
    return sorted(roots)


def markov_root_times(delta: float, n_max: int) -> list[float]:
    """First n_max positive zeros of the memory-less g for kappa = 1/4 + delta, Gamma_w = 1.

    Merges the two families
        t = 2 sqrt(2) (n pi - atan(phi))   / sqrt(delta (2 delta + 1))
        t = 2 sqrt(2) (n pi + atan(1/phi)) / sqrt(delta (2 delta + 1)),
    phi = sqrt(2) delta / sqrt(delta (2 delta + 1)).
    """
    if not (delta > 0.0):
        raise ValueError(f"delta must be > 0, got {delta}")
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    s = math.sqrt(delta * (2.0 * delta + 1.0))
    phi = math.sqrt(2.0) * delta / s
    pref = 2.0 * math.sqrt(2.0) / s
    times: list[float] = []
    n = 0
    # each family contributes one root per period; n_max+2 covers interleaving
    while n <= n_max + 2:
        for t in (pref * (n * math.pi - math.atan(phi)), pref * (n * math.pi + math.atan(1.0 / phi))):
            if t > 0.0:
                bisect.insort(times, t)
        n += 1
    return times[:n_max]
