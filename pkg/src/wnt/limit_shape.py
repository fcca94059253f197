"""Lens profile r(t), ell(t) = 1/r(t) and the limiting potential devlim.

The profile solves

    r' = sqrt(2/pi) r^2 sqrt(r - pi/2),   r(1) = pi/2,   r > pi/2 on (1, 2),

mirrored to (0, 1) by r(t) = r(2 - t).  r blows up like t^(-2/3) at both ends,
so the stepper works with ell = 1/r, which is bounded and vanishes at 0 and 2.

Between nodes the profile is interpolated in the graded coordinate
w = min(t, 2 - t)^(1/3), in which the node grid is uniform and both
ell / w^2 and w * ell' are smooth up to the endpoints.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import DomainError, SolverFailure, ValidationError

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
HALF_PI = 0.5 * math.pi
# r(t) t^(2/3) -> R_ASYMPTOTIC as t -> 0
R_ASYMPTOTIC = (2.0 / 3.0) ** (2.0 / 3.0) * HALF_PI ** (1.0 / 3.0)
ELL_ASYMPTOTIC = 1.0 / R_ASYMPTOTIC
SERIES_COEF = math.pi**3 / 32.0

_RESIDUAL_MARGIN = 0.05
_FD_STEP = 1e-4
# nodes closer than this to t = 2 are integrated backward from ell(2) = 0
_TAIL_SWITCH = 1e-3
_TAIL_GAUSS = np.polynomial.legendre.leggauss(40)


def r_rhs(r):
    """Right side of the r equation (valid for r >= pi/2)."""
    r = np.asarray(r, dtype=float)
    return SQRT_2_OVER_PI * r**2 * np.sqrt(np.maximum(r - HALF_PI, 0.0))


def ell_rhs(ell):
    """d ell / dt on (1, 2); the mirror image on (0, 1) has the opposite sign."""
    ell = np.asarray(ell, dtype=float)
    return -SQRT_2_OVER_PI * np.sqrt(np.maximum(1.0 / ell - HALF_PI, 0.0))


def _monotone_slopes(x, y, m):
    """Fritsch-Carlson limiting of prescribed Hermite slopes."""
    m = np.array(m, dtype=float)
    delta = np.diff(y) / np.diff(x)
    for k, d in enumerate(delta):
        if d == 0.0:
            m[k] = m[k + 1] = 0.0
            continue
        if m[k] * d < 0.0:
            m[k] = 0.0
        if m[k + 1] * d < 0.0:
            m[k + 1] = 0.0
        a, b = m[k] / d, m[k + 1] / d
        s = a * a + b * b
        if s > 9.0:
            tau = 3.0 / math.sqrt(s)
            m[k] = tau * a * d
            m[k + 1] = tau * b * d
    return m


class LensProfile:
    """Tabulated lens profile on [0, 2] with cubic interpolation.

    Arrays are read-only; instances are safe to share between threads.
    ``r_vals`` is ``inf`` and ``elldot_vals`` is ``+-inf`` at t = 0 and t = 2.
    """

    interp_order = 3

    def __init__(self, grid_t, r_vals, ell_vals, elldot_vals, max_residual=float("nan")):
        arrays = [np.array(a, dtype=float) for a in (grid_t, r_vals, ell_vals, elldot_vals)]
        for a in arrays:
            a.setflags(write=False)
        self.grid_t, self.r_vals, self.ell_vals, self.elldot_vals = arrays
        self.max_residual = float(max_residual)
        t = self.grid_t
        if t.ndim != 1 or t.size < 5 or np.any(np.diff(t) <= 0):
            raise ValidationError("grid_t must be strictly increasing with >= 5 nodes")
        if t[0] != 0.0 or t[-1] != 2.0:
            raise ValidationError("grid_t must span [0, 2]")
        self._build_interpolants()

    # -- construction helpers -------------------------------------------------
    def _build_interpolants(self):
        t = self.grid_t
        left = t <= 1.0
        tl = t[left]
        w = np.cbrt(tl)
        ell = self.ell_vals[left]
        elldot = self.elldot_vals[left]
        A = np.empty_like(w)
        Q = np.empty_like(w)
        dA = np.empty_like(w)
        dQ = np.empty_like(w)
        A[0], Q[0], dA[0], dQ[0] = ELL_ASYMPTOTIC, 2.0 * ELL_ASYMPTOTIC / 3.0, 0.0, 0.0
        wi, li, di = w[1:], ell[1:], elldot[1:]
        A[1:] = li / wi**2
        Q[1:] = di * wi
        dA[1:] = 3.0 * di - 2.0 * li / wi**3
        dQ[1:] = di - 3.0 * wi**3 / (math.pi * li**2)
        self._A = CubicHermiteSpline(w, A, _monotone_slopes(w, A, dA))
        self._Q = CubicHermiteSpline(w, Q, _monotone_slopes(w, Q, dQ))

    # -- evaluation -----------------------------------------------------------
    @staticmethod
    def _graded(t):
        t = np.asarray(t, dtype=float)
        if np.any((t < 0.0) | (t > 2.0)):
            raise DomainError("time outside [0, 2]")
        d = np.minimum(t, 2.0 - t)
        return t, np.cbrt(d)

    def ell(self, t):
        t, w = self._graded(t)
        return w**2 * self._A(w)

    def elldot(self, t):
        t, w = self._graded(t)
        sign = np.where(t < 1.0, 1.0, -1.0)
        with np.errstate(divide="ignore"):
            out = sign * self._Q(w) / w
        return np.where(t == 1.0, 0.0, out)

    def r(self, t):
        with np.errstate(divide="ignore"):
            return 1.0 / self.ell(t)

    # -- integrals ------------------------------------------------------------
    def integral_r(self, n_quad=64):
        """int_0^2 r dt, by Gauss-Legendre in the graded coordinate."""
        xg, wg = np.polynomial.legendre.leggauss(n_quad)
        w = 0.5 * (xg + 1.0)
        # t = w^3 on the left half: r dt = 3 dw / A(w)
        return 2.0 * 0.5 * float(np.sum(wg * 3.0 / self._A(w)))

    def devlim_energy(self, n_quad=64):
        """1/2 ||devlim||_2^2 by two-dimensional Gauss-Legendre quadrature."""
        xg, wg = np.polynomial.legendre.leggauss(n_quad)
        w = 0.5 * (xg + 1.0)
        ww = 0.5 * wg
        T = w**3
        total = 0.0
        for Ti, wi, wti in zip(T, w, ww):
            ell = self.ell(Ti)
            x = ell * xg
            vals = devlim(self, Ti, x)
            inner = ell * float(np.sum(wg * vals**2))
            total += wti * 3.0 * wi**2 * inner
        # both halves contribute equally; the factor 1/2 cancels the mirror
        return total

    # -- IO -------------------------------------------------------------------
    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write("t,r,ell,elldot\n")
            for row in zip(self.grid_t, self.r_vals, self.ell_vals, self.elldot_vals):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return path

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["t", "r", "ell", "elldot"]:
                raise ValidationError(f"unexpected profile header {header!r}")
            rows = np.array([[float(v) for v in row] for row in reader if row])
        return cls(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])

    def __repr__(self):
        return f"LensProfile(nodes={self.grid_t.size}, max_residual={self.max_residual:.3g})"


def _time_to_end(ell):
    """2 - t as a function of ell near t = 2: int_0^ell ds / |ell'(s)|.

    With s = v^2 the integrand 2 v^2 / (k sqrt(1 - pi v^2 / 2)) is smooth.
    """
    ell = np.atleast_1d(np.asarray(ell, dtype=float))
    xg, wg = _TAIL_GAUSS
    b = np.sqrt(ell)[:, None]
    v = 0.5 * b * (xg + 1.0)
    f = 2.0 * v**2 / (SQRT_2_OVER_PI * np.sqrt(1.0 - HALF_PI * v**2))
    return 0.5 * b[:, 0] * (f @ wg)


def _tail_ell(d):
    """Invert _time_to_end by Newton iteration (monotone, convex start)."""
    d = np.asarray(d, dtype=float)
    ell = (1.5 * SQRT_2_OVER_PI * d) ** (2.0 / 3.0)
    for _ in range(60):
        g = _time_to_end(ell) - d
        dg = np.sqrt(ell) / (SQRT_2_OVER_PI * np.sqrt(1.0 - HALF_PI * ell))
        step = g / dg
        ell = np.maximum(ell - step, 0.5 * ell)
        if np.all(np.abs(step) <= 1e-15 * ell):
            break
    return ell


def _half_grid(n_nodes):
    m = n_nodes // 2
    w = np.arange(m + 1) / m
    return w


def build_lens_profile(n_nodes=512, tol=1e-8, eps=1e-4):
    """Integrate the lens ODE and tabulate r, ell, ell' on a graded grid.

    Parameters
    ----------
    n_nodes : int
        Grid resolution; the grid has ``2 * (n_nodes // 2) + 1`` nodes, uniform
        in w = min(t, 2 - t)^(1/3) (density ~ distance^(-2/3) at 0 and 2).
    tol : float
        Maximum admitted ODE residual |r' - rhs(r)| at interior nodes.
    eps : float
        Offset of the series seed r(1 + eps) = pi/2 + pi^3 eps^2 / 32.
    """
    if n_nodes < 64:
        raise ValidationError("n_nodes must be >= 64")
    if not (0.0 < tol <= 1e-4):
        raise ValidationError("tol must lie in (0, 1e-4]")
    w = _half_grid(n_nodes)
    m = w.size - 1
    if not (0.0 < eps < 1.0 - (1.0 - 1.0 / m) ** 3):
        raise ValidationError("eps must be positive and below the first grid offset")

    # right half, ascending in t: w from 1 down to 0
    w_right = w[::-1]
    t_right = 2.0 - w_right**3
    t_inner = t_right[1:-1]
    tail = 2.0 - t_inner < _TAIL_SWITCH
    t_eval = t_inner[~tail]
    t_switch = 2.0 - _TAIL_SWITCH
    r0 = HALF_PI + SERIES_COEF * eps**2
    sol = solve_ivp(
        lambda _t, y: ell_rhs(y),
        (1.0 + eps, t_switch),
        [1.0 / r0],
        method="DOP853",
        t_eval=t_eval,
        dense_output=True,
        rtol=1e-13,
        atol=1e-20,
    )
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise SolverFailure(f"lens ODE stepper failed: {sol.message}")

    ell_r = np.empty_like(t_right)
    ell_r[0] = 1.0 / HALF_PI
    ell_r[1:-1][~tail] = sol.y[0]
    ell_r[1:-1][tail] = _tail_ell(2.0 - t_inner[tail])
    mismatch = abs(float(sol.sol(t_switch)[0]) - float(_tail_ell(_TAIL_SWITCH)[0]))
    if not mismatch < tol:
        raise SolverFailure(
            f"forward and endpoint integrations disagree by {mismatch:.3g} at t={t_switch}",
            worst_node=t_switch,
            worst_residual=mismatch,
        )
    ell_r[-1] = 0.0
    elldot_r = np.empty_like(t_right)
    elldot_r[0] = 0.0
    elldot_r[1:-1] = ell_rhs(ell_r[1:-1])
    elldot_r[-1] = -np.inf
    r_r = np.empty_like(t_right)
    r_r[0] = HALF_PI
    r_r[1:-1] = 1.0 / ell_r[1:-1]
    r_r[-1] = np.inf

    # residual of the r equation from the dense solution
    mask = (t_eval - 1.0 >= _RESIDUAL_MARGIN) & (2.0 - t_eval >= _RESIDUAL_MARGIN)
    tt = t_eval[mask]
    h = _FD_STEP

    def r_dense(s):
        return 1.0 / sol.sol(s)[0]

    rdot = (8.0 * (r_dense(tt + h) - r_dense(tt - h)) - (r_dense(tt + 2 * h) - r_dense(tt - 2 * h))) / (12.0 * h)
    resid = np.abs(rdot - r_rhs(r_dense(tt)))
    worst = int(np.argmax(resid)) if resid.size else 0
    max_res = float(resid[worst]) if resid.size else 0.0
    if not max_res < tol:
        raise SolverFailure(
            f"ODE residual {max_res:.3g} exceeds tol {tol:.3g} at t={tt[worst]:.6g}",
            worst_node=float(tt[worst]),
            worst_residual=max_res,
        )

    # mirror: left half t = w^3 ascending
    t_left = w**3
    grid_t = np.concatenate([t_left, t_right[1:]])
    left_rev = slice(None, None, -1)
    ell_all = np.concatenate([ell_r[left_rev], ell_r[1:]])
    r_all = np.concatenate([r_r[left_rev], r_r[1:]])
    elldot_all = np.concatenate([-elldot_r[left_rev], elldot_r[1:]])
    elldot_all[m] = 0.0
    return LensProfile(grid_t, r_all, ell_all, elldot_all, max_residual=max_res)


def devlim(profile, t, x):
    """Vectorised devlim(t, x) = -(1/2pi) r(t) (1 - x^2/ell(t)^2)_+ for t in (0, 2)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any((t <= 0.0) | (t >= 2.0)):
        raise DomainError("devlim is evaluated only for t in (0, 2)")
    ell = profile.ell(t)
    r = 1.0 / ell
    bump = np.maximum(0.0, 1.0 - (x / ell) ** 2)
    return -r * bump / (2.0 * math.pi)


def devlim_at(profile, t, x):
    """Scalar devlim; exactly 0 outside the lens |x| >= ell(t)."""
    t = float(t)
    if not (0.0 < t < 2.0):
        raise DomainError(f"devlim_at requires t in (0, 2), got {t}")
    return float(devlim(profile, t, float(x)))


def fit_bound_constants(profile):
    """Smallest c with |ell'| <= c (t^-1/3 + (2-t)^-1/3) and sup|devlim| <= c (t^-2/3 + (2-t)^-2/3) on the nodes."""
    t = profile.grid_t[1:-1]
    c_elldot = np.max(np.abs(profile.elldot_vals[1:-1]) / (t ** (-1 / 3) + (2 - t) ** (-1 / 3)))
    c_devlim = np.max(profile.r_vals[1:-1] / (2 * math.pi) / (t ** (-2 / 3) + (2 - t) ** (-2 / 3)))
    return float(c_elldot), float(c_devlim)
