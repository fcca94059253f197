"""Geodesics of the limiting action and the limit shape hlim.

Inside the lens |x| <= ell(t) the geodesic from the origin is a * ell; outside
it follows +-ell up to a tangency time and then leaves along the tangent line.
hlim(t, x) is the action of that geodesic,

    int_0^t ( -1/2 gamma'(u)^2 + devlim(u, gamma(u)) ) du.

``dp_oracle`` computes the same quantity without any knowledge of the
geodesic, by a Bellman recursion over piecewise-linear paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import InfeasibleLatticeError, OutOfRangeError, ValidationError
from .limit_shape import devlim

_GL_NODES = 48


@dataclass(frozen=True)
class Geodesic:
    """Origin-anchored optimal path to ``target = (t, x)``.

    ``kind`` is ``"interior"`` (path ``a * ell``) or ``"exterior"`` (``sign * ell``
    on ``[0, t_exit]`` followed by the tangent line).
    """

    kind: str
    target: tuple
    a: float = 0.0
    t_exit: float = math.inf
    sign: int = 1

    def path(self, profile, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "interior":
            return self.a * profile.ell(u)
        te = self.t_exit
        on_lens = np.minimum(u, te)
        curve = profile.ell(on_lens)
        line = profile.ell(te) + profile.elldot(te) * (u - te)
        return self.sign * np.where(u <= te, curve, line)

    def velocity(self, profile, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "interior":
            return self.a * profile.elldot(u)
        te = self.t_exit
        return self.sign * np.where(u <= te, profile.elldot(np.minimum(u, te)), profile.elldot(te))


# The profile interpolates in w = t^(1/3) and is asymptotically exact below its
# first node, so tangencies are resolved down to this fraction of that node.
_BRACKET_FLOOR = 1e-9


def tangency_gap(profile, s, t, x):
    """g(s) = ell(s) + ell'(s) (t - s) - |x|; zero at the tangency time."""
    if s >= t:
        return float(profile.ell(t)) - abs(x)  # limit value; ell' may be infinite at t = 2
    return float(profile.ell(s) + profile.elldot(s) * (t - s) - abs(x))


def geodesic_to(profile, t, x):
    """Unique geodesic from (0, 0) to (t, x); at (2, 0) the convention a = 0."""
    t, x = float(t), float(x)
    if not (0.0 < t <= 2.0):
        raise ValidationError(f"geodesic target time must lie in (0, 2], got {t}")
    ell_t = float(profile.ell(t))
    if abs(x) <= ell_t:
        a = 0.0 if ell_t == 0.0 else x / ell_t
        return Geodesic("interior", (t, x), a=a)

    # g is decreasing on (0, t) because ell is concave; g(t) = ell(t) - |x| < 0
    s_lo = float(profile.grid_t[1]) * _BRACKET_FLOOR
    g_lo = tangency_gap(profile, s_lo, t, x)
    if g_lo <= 0.0:
        raise OutOfRangeError(
            f"tangency for (t, x) = ({t}, {x}) lies below the resolvable time {s_lo:.3g}",
            bracket=(s_lo, t),
        )
    s = brentq(lambda s_: tangency_gap(profile, s_, t, x), s_lo, t, xtol=1e-15, rtol=1e-15)
    return Geodesic("exterior", (t, x), t_exit=float(s), sign=1 if x > 0 else -1)


def _graded_pieces(s, t, breaks=()):
    """Split [s, t] at 1 and at any interior break points."""
    pts = sorted({s, t, *[b for b in (1.0, *breaks) if s < b < t]})
    return list(zip(pts[:-1], pts[1:]))


def _graded_rule(a, b, n=_GL_NODES):
    """Gauss-Legendre nodes/weights on [a, b] in the coordinate w = dist^(1/3).

    [a, b] must lie inside [0, 1] or inside [1, 2].  The cube substitution
    absorbs the u^(-2/3) singularity of the integrand at u = 0 and u = 2.
    """
    xg, wg = np.polynomial.legendre.leggauss(n)
    if b <= 1.0:
        wa, wb = np.cbrt(a), np.cbrt(b)
        w = wa + (wb - wa) * 0.5 * (xg + 1.0)
        u = w**3
        jac = 3.0 * w**2
    else:
        wa, wb = np.cbrt(2.0 - a), np.cbrt(2.0 - b)
        w = wa + (wb - wa) * 0.5 * (xg + 1.0)
        u = 2.0 - w**3
        jac = -3.0 * w**2
    return u, wg * 0.5 * (wb - wa) * jac


def action(profile, geo, s, t):
    """Action of ``geo`` over [s, t] by graded Gauss-Legendre quadrature."""
    s, t = float(s), float(t)
    if not (0.0 <= s <= t <= geo.target[0]):
        raise ValidationError(f"invalid action interval [{s}, {t}]")
    if s == t:
        return 0.0
    breaks = (geo.t_exit,) if geo.kind == "exterior" else ()
    total = 0.0
    for a, b in _graded_pieces(s, t, breaks):
        u, wts = _graded_rule(a, b)
        inside = (u > 0.0) & (u < 2.0)
        vel = geo.velocity(profile, u)
        pot = np.zeros_like(u)
        pot[inside] = devlim(profile, u[inside], geo.path(profile, u[inside]))
        total += float(np.sum(wts * (-0.5 * vel**2 + pot)))
    return total


def hlim_at(profile, t, x):
    """hlim(t, x) on (0, 2] x R."""
    return action(profile, geodesic_to(profile, t, x), 0.0, float(t))


def hlim_surface(profile, ts, xs):
    """hlim on the tensor grid ``ts x xs``; rows follow ``ts``."""
    ts = np.asarray(ts, dtype=float)
    xs = np.asarray(xs, dtype=float)
    out = np.empty((ts.size, xs.size))
    for i, t in enumerate(ts):
        for j, x in enumerate(xs):
            out[i, j] = hlim_at(profile, t, x)
    return out


def write_hlim_csv(path, ts, xs, values):
    path = Path(path)
    with path.open("w") as fh:
        fh.write("t,x,hlim\n")
        for i, t in enumerate(ts):
            for j, x in enumerate(xs):
                fh.write(f"{t:.17g},{x:.17g},{values[i, j]:.17g}\n")
    return path


def read_hlim_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


# -- dynamic-programming oracle ---------------------------------------------------

def _edge_time_rule(t0, t1, n):
    u, wts = _graded_rule(t0, t1, n) if (t1 <= 1.0 or t0 >= 1.0) else (None, None)
    if u is None:
        ua, wa = _graded_rule(t0, 1.0, n)
        ub, wb = _graded_rule(1.0, t1, n)
        u, wts = np.concatenate([ua, ub]), np.concatenate([wa, wb])
    return u, wts


def dp_oracle(profile, t, x, nt=256, nx=256, X=None, refine=8, potential=None, quad_nodes=3):
    """-min over piecewise-linear paths (0,0) -> (t,x) of int 1/2 v^2 - potential.

    Bellman recursion on ``nt`` time layers and ``nx`` spatial nodes over
    ``[-X, X]``.  Each step minimises over departure points on a sub-lattice
    ``refine`` times finer than the node spacing (values between nodes are
    cubic-spline interpolated), followed by a parabolic polish of the best
    departure point.  The potential cost of every edge is integrated with a
    ``quad_nodes``-point rule in the graded time coordinate.

    ``potential(u, y)`` defaults to devlim.
    """
    t, x = float(t), float(x)
    if nt < 32 or nx < 32:
        raise ValidationError("nt and nx must be >= 32")
    if not (0.0 < t <= 2.0):
        raise ValidationError("t must lie in (0, 2]")
    X = abs(x) + 2.0 if X is None else float(X)
    if X < abs(x) + 2.0:
        raise ValidationError("lattice half-width X must be >= |x| + 2")
    if potential is None:
        def potential(u, y):
            if u <= 0.0 or u >= 2.0:
                return np.zeros_like(y)
            return devlim(profile, u, y)

    dt = t / nt
    xs = np.linspace(-X, X, nx)
    dx = xs[1] - xs[0]
    if abs(x) > X or dx > X:
        raise InfeasibleLatticeError(f"lattice cannot reach ({t}, {x})")

    def pot_cost(t0, y0, y1):
        u, wts = _edge_time_rule(t0, t0 + dt, quad_nodes)
        acc = np.zeros(np.broadcast(y0, y1).shape)
        for ui, wi in zip(u, wts):
            acc += wi * potential(ui, y0 + (y1 - y0) * (ui - t0) / dt)
        return acc

    def edge_cost(t0, y0, y1):
        return 0.5 * (y1 - y0) ** 2 / dt - pot_cost(t0, y0, y1)

    V = edge_cost(0.0, np.zeros_like(xs), xs)
    h = dx / refine
    for k in range(1, nt):
        tk = k * dt
        targets = xs if k < nt - 1 else np.array([x])
        vmax = 2.0 * X / tk + 8.0
        window = min(nx, int(math.ceil(vmax * dt / dx)) + 1)
        offs = np.arange(-window * refine, window * refine + 1) * h
        Y = targets[:, None] - offs[None, :]
        spline = CubicSpline(xs, V)
        valid = (Y >= -X) & (Y <= X)
        Vy = np.where(valid, spline(np.clip(Y, -X, X)), np.inf)
        cost = Vy + edge_cost(tk, Y, targets[:, None])
        best = np.argmin(cost, axis=1)
        rows = np.arange(targets.size)
        c0 = cost[rows, best]
        if not np.all(np.isfinite(c0)):
            raise InfeasibleLatticeError(f"no admissible departure point at layer {k}")
        lo = np.clip(best - 1, 0, offs.size - 1)
        hi = np.clip(best + 1, 0, offs.size - 1)
        cm, cp = cost[rows, lo], cost[rows, hi]
        denom = cm - 2.0 * c0 + cp
        ok = np.isfinite(cm) & np.isfinite(cp) & (denom > 0.0)
        delta = np.where(ok, 0.5 * h * (cm - cp) / np.where(ok, denom, 1.0), 0.0)
        y_star = np.clip(targets - (offs[best] + delta), -X, X)
        c_star = spline(y_star) + edge_cost(tk, y_star, targets)
        V = np.minimum(c0, c_star)
    return -float(V[0])
