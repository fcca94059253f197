"""Finite-lambda Hamilton system: forward viscous HJ, backward Fokker-Planck.

The forward unknown is split as h = h_free + u with the exact log heat kernel

    h_free(t, x) = -x^2/(2t) + (1/(2 lam)) log(lam / (2 pi t)),

so the scheme advances the bounded correction u from its initial layer
(``initial_layer``: the first cumulant of Eq. e.FKformula over [0, t0]):

    u_t = nu u_xx + 1/2 (u_x + b)^2 - 1/2 b^2 + dev,   b = -x/t,  nu = 1/(2 lam).

The square-gradient term uses a Godunov flux on ENO2 one-sided slopes
(both evaluated on u and shifted by the exact b), advanced by SSP-RK2; the
diffusion is backward Euler on interior nodes.  With dev = 0 the discrete
update returns u = 0 exactly, so the heat kernel is reproduced to rounding.
At x = +-L the ghost values are quadratic extrapolations of u; the far-field
characteristics leave the box there, so no inflow data is needed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import gammaln, logsumexp

from .errors import DivergenceError, StepSizeError, ValidationError
from .fields import T_FINAL, Field, Potential

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    t0: float = 0.01
    cfl: float = 0.4
    n_steps: int | None = None  # fixed step count; None = CFL-adaptive
    max_steps: int = 200_000
    n_out: int | None = None  # output time rows; default dev.nt

    def validate(self):
        if not (0.0 < self.t0 <= 0.05):
            raise ValidationError(f"t0 must lie in (0, 0.05], got {self.t0}")
        if not (0.0 < self.cfl <= 1.0):
            raise ValidationError("cfl must lie in (0, 1]")
        if self.n_steps is not None and self.n_steps < 1:
            raise ValidationError("n_steps must be positive")
        if self.n_out is not None and self.n_out < 2:
            raise ValidationError("n_out must be >= 2")
        return self


def free_log_kernel(lam, t, x):
    t = np.asarray(t, dtype=float)
    return -np.asarray(x) ** 2 / (2.0 * t) + np.log(lam / (2.0 * math.pi * t)) / (2.0 * lam)


def heat_kernel(lam, t, x):
    """Scaled heat kernel p_lam(t, x) = sqrt(lam/(2 pi t)) exp(-lam x^2/(2t))."""
    return np.exp(lam * free_log_kernel(lam, t, x))


# -- initial layer on [0, t0] ------------------------------------------------------

_LAYER_S, _LAYER_WS = np.polynomial.legendre.leggauss(16)
_LAYER_Z, _LAYER_WZ = np.polynomial.hermite_e.hermegauss(10)
_LAYER_WZ = _LAYER_WZ / _LAYER_WZ.sum()


def _layer_nodes(lam, t0, x):
    """Quadrature for E int_0^t0 dev(s, W(s)) ds, W a bridge (0,0) -> (t0, x).

    Returns (s, y, w) with s, w of shape (q,) and y of shape (q, nx); the weights
    absorb ds and the Gaussian law of W(s) ~ N(x s/t0, s (t0 - s) / (lam t0)).
    """
    s = 0.5 * t0 * (_LAYER_S + 1.0)
    ws = 0.5 * t0 * _LAYER_WS
    sd = np.sqrt(s * (t0 - s) / (lam * t0))
    S = np.repeat(s, _LAYER_Z.size)
    W = np.outer(ws, _LAYER_WZ).ravel()
    Y = (s[:, None] / t0 * x[None, :])[:, None, :] + (sd[:, None] * _LAYER_Z[None, :])[:, :, None]
    return S, Y.reshape(S.size, x.size), W


def initial_layer(dev, lam, t0):
    """u(t0, x) = E[int_0^t0 dev(s, W(s)) ds] over the bridge (0,0) -> (t0, x).

    The first cumulant of the Feynman-Kac exponent on the initial layer: the
    omitted terms are O(lam * Var), and the bridge variance is below t0 / (4 lam).
    Without it the forward model would ignore dev on [0, t0] entirely, which
    matters for devlim (of size t^(-2/3) on the lens at small t).
    """
    S, Y, W = _layer_nodes(float(lam), float(t0), dev.x)
    vals = dev(np.broadcast_to(S[:, None], Y.shape), Y)
    return W @ vals


def _layer_adjoint(dev_like, lam, t0, rho):
    """Transpose of ``initial_layer``: deposits rho(t0, .) dx onto the lattice values."""
    x, dx, dt, nt, nx, L = dev_like.x, dev_like.dx, dev_like.dt, dev_like.nt, dev_like.nx, dev_like.L
    S, Y, W = _layer_nodes(float(lam), float(t0), x)
    g = np.zeros((nt, nx))
    sk = np.clip(S / dt - 0.5, 0.0, nt - 1)
    k = np.minimum(sk.astype(np.intp), nt - 2)
    ft = sk - k
    q = (Y + L) / dx
    inside = (q >= 0.0) & (q <= nx - 1)
    qc = np.clip(q, 0.0, nx - 1)
    j = np.minimum(qc.astype(np.intp), nx - 2)
    fx = qc - j
    base = np.where(inside, W[:, None] * (rho * dx)[None, :], 0.0)
    K = np.broadcast_to(k[:, None], Y.shape)
    FT = np.broadcast_to(ft[:, None], Y.shape)
    for dk, wt in ((0, 1.0 - FT), (1, FT)):
        for dj, wx in ((0, 1.0 - fx), (1, fx)):
            np.add.at(g, (K + dk, j + dj), base * wt * wx)
    return g / (dt * dx)


# -- forward HJ -------------------------------------------------------------------

def _extend(u):
    """Two quadratic-extrapolation ghost nodes on each side."""
    n = u.size
    ue = np.empty(n + 4)
    ue[2:-2] = u
    ue[1] = 3 * u[0] - 3 * u[1] + u[2]
    ue[0] = 3 * ue[1] - 3 * u[0] + u[1]
    ue[-2] = 3 * u[-1] - 3 * u[-2] + u[-3]
    ue[-1] = 3 * ue[-2] - 3 * u[-1] + u[-2]
    return ue


def _eno_slopes(u, dx):
    ue = _extend(u)
    d1 = np.diff(ue) / dx  # d1[k] between ext k and k+1
    d2 = (ue[2:] - 2 * ue[1:-1] + ue[:-2]) / dx**2  # d2[m] at ext m+1
    # node i is ext i+2: left pair d2[i], d2[i+1]; right pair d2[i+1], d2[i+2]
    a, b, c = d2[:-2], d2[1:-1], d2[2:]
    mm_l = np.where(np.abs(a) < np.abs(b), a, b)
    mm_r = np.where(np.abs(b) < np.abs(c), b, c)
    dm = d1[1:-2] + 0.5 * dx * mm_l
    dp = d1[2:-1] - 0.5 * dx * mm_r
    return dm, dp


def _godunov_half_square(qm, qp):
    """1/2 G^2 for the concave numerical Hamiltonian of u_t - 1/2 q^2."""
    sq_m, sq_p = qm * qm, qp * qp
    rising = 0.5 * np.maximum(sq_m, sq_p)
    falling = np.where((qp <= 0.0) & (qm >= 0.0), 0.0, 0.5 * np.minimum(sq_m, sq_p))
    return np.where(qm <= qp, rising, falling)


class _ForwardStepper:
    def __init__(self, dev, lam, opts):
        self.dev, self.lam, self.opts = dev, lam, opts
        self.x = dev.x
        self.dx = dev.dx
        self.nu = 1.0 / (2.0 * lam)

    def rhs(self, u, t):
        dm, dp = _eno_slopes(u, self.dx)
        b = -self.x / t
        qm, qp = dm + b, dp + b
        return _godunov_half_square(qm, qp) - 0.5 * b * b + self.dev.row(t), max(
            float(np.max(np.abs(qm))), float(np.max(np.abs(qp)))
        )

    def max_speed(self, u, t):
        dm, dp = _eno_slopes(u, self.dx)
        b = -self.x / t
        return max(float(np.max(np.abs(dm + b))), float(np.max(np.abs(dp + b))), 1e-12)

    def diffuse(self, u, dt):
        alpha = self.nu * dt / self.dx**2
        m = u.size - 2
        ab = np.empty((3, m))
        ab[0] = -alpha
        ab[1] = 1.0 + 2.0 * alpha
        ab[2] = -alpha
        rhs = u[1:-1].copy()
        rhs[0] += alpha * u[0]
        rhs[-1] += alpha * u[-1]
        out = u.copy()
        out[1:-1] = solve_banded((1, 1), ab, rhs)
        return out

    def step(self, u, t, dt):
        k1, _ = self.rhs(u, t)
        u1 = u + dt * k1
        k2, _ = self.rhs(u1, t + dt)
        u2 = 0.5 * (u + u1 + dt * k2)
        if not np.all(np.isfinite(u2)):
            return u2  # reported by _check_finite
        return self.diffuse(u2, dt)


def _check_finite(u, t, x):
    bad = ~np.isfinite(u) | (np.abs(u) > 1e8)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DivergenceError(f"forward solve diverged at t={t:.6g}, x={x[i]:.6g}", node=(float(t), float(x[i])))


def solve_forward_h(dev, lam, opts=None, **kw):
    """Forward viscous HJ solve for h_lambda driven by ``dev`` on [t0, 2]."""
    opts = (opts or SolverOptions(**kw)).validate()
    if not isinstance(dev, Potential):
        raise ValidationError("dev must be a Potential")
    if not (lam >= 1.0):
        raise ValidationError(f"lambda must be >= 1, got {lam}")
    if dev.nx < 8:
        raise ValidationError("need at least 8 spatial nodes")
    st = _ForwardStepper(dev, float(lam), opts)
    n_out = opts.n_out or dev.nt
    t_out = np.linspace(opts.t0, T_FINAL, n_out)
    x = st.x

    u = initial_layer(dev, lam, opts.t0)
    t = opts.t0
    _check_finite(u, t, x)
    traj_t, traj_u = [t], [u.copy()]
    rows = [u.copy()]
    fixed_dt = None if opts.n_steps is None else (T_FINAL - opts.t0) / opts.n_steps
    steps = 0
    for t_next in t_out[1:]:
        while t < t_next - 1e-14:
            vmax = st.max_speed(u, t)
            dt_cfl = opts.cfl * st.dx / vmax
            if fixed_dt is not None:
                dt = min(fixed_dt, t_next - t)
                if dt > dt_cfl * (1.0 + 1e-9):
                    raise StepSizeError(
                        f"fixed step {fixed_dt:.3g} violates the CFL bound {dt_cfl:.3g} at t={t:.4g}"
                    )
            else:
                dt = min(dt_cfl, t_next - t)
            u = st.step(u, t, dt)
            t = t_next if abs(t + dt - t_next) < 1e-13 else t + dt
            _check_finite(u, t, x)
            traj_t.append(t)
            traj_u.append(u.copy())
            steps += 1
            if steps > opts.max_steps:
                raise StepSizeError(f"more than {opts.max_steps} steps required")
        rows.append(u.copy())
    T, X = np.meshgrid(t_out, x, indexing="ij")
    h = np.asarray(rows) + free_log_kernel(lam, T, X)
    log.debug("forward solve lam=%g: %d steps", lam, steps)
    return Field(h, lam=float(lam), t0=opts.t0, L=dev.L, trajectory=(np.asarray(traj_t), np.asarray(traj_u)))


# -- Cole-Hopf alternative --------------------------------------------------------

def solve_forward_z(dev, lam, t0=0.01, n_steps=None, n_out=None):
    """Linear Z-equation by Strang splitting with exact Gaussian diffusion.

    Z_t = nu Z_xx + lam dev Z, carried in log form (log-sum-exp convolution).
    Independent of the HJ scheme; used for Cole-Hopf consistency checks.
    The step is chosen so the diffusion kernel spans >= 1.5 dx, which keeps the
    trapezoidal convolution spectrally accurate.
    """
    if not (lam > 0):
        raise ValidationError("lambda must be positive")
    x, dx = dev.x, dev.dx
    nu = 1.0 / (2.0 * lam)
    if n_steps is None:
        dt_min = (1.5 * dx) ** 2 / (2.0 * nu)
        n_steps = max(200, int(math.ceil((T_FINAL - t0) / max(dt_min, 1e-12) / 4)))
        n_steps = min(n_steps, int((T_FINAL - t0) / dt_min)) if dt_min > 0 else n_steps
        n_steps = max(n_steps, 50)
    dt = (T_FINAL - t0) / n_steps
    var = 2.0 * nu * dt
    logK = -((x[:, None] - x[None, :]) ** 2) / (2.0 * var) - 0.5 * math.log(2 * math.pi * var) + math.log(dx)
    n_out = n_out or dev.nt
    t_out = np.linspace(t0, T_FINAL, n_out)
    t_grid = t0 + dt * np.arange(n_steps + 1)

    logZ = lam * (free_log_kernel(lam, t0, x) + initial_layer(dev, lam, t0))
    snaps = [logZ.copy()]
    for k in range(n_steps):
        t = t_grid[k]
        logZ = logZ + 0.5 * dt * lam * dev.row(t)
        logZ = logsumexp(logK + logZ[None, :], axis=1)
        logZ = logZ + 0.5 * dt * lam * dev.row(t + dt)
        snaps.append(logZ.copy())
    snaps = np.asarray(snaps)
    # linear interpolation of log Z onto the output times
    vals = np.empty((n_out, x.size))
    for i, tt in enumerate(t_out):
        s = min((tt - t0) / dt, n_steps)
        k = min(int(s), n_steps - 1)
        f = s - k
        vals[i] = (1 - f) * snaps[k] + f * snaps[k + 1]
    return Field(vals / lam, lam=float(lam), t0=t0, L=dev.L)


# -- backward Fokker-Planck adjoint --------------------------------------------------

def _trajectory_of(h):
    if h.trajectory is not None:
        return h.trajectory
    T, X = np.meshgrid(h.t, h.x, indexing="ij")
    return h.t, h.values - free_log_kernel(h.lam, T, X)


def _neumann_diffusion(rho, alpha):
    n = rho.size
    ab = np.empty((3, n))
    ab[0] = -alpha
    ab[2] = -alpha
    ab[1] = 1.0 + 2.0 * alpha
    ab[1, 0] = ab[1, -1] = 1.0 + alpha
    return solve_banded((1, 1), ab, rho)


def terminal_delta(x, dx):
    """Discrete delta at x = 0: the adjoint of linear interpolation at 0."""
    w = np.zeros(x.size)
    q = (0.0 - x[0]) / dx
    j = min(int(math.floor(q)), x.size - 2)
    f = q - j
    w[j] += (1.0 - f) / dx
    w[j + 1] += f / dx
    return w


@dataclass
class AdjointResult:
    potential: Potential
    mass: np.ndarray  # spatial integral at every substep (t ascending)
    times: np.ndarray


def solve_adjoint_full(h, lam, mu, dev_like, cfl_max=1.0):
    """Backward FP from mu * delta_0 at t = 2 down to t0, conservative upwind.

    Returns the cell-averaged potential on ``dev_like``'s lattice together with
    the per-substep mass record.  Cells below t0 receive the transpose of
    ``initial_layer`` applied to the density at t0.
    """
    if mu > 0:
        raise ValidationError("mu must be <= 0")
    if h.values.shape[1] != dev_like.nx or h.L != dev_like.L:
        raise ValidationError("field and potential lattices differ")
    x, dx = dev_like.x, dev_like.dx
    nu = 1.0 / (2.0 * lam)
    times, us = _trajectory_of(h)
    n = x.size

    rho = mu * terminal_delta(x, dx)
    rhos = [rho.copy()]
    sub_t = [times[-1]]
    for j in range(len(times) - 1, 0, -1):
        s_hi, s_lo = times[j], times[j - 1]
        hj = us[j] + free_log_kernel(lam, s_hi, x)
        v = np.diff(hj) / dx
        vp, vm = np.maximum(v, 0.0), np.minimum(v, 0.0)
        out_rate = np.zeros(n)
        out_rate[:-1] += vp
        out_rate[1:] -= vm
        courant = (s_hi - s_lo) * float(np.max(out_rate)) / dx
        if courant > 50 * cfl_max:
            raise StepSizeError(f"adjoint drift CFL {courant:.3g} at t={s_hi:.4g}")
        m = max(1, int(math.ceil(courant / cfl_max)))
        dtau = (s_hi - s_lo) / m
        for _ in range(m):
            flux = vp * rho[:-1] + vm * rho[1:]
            div = np.zeros(n)
            div[:-1] += flux
            div[1:] -= flux
            rho = rho - dtau / dx * div
            rho = _neumann_diffusion(rho, nu * dtau / dx**2)
        rhos.append(rho.copy())
        sub_t.append(s_lo)
    sub_t = np.asarray(sub_t[::-1])
    rhos = np.asarray(rhos[::-1])
    mass = rhos.sum(axis=1) * dx

    # [0, t0]: exact transpose of the initial layer; above t0: cell averages over
    # [k dt, (k+1) dt] of rho, piecewise linear in time between substeps
    nt, dtc = dev_like.nt, dev_like.dt
    acc = _layer_adjoint(dev_like, lam, sub_t[0], rhos[0]) * dtc
    edges = np.arange(nt + 1) * dtc
    for j in range(len(sub_t) - 1):
        a, b = sub_t[j], sub_t[j + 1]
        if b <= a:
            continue
        ka = min(int(a / dtc), nt - 1)
        kb = min(int(b / dtc), nt - 1)
        for k in range(ka, kb + 1):
            lo, hi = max(a, edges[k]), min(b, edges[k + 1])
            if hi <= lo:
                continue
            # exact integral of the linear interpolant on [lo, hi]
            fa, fb = (lo - a) / (b - a), (hi - a) / (b - a)
            wmid = 0.5 * (fa + fb)
            acc[k] += (hi - lo) * ((1 - wmid) * rhos[j] + wmid * rhos[j + 1])
    return AdjointResult(Potential(acc / dtc, dev_like.L), mass, sub_t)


def solve_adjoint(h, lam, mu, dev_like=None, **kw):
    """Backward Fokker-Planck adjoint; returns the spacetime potential."""
    if dev_like is None:
        nt = kw.pop("nt", h.values.shape[0])
        dev_like = Potential.zeros(nt, h.values.shape[1], h.L)
    return solve_adjoint_full(h, lam, mu, dev_like, **kw).potential


# -- Duhamel series oracle -----------------------------------------------------------

@dataclass(frozen=True)
class DuhamelResult:
    value: float
    tail_bound: float
    terms: tuple
    std_errors: tuple
    std_error: float
    diverged: bool = False


def duhamel_tail_bound(norm, t, lam, n_max, p_value, n_terms=200):
    """Sum over n > n_max of the Eq. e.Inbd bound, rescaled from lambda = 1.

    Z_lam[dev](t, x) = lam * Z_1[dev'](lam t, lam x) with
    dev'(s, y) = dev(s/lam, y/lam), whose L^2 norm is lam * ||dev||.
    """
    q = 2.0**-0.5 * (lam * t) ** 0.25 * lam * norm
    if q == 0.0:
        return 0.0, False
    logs = []
    # terms peak near n ~ q^(4/3); run well past the peak
    if math.log(q) > 12.0:  # peak term ~ exp(q^(4/3)) overflows long before this
        return math.inf, True
    n_terms = max(n_terms, int(4.0 * q ** (4.0 / 3.0)) + 50)
    for n in range(n_max + 1, n_max + 1 + n_terms):
        logs.append(0.25 * math.log(math.pi) - 0.5 * (gammaln(n + 1) + gammaln(0.5 * (n + 1))) + n * math.log(q))
        if len(logs) > 1 and logs[-1] < logs[-2] and logs[-1] < max(logs) - 41.5:
            break
    log_total = float(logsumexp(logs)) + math.log(p_value)
    if log_total > 709.0:
        return math.inf, True
    total = math.exp(log_total)
    return total, False


def duhamel_partial_sum(dev, t, x, n_max=3, mc_samples=20000, seed=0, lam=1.0, norm_t=None):
    """p(t,x) + sum_{n <= n_max} I_n(t,x) by Monte Carlo, plus the analytic tail bound.

    I_n = p(t,x) lam^n E[ int_{simplex} prod dev(u_i, W(u_i)) du ] where W is the
    lam-scaled Brownian bridge (0,0) -> (t,x): every chain of heat kernels in
    Eq. e.she.In factorises into p(t,x) times bridge finite-dimensional laws.
    Each sample draws n sorted uniform times (simplex volume t^n/n!) and the
    bridge at those times by sequential Gaussian conditioning.
    """
    if not (0 <= n_max <= 4):
        raise ValidationError("n_max must lie in [0, 4]")
    if mc_samples < 2:
        raise ValidationError("mc_samples must be >= 2")
    if not (0.0 < t <= T_FINAL):
        raise ValidationError("t must lie in (0, 2]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD0]))
    p = float(heat_kernel(lam, t, x))
    terms, ses = [p], [0.0]
    for n in range(1, n_max + 1):
        u = np.sort(rng.uniform(0.0, t, size=(mc_samples, n)), axis=1)
        prod = np.ones(mc_samples)
        prev_t = np.zeros(mc_samples)
        prev_y = np.zeros(mc_samples)
        for i in range(n):
            ui = u[:, i]
            # bridge from (prev_t, prev_y) to (t, x): Gaussian at ui
            frac = (ui - prev_t) / (t - prev_t)
            mean = prev_y + frac * (x - prev_y)
            var = (ui - prev_t) * (t - ui) / ((t - prev_t) * lam)
            yi = mean + np.sqrt(np.maximum(var, 0.0)) * rng.standard_normal(mc_samples)
            prod *= dev(ui, yi)
            prev_t, prev_y = ui, yi
        scale = p * lam**n * t**n / math.factorial(n)
        vals = scale * prod
        terms.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / math.sqrt(mc_samples)))
    norm = dev.norm(t if norm_t is None else norm_t)
    tail, diverged = duhamel_tail_bound(norm, t, lam, n_max, p)
    if diverged:
        log.warning("Duhamel tail bound diverges (||dev|| = %g)", norm)
    return DuhamelResult(
        value=float(sum(terms)),
        tail_bound=tail,
        terms=tuple(terms),
        std_errors=tuple(ses),
        std_error=float(math.sqrt(sum(s * s for s in ses))),
        diverged=diverged,
    )
