"""Monte Carlo Feynman-Kac estimation over backward Brownian bridges.

Random streams: paths are generated in fixed blocks of ``BLOCK`` paths; block
``b`` draws from ``Philox(SeedSequence([seed, b]))``.  An estimate therefore
depends only on (seed, n_paths, n_steps), never on scheduling.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ValidationError
from .pde_solver import heat_kernel

log = logging.getLogger(__name__)

BLOCK = 1024
_ENDPOINT_TOL = 1e-8


def _block_rng(seed, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _check_interval(s, t, n_steps):
    if not (s < t):
        raise ValidationError(f"need s < t, got s={s}, t={t}")
    if n_steps < 2:
        raise ValidationError("n_steps must be >= 2")


@dataclass(frozen=True)
class BridgePath:
    times: np.ndarray  # decreasing, t -> s
    values: np.ndarray  # (n_steps + 1,) or (n_paths, n_steps + 1)
    lam: float


def _bridge_block(rng, n, lam, t, x, s, y, times):
    """n bridges (t, x) -> (s, y) on the decreasing grid ``times``."""
    out = np.empty((n, times.size))
    out[:, 0] = x
    w = np.full(n, float(x))
    for k in range(1, times.size - 1):
        u_prev, u = times[k - 1], times[k]
        frac = (u_prev - u) / (u_prev - s)
        var = (u_prev - u) * (u - s) / ((u_prev - s) * lam)
        w = w + frac * (y - w) + math.sqrt(var) * rng.standard_normal(n)
        out[:, k] = w
    out[:, -1] = y
    return out


def sample_bridges(lam, t, x, s, y, n_steps, n_paths, seed):
    """(times, values) for ``n_paths`` exact bridges by sequential conditioning."""
    _check_interval(s, t, n_steps)
    if not (lam > 0):
        raise ValidationError("lambda must be positive")
    times = np.linspace(t, s, n_steps + 1)
    blocks = []
    for b in range(math.ceil(n_paths / BLOCK)):
        n = min(BLOCK, n_paths - b * BLOCK)
        blocks.append(_bridge_block(_block_rng(seed, b), n, lam, t, x, s, y, times))
    return times, np.vstack(blocks)


def sample_bridge(lam, t, x, s, y, n_steps=512, seed=0):
    """One bridge from (t, x) back to (s, y), pinned exactly at both ends."""
    times, vals = sample_bridges(lam, t, x, s, y, n_steps, 1, seed)
    return BridgePath(times, vals[0], float(lam))


@dataclass(frozen=True)
class FKEstimate:
    mean: float
    std_error: float
    n_paths: int
    log_mean: float
    log_std_error: float = 0.0
    ess: float = 0.0
    precision_loss: bool = False
    n_steps: int = 0
    seed: int = 0
    endpoints: tuple = ()

    def to_json(self):
        d = asdict(self)
        keys = ("mean", "std_error", "log_mean", "n_paths", "n_steps", "seed", "endpoints")
        return json.dumps({k: (list(d[k]) if k == "endpoints" else d[k]) for k in keys}, sort_keys=True)

    def write(self, path):
        Path(path).write_text(self.to_json() + "\n")
        return path


def path_integrals(dev, times, paths):
    """Trapezoidal int dev(u, W(u)) du along each row of ``paths``."""
    vals = dev(np.broadcast_to(times, paths.shape), paths)
    du = np.abs(np.diff(times))
    return 0.5 * ((vals[:, 1:] + vals[:, :-1]) * du).sum(axis=1)


def summarize_exponents(a, lam, n_steps=0, seed=0, endpoints=()):
    """FK statistics from exponents a_i = lam * int dev along path i (log-sum-exp)."""
    n = a.size
    amax = float(np.max(a))
    w = np.exp(a - amax)
    mean_scaled = float(w.mean())
    sd_scaled = float(w.std(ddof=1)) if n > 1 else 0.0
    log_mean_nat = amax + math.log(mean_scaled)
    mean = math.exp(log_mean_nat)
    se = math.exp(amax) * sd_scaled / math.sqrt(n)
    ess = float(w.sum() ** 2 / np.sum(w * w))
    loss = ess < 10.0
    if loss:
        log.warning("effective sample size %.3g < 10: FK estimate may be unreliable", ess)
    return FKEstimate(
        mean=mean,
        std_error=se,
        n_paths=n,
        log_mean=log_mean_nat / lam,
        log_std_error=(sd_scaled / mean_scaled) / math.sqrt(n) / lam,
        ess=ess,
        precision_loss=loss,
        n_steps=n_steps,
        seed=seed,
        endpoints=tuple(endpoints),
    )


def fk_estimate(dev, lam, t, x, s=0.0, y=0.0, n_paths=10000, n_steps=512, seed=0):
    """E[exp(lam int_s^t dev(u, W(u)) du)] for W ~ BB_lam((t, x) -> (s, y))."""
    _check_interval(s, t, n_steps)
    if n_paths < 2:
        raise ValidationError("n_paths must be >= 2")
    a_all = []
    times = np.linspace(t, s, n_steps + 1)
    for b in range(math.ceil(n_paths / BLOCK)):
        n = min(BLOCK, n_paths - b * BLOCK)
        paths = _bridge_block(_block_rng(seed, b), n, lam, t, x, s, y, times)
        a_all.append(lam * path_integrals(dev, times, paths))
    return summarize_exponents(np.concatenate(a_all), lam, n_steps, seed, (s, y, t, x))


def fk_log_h(dev, lam, t, x, **kw):
    """(1/lam) log(p_lam(t, x) * FK) = h_lambda(t, x) by the Feynman-Kac formula."""
    est = fk_estimate(dev, lam, t, x, **kw)
    return math.log(float(heat_kernel(lam, t, x))) / lam + est.log_mean, est


def semigroup_check(dev, lam, t, x, s_mid, n_outer=2000, n_inner=64, n_steps=256, seed=0):
    """Z(t,x)/p(t,x) through an intermediate time (Eq. e.FKformula.stot).

    p(t-s, x-y) p(s, y) = p(t, x) q(y) with q the bridge marginal at s_mid, so
    Z(t,x)/p(t,x) = E_y[ FK(s_mid, y; t, x) FK(0, 0; s_mid, y) ].
    Returns (composed mean, standard error).
    """
    if not (0.0 < s_mid < t):
        raise ValidationError("need 0 < s_mid < t")
    rng = _block_rng(seed, 10**6)
    var = s_mid * (t - s_mid) / (t * lam)
    ys = x * s_mid / t + math.sqrt(var) * rng.standard_normal(n_outer)
    vals = np.empty(n_outer)
    k_hi = max(2, int(round(n_steps * (t - s_mid) / t)))
    k_lo = max(2, n_steps - k_hi)
    for i, yi in enumerate(ys):
        upper = fk_estimate(dev, lam, t, x, s_mid, yi, n_paths=n_inner, n_steps=k_hi, seed=seed * 7919 + 2 * i + 1)
        lower = fk_estimate(dev, lam, s_mid, yi, 0.0, 0.0, n_paths=n_inner, n_steps=k_lo, seed=seed * 7919 + 2 * i + 2)
        vals[i] = upper.mean * lower.mean
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_outer))


# -- Girsanov / Jensen certificate ----------------------------------------------------

def perturbation(u, s, t):
    """phi(u) = (u-s)^{3/4} on [s, (s+t)/2], (t-u)^{3/4} after (Eq. e.perturbation)."""
    u = np.asarray(u, dtype=float)
    mid = 0.5 * (s + t)
    return np.where(u <= mid, np.abs(u - s) ** 0.75, np.abs(t - u) ** 0.75)


@dataclass(frozen=True)
class TiltedBound:
    value: float
    std_error: float
    potential_term: float
    kinetic_term: float
    n_paths: int

    def __float__(self):
        return self.value


def straight_line(s, y, t, x):
    return lambda u: y + (np.asarray(u, dtype=float) - s) * (x - y) / (t - s)


def geodesic_path(profile, geo):
    return lambda u: geo.path(profile, u)


def tilted_lower_bound(dev, lam, s, y, t, x, path, n_paths=4000, n_steps=512, seed=0, a0=None, n_a=8):
    """Right side of Eq. e.girsanov+jensen for the tilt Pi = -path.

    ``path`` is an H^1 path with path(s) = y and path(t) = x (the paper's
    gamma; the Girsanov shift that carries W^0 onto it is Pi = -gamma).
    The bound is

        int E[dev(u, (W^0 + path)(u))] du - 1/2 int path'^2 du + (x - y)^2 / (2 (t - s))

    with W^0 ~ BB_lam((t, 0) -> (s, 0)).  With ``a0`` set, the perturbed
    family path + a phi (Eq. e.perturbation) is averaged over a in [0, a0]
    (midpoint rule, n_a points, common random numbers).
    """
    _check_interval(s, t, n_steps)
    for u_end, target in ((s, y), (t, x)):
        got = float(np.asarray(path(np.array([u_end])))[0])
        if abs(got - target) > _ENDPOINT_TOL * max(1.0, abs(target)):
            raise ContractError(f"tilt path({u_end}) = {got} but the endpoint requires {target}")
    times, w0 = sample_bridges(lam, t, 0.0, s, 0.0, n_steps, n_paths, seed)
    base = np.asarray(path(times), dtype=float)
    phi = perturbation(times, s, t)
    a_values = [0.0] if a0 is None else list((np.arange(n_a) + 0.5) * (a0 / n_a))
    pot = np.zeros(n_paths)
    kin = 0.0
    for a in a_values:
        g = base + a * phi
        pot += path_integrals(dev, times, w0 + g[None, :])
        kin += 0.5 * float(np.sum(np.diff(g) ** 2 / np.abs(np.diff(times))))
    pot /= len(a_values)
    kin /= len(a_values)
    free = (x - y) ** 2 / (2.0 * (t - s))
    value = float(pot.mean()) - kin + free
    return TiltedBound(value, float(pot.std(ddof=1) / math.sqrt(n_paths)), float(pot.mean()), kin, n_paths)
