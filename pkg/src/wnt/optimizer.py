"""Finite-lambda minimiser of 1/2 ||dev||^2 subject to h_lambda[dev](2, 0) = -1.

Stationary points solve the Hamilton system: dev = mu * rho, where rho is the
backward Fokker-Planck density driven by h_x with unit delta at (2, 0).  Each
sweep solves h given dev, then rho given h, relaxes dev towards mu * rho and
chooses mu (bracketed root-finding) so the relaxed iterate meets the
constraint exactly.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, InfeasibleMultiplierError, NonConvergenceError, ValidationError
from .fields import Field, Potential, sample_devlim
from .limit_shape import build_lens_profile
from .pde_solver import SolverOptions, solve_adjoint_full, solve_forward_h

log = logging.getLogger(__name__)

TARGET = -1.0


@dataclass(frozen=True)
class MinimizerOptions:
    nt: int = 256
    nx: int = 256
    L: float = 4.0
    t0: float = 0.01
    omega: float = 0.3
    max_iter: int = 200
    tol: float = 1e-3
    mu_max0: float = 0.5
    mu_cap: float = 1e4
    warm_start: str = "devlim"  # or "zero"

    def validate(self):
        if self.nt < 16 or self.nx < 16:
            raise ValidationError("grid must be at least 16 x 16")
        if not (0.0 < self.omega <= 1.0):
            raise ValidationError("omega must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be positive")
        if not (self.tol > 0.0):
            raise ValidationError("tol must be positive")
        if self.warm_start not in ("devlim", "zero"):
            raise ValidationError("warm_start must be 'devlim' or 'zero'")
        SolverOptions(t0=self.t0).validate()
        return self


@dataclass
class TraceRow:
    iteration: int
    objective: float
    residual: float
    update_norm: float
    mu: float


@dataclass
class MinimizerResult:
    dev: Potential
    field: Field
    mu: float
    constraint_residual: float
    objective: float
    iterations: int
    trace: list = field(default_factory=list)
    lam: float = float("nan")
    options: MinimizerOptions | None = None
    runtime_s: float = 0.0

    @property
    def target_ratio(self):
        """exp(lam h(2,0)) / e^{-lam}."""
        return math.exp(self.lam * (self.field.at_origin() - TARGET))

    # -- result bundle --------------------------------------------------------------
    def save(self, directory, seed=None):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.dev.to_csv(d / "dev.csv")
        self.field.to_csv(d / "h.csv")
        with (d / "trace.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "residual", "update_norm", "mu"])
            for r in self.trace:
                w.writerow([r.iteration, repr(r.objective), repr(r.residual), repr(r.update_norm), repr(r.mu)])
        opts = self.options or MinimizerOptions()
        meta = {
            "lambda": self.lam,
            "mu": self.mu,
            "objective": self.objective,
            "residual": self.constraint_residual,
            "iterations": self.iterations,
            "grid": {"nt": self.dev.nt, "nx": self.dev.nx, "L": self.dev.L, "t0": self.field.t0},
            "options": asdict(opts),
            "seed": seed,
        }
        (d / "result.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return d

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = json.loads((d / "result.json").read_text())
        dev = Potential.from_csv(d / "dev.csv")
        fld = Field.from_csv(d / "h.csv", lam=meta["lambda"])
        trace = []
        with (d / "trace.csv").open() as fh:
            for row in csv.DictReader(fh):
                trace.append(
                    TraceRow(int(row["iteration"]), float(row["objective"]), float(row["residual"]),
                             float(row["update_norm"]), float(row["mu"]))
                )
        return cls(
            dev=dev, field=fld, mu=meta["mu"], constraint_residual=meta["residual"],
            objective=meta["objective"], iterations=meta["iterations"], trace=trace,
            lam=meta["lambda"], options=MinimizerOptions(**meta["options"]),
        )


def objective(dev):
    """1/2 * (discrete L^2 norm)^2."""
    return 0.5 * dev.norm() ** 2


_DEVLIM_CACHE = {}


def devlim_on_grid(profile, nt, nx, L):
    key = (id(profile), nt, nx, L)
    if key not in _DEVLIM_CACHE:
        _DEVLIM_CACHE[key] = sample_devlim(profile, nt, nx, L)
    return _DEVLIM_CACHE[key]


def l2_gap(dev, profile):
    """Discrete ||dev - devlim|| with devlim in its energy-preserving sampling."""
    ref = devlim_on_grid(profile, dev.nt, dev.nx, dev.L)
    return dev.like(dev.values - ref.values).norm()


def check_lambda(lam):
    if not (lam >= 1.0):
        raise ValidationError(f"lambda must be >= 1, got {lam}")
    log_p = math.log(lam / (4.0 * math.pi)) / 2.0  # log p_lam(2, 0)
    if -lam >= log_p:
        raise DomainError(
            f"e^-lambda >= p_lambda(2,0) at lambda={lam}: the free solution already lies below the target"
        )


def _h_origin(dev, lam, sopts):
    return solve_forward_h(dev, lam, sopts).at_origin()


def _solve_mu(F, mu_guess, mu_max0, cap):
    """Root of the increasing-in-(-mu) residual F on mu <= 0."""
    f0 = F(0.0)
    if f0 <= 0.0:
        return 0.0, f0
    if mu_guess < 0.0:
        lo, hi = 1.25 * mu_guess, 0.8 * mu_guess
        f_hi = F(hi)
        if f_hi > 0.0:
            f_lo = F(lo)
            if f_lo < 0.0:
                mu = brentq(F, lo, hi, xtol=1e-9, rtol=1e-10)
                return mu, F(mu)
        else:
            lo2 = hi
            hi2 = 0.0
            mu = brentq(F, lo2, hi2, xtol=1e-9, rtol=1e-10)
            return mu, F(mu)
    m = mu_max0
    while m <= cap:
        if F(-m) < 0.0:
            mu = brentq(F, -m, 0.0, xtol=1e-9, rtol=1e-10)
            return mu, F(mu)
        m *= 2.0
    raise InfeasibleMultiplierError(f"no multiplier in [-{cap:g}, 0] reaches the constraint")


def competitor_scale(profile, lam, opts=None):
    """c > 0 with h[c * devlim](2, 0) = -1 (the devlim-projected feasible competitor)."""
    opts = (opts or MinimizerOptions()).validate()
    base = devlim_on_grid(profile, opts.nt, opts.nx, opts.L)
    sopts = SolverOptions(t0=opts.t0)

    def F(c):
        return _h_origin(base.like(c * base.values), lam, sopts) - TARGET

    hi = 1.0
    while F(hi) > 0.0:
        hi *= 2.0
        if hi > 1e4:
            raise InfeasibleMultiplierError("no scaling of devlim meets the constraint")
    c = brentq(F, 0.0, hi, xtol=1e-9)
    return c, base.like(c * base.values)


def solve_minimizer(lam, opts=None, profile=None, raise_on_failure=True, **kw):
    """Damped forward-backward sweeps with a shooting multiplier."""
    opts = (opts or MinimizerOptions(**kw)).validate()
    lam = float(lam)
    check_lambda(lam)
    started = time.perf_counter()
    profile = profile or build_lens_profile()
    sopts = SolverOptions(t0=opts.t0)
    if opts.warm_start == "devlim":
        dev = devlim_on_grid(profile, opts.nt, opts.nx, opts.L)
        dev = dev.like(dev.values.copy())
    else:
        dev = Potential.zeros(opts.nt, opts.nx, opts.L)

    trace = []
    mu = 0.0
    fld = solve_forward_h(dev, lam, sopts)
    for it in range(1, opts.max_iter + 1):
        rho = -solve_adjoint_full(fld, lam, -1.0, dev).potential.values
        base = (1.0 - opts.omega) * dev.values
        step = opts.omega * rho

        def F(m):
            return _h_origin(dev.like(base + m * step), lam, sopts) - TARGET

        mu, res = _solve_mu(F, mu, opts.mu_max0, opts.mu_cap)
        new = dev.like(base + mu * step)
        ref = max(dev.norm(), 1e-300)
        upd = dev.like(new.values - dev.values).norm() / ref
        dev = new
        fld = solve_forward_h(dev, lam, sopts)
        res = abs(fld.at_origin() - TARGET)
        trace.append(TraceRow(it, objective(dev), res, upd, mu))
        log.info("lam=%g it=%d obj=%.6g res=%.3g upd=%.3g mu=%.6g", lam, it, objective(dev), res, upd, mu)
        if max(upd, res) < opts.tol:
            break
    else:
        result = MinimizerResult(dev, fld, mu, res, objective(dev), it, trace, lam, opts,
                                 time.perf_counter() - started)
        if raise_on_failure:
            err = NonConvergenceError(f"no convergence in {opts.max_iter} iterations", trace=trace)
            err.result = result
            raise err
        return result
    return MinimizerResult(dev, fld, mu, res, objective(dev), it, trace, lam, opts, time.perf_counter() - started)
