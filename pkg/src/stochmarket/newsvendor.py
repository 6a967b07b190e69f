"""Closed-form risk-averse pre-commitment quantiles and a brute-force newsvendor oracle.

A generator that pre-commits x and is later dispatched at X* pays r_u per MW
of shortfall (X* > x) and r_v per MW of surplus (X* < x). This is a newsvendor
with emergency order cost e = c + r_u and salvage value s = c - r_v.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EmpiricalDistribution, pseudoinverse_cdf
from .risk import RiskSpec, rho_disutility

NO_TRADING = "no-trading"
WITH_TRADING = "with-trading"
MODES = (NO_TRADING, WITH_TRADING)


@dataclass(frozen=True)
class NewsvendorParams:
    e: float  # emergency order cost per unit
    s: float  # salvage value per unit
    p: float  # sale price per unit
    c: float  # ordering cost per unit

    def __post_init__(self):
        if not self.e > self.c > self.s:
            raise ValueError("need e > c > s")

    @property
    def r_u(self) -> float:
        return self.e - self.c

    @property
    def r_v(self) -> float:
        return self.c - self.s

    @classmethod
    def from_deviation_costs(cls, r_u, r_v, c, p=None):
        return cls(e=c + r_u, s=c - r_v, p=c + r_u if p is None else p, c=c)

    def profit(self, x, demand):
        """p*D - c*x + s*(x - D)+ - e*(D - x)+."""
        d = np.asarray(demand, dtype=float)
        return self.p * d - self.c * x + self.s * np.maximum(x - d, 0) - self.e * np.maximum(d - x, 0)


@dataclass(frozen=True)
class RiskCoefficients:
    kappa: float
    beta_bar: float

    def __post_init__(self):
        if not 0.0 < self.beta_bar <= 1.0:
            raise ValueError("beta_bar must lie in (0, 1]")
        if self.kappa < 0 or self.kappa > (1.0 / self.beta_bar) * (1 + 1e-12):
            raise ValueError(f"kappa {self.kappa} outside [0, 1/beta_bar]")

    @classmethod
    def of(cls, spec: RiskSpec):
        return cls(spec.kappa, spec.beta_bar)

    @property
    def alpha(self) -> float:
        return 1.0 / (1.0 + self.kappa * (1.0 - self.beta_bar))


def _check(r_u, r_v, kappa, beta_bar):
    if r_u < 0 or r_v < 0 or r_u + r_v <= 0:
        raise ValueError("deviation costs must be nonnegative with a positive sum")
    RiskCoefficients(kappa, beta_bar)


def precommit_quantile_no_trading(r_u, r_v, kappa, beta_bar) -> float:
    _check(r_u, r_v, kappa, beta_bar)
    return r_u / ((r_u + r_v) * (1.0 + kappa * (1.0 - beta_bar)))


def precommit_quantile_with_trading(r_u, r_v, kappa, beta_bar) -> float:
    _check(r_u, r_v, kappa, beta_bar)
    k = kappa * (1.0 - beta_bar)
    return (r_u + (r_u + r_v) * k) / ((r_u + r_v) * (1.0 + k))


def precommit_quantile(r_u, r_v, kappa, beta_bar, mode) -> float:
    if mode == NO_TRADING:
        return precommit_quantile_no_trading(r_u, r_v, kappa, beta_bar)
    if mode == WITH_TRADING:
        return precommit_quantile_with_trading(r_u, r_v, kappa, beta_bar)
    raise ValueError(f"unknown mode {mode!r}")


def closed_form_precommit(dist: EmpiricalDistribution, r_u, r_v, spec: RiskSpec, mode) -> float:
    return pseudoinverse_cdf(dist, precommit_quantile(r_u, r_v, spec.kappa, spec.beta_bar, mode))


def candidate_grid(dist: EmpiricalDistribution) -> np.ndarray:
    sup = dist.support
    return np.sort(np.concatenate([sup, 0.5 * (sup[:-1] + sup[1:])]))


def precommit_objective(x, dist, r_u, r_v, spec: RiskSpec, mode, margin=None, unit_cost=None) -> float:
    """Risk-adjusted disutility of pre-committing x against dispatch distribution dist.

    no-trading: the generator's own profit margin*X - r_u (X-x)+ - r_v (x-X)+,
    margin defaulting to r_u (price at the ramp-up level).
    with-trading: system cost unit_cost*X + r_u (X-x)+ + r_v (x-X)+ with zero
    sale price, unit_cost defaulting to r_v (zero salvage value).
    """
    X = dist.support
    short = np.maximum(X - x, 0.0)
    surplus = np.maximum(x - X, 0.0)
    if mode == NO_TRADING:
        m = r_u if margin is None else margin
        payoff = m * X - r_u * short - r_v * surplus
    elif mode == WITH_TRADING:
        c = r_v if unit_cost is None else unit_cost
        payoff = -(c * X + r_u * short + r_v * surplus)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return rho_disutility(payoff, dist.probs, spec)


def brute_force_argmin(dist, r_u, r_v, spec, mode, margin=None, unit_cost=None, rtol=1e-9):
    if len(dist.support) == 0:
        raise ValueError("empty support")
    grid = candidate_grid(dist)
    vals = np.array([precommit_objective(x, dist, r_u, r_v, spec, mode, margin, unit_cost) for x in grid])
    best = vals.min()
    return grid[vals <= best + rtol * (1.0 + abs(best))]


def brute_force_precommit(dist, r_u, r_v, spec: RiskSpec, mode, margin=None, unit_cost=None) -> float:
    """Smallest minimiser of the pre-commitment objective over support points and midpoints."""
    return float(brute_force_argmin(dist, r_u, r_v, spec, mode, margin, unit_cost)[0])


def profit_lower_bound(r_u, r_v, x_star, coeffs: RiskCoefficients, mode) -> float:
    """Guaranteed expected profit at the risk-averse pre-commitment x_star."""
    if x_star < 0:
        raise ValueError("x_star must be nonnegative")
    if mode == NO_TRADING:
        return (1.0 - coeffs.alpha) * r_u * x_star
    if mode == WITH_TRADING:
        return -(1.0 - coeffs.alpha) * r_v * x_star
    raise ValueError(f"unknown mode {mode!r}")


def oracle_agrees(dist, r_u, r_v, spec, mode, margin=None, unit_cost=None):
    """(closed-form x*, oracle argmin set, agreement flag)."""
    x_cf = closed_form_precommit(dist, r_u, r_v, spec, mode)
    arg = brute_force_argmin(dist, r_u, r_v, spec, mode, margin, unit_cost)
    return x_cf, arg, bool(np.any(np.abs(arg - x_cf) <= 1e-9 * (1 + abs(x_cf))))


def in_tail_regime(r_u, r_v, spec: RiskSpec, mode) -> bool:
    """True when the critical quantile sits inside every risk tail, where the closed forms are exact."""
    a = RiskCoefficients.of(spec).alpha
    q = a * r_u / (r_u + r_v) if mode == NO_TRADING else a * r_v / (r_u + r_v)
    betas = [b for b, w in spec.spectrum if w > 0]
    return spec.kappa == 0.0 or q <= min(betas) + 1e-12
