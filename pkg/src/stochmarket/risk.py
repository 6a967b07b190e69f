"""Coherent risk measures built from weighted mean deviations around beta-quantiles.

For a profit variable Z and a finite spectrum {(beta_j, w_j)}::

    rho(Z) = -E[Z] + kappa * sum_j w_j * q_{beta_j}[Z]
    q_beta[Z] = min_eta E[max((1 - beta)(eta - Z), beta(Z - eta))]
              = beta * (E[Z] - TailMean_beta[Z])

so rho(Z) = -[(1 - kappa*beta_bar) E[Z] + kappa * sum_j w_j beta_j TailMean_{beta_j}[Z]]
with beta_bar = sum_j w_j beta_j. For kappa in [0, 1/beta_bar] this is a convex
mixture of the mean and lower-tail means, hence coherent. Its dual set is

    D = {(1 - kappa*beta_bar) P + kappa * sum_j w_j nu_j :
         0 <= nu_j <= P, sum(nu_j) = beta_j}

and rho(Z) = max_{mu in D} E_mu[-Z].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import lp

ENUMERATION_BOUND = 5000
TIE_TOL = 1e-12


class RiskEnumerationError(RuntimeError):
    """Extreme-point enumeration exceeded its bound."""


@dataclass(frozen=True)
class RiskSpec:
    kappa: float
    spectrum: tuple = ((1.0, 1.0),)  # (beta, weight) pairs

    def __post_init__(self):
        spec = tuple((float(b), float(w)) for b, w in self.spectrum)
        object.__setattr__(self, "spectrum", spec)
        object.__setattr__(self, "kappa", float(self.kappa))
        self.validate()

    @classmethod
    def cvar(cls, kappa, beta):
        return cls(kappa, ((beta, 1.0),))

    @classmethod
    def neutral(cls):
        return cls(0.0, ((1.0, 1.0),))

    @property
    def beta_bar(self) -> float:
        return float(sum(b * w for b, w in self.spectrum))

    @property
    def kappa_max(self) -> float:
        return 1.0 / self.beta_bar

    @property
    def is_neutral(self) -> bool:
        return self.kappa == 0.0 or all(b == 1.0 for b, w in self.spectrum if w > 0)

    def validate(self):
        if not self.spectrum:
            raise ValueError("empty spectrum")
        for b, w in self.spectrum:
            if not 0.0 < b <= 1.0:
                raise ValueError(f"beta {b} outside (0, 1]")
            if w < 0:
                raise ValueError("negative spectral weight")
        if abs(sum(w for _, w in self.spectrum) - 1.0) > 1e-9:
            raise ValueError("spectral weights must sum to 1")
        if self.kappa < 0 or self.kappa > self.kappa_max * (1 + 1e-12):
            raise ValueError(f"kappa {self.kappa} outside [0, 1/beta_bar = {self.kappa_max:g}]")

    def to_dict(self):
        return {"kappa": self.kappa, "spectrum": [{"beta": b, "weight": w} for b, w in self.spectrum]}


@dataclass(frozen=True)
class PolyhedralRiskSet:
    """Risk set given by its extreme points, one probability vector per row."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise ValueError("empty risk set")
        if np.any(pts < -1e-12) or np.any(np.abs(pts.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every extreme point must be a probability vector")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


def risk_from_dict(doc):
    if "extreme_points" in doc:
        return PolyhedralRiskSet(np.array(doc["extreme_points"], dtype=float))
    spectrum = tuple((s["beta"], s.get("weight", 1.0)) for s in doc.get("spectrum", [{"beta": 1.0, "weight": 1.0}]))
    return RiskSpec(float(doc.get("kappa", 0.0)), spectrum)


def risk_to_dict(risk):
    if isinstance(risk, PolyhedralRiskSet):
        return {"extreme_points": risk.points.tolist()}
    return risk.to_dict()


def _check_beta(beta):
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta {beta} outside (0, 1]")


def _tied_groups(z):
    """Scenario groups with equal value, ordered by increasing value."""
    order = np.argsort(z, kind="stable")
    groups, cur = [], [order[0]]
    scale = TIE_TOL * (1.0 + np.abs(z).max())
    for k in order[1:]:
        if z[k] - z[cur[-1]] <= scale:
            cur.append(k)
        else:
            groups.append(cur)
            cur = [k]
    groups.append(cur)
    return groups


def tail_measure(z, probs, beta) -> np.ndarray:
    """Mass beta placed on the lowest values of z (ties and the boundary atom split pro rata)."""
    z = np.asarray(z, dtype=float)
    p = np.asarray(probs, dtype=float)
    nu = np.zeros_like(p)
    left = beta
    for grp in _tied_groups(z):
        mass = p[grp].sum()
        take = min(mass, left)
        if take > 0:
            nu[grp] = p[grp] * (take / mass)
        left -= take
        if left <= 0:
            break
    return nu


def lower_tail_mean(z, probs, beta) -> float:
    """Probability-weighted mean of the lowest beta portion of z."""
    _check_beta(beta)
    return float(tail_measure(z, probs, beta) @ np.asarray(z, dtype=float)) / beta


def q_beta(z, probs, beta) -> float:
    """min over eta of E[max((1-beta)(eta-Z), beta(Z-eta))], scanned over support points."""
    _check_beta(beta)
    z = np.asarray(z, dtype=float)
    p = np.asarray(probs, dtype=float)
    best = np.inf
    for eta in np.unique(z):
        val = p @ np.maximum((1 - beta) * (eta - z), beta * (z - eta))
        best = min(best, val)
    return float(best)


def rho_disutility(z, probs, spec: RiskSpec) -> float:
    """Risk-adjusted disutility of the profit variable z."""
    z = np.asarray(z, dtype=float)
    p = np.asarray(probs, dtype=float)
    mean = float(p @ z)
    if spec.kappa == 0.0:
        return -mean
    dev = sum(w * q_beta(z, p, b) for b, w in spec.spectrum if w > 0)
    return -mean + spec.kappa * dev


def worst_case_measure(z, probs, spec: RiskSpec) -> np.ndarray:
    """Measure mu in the dual set with E_mu[-z] = rho_disutility(z)."""
    p = np.asarray(probs, dtype=float)
    mu = (1.0 - spec.kappa * spec.beta_bar) * p
    if spec.kappa == 0.0:
        return p.copy()
    for b, w in spec.spectrum:
        if w > 0:
            mu = mu + spec.kappa * w * tail_measure(z, p, b)
    return mu


_VERTEX_CACHE: dict = {}


def _tail_vertices(probs, beta, bound):
    key = (tuple(np.asarray(probs, dtype=float).tolist()), float(beta), int(bound))
    if key not in _VERTEX_CACHE:
        if len(_VERTEX_CACHE) > 64:
            _VERTEX_CACHE.clear()
        try:
            _VERTEX_CACHE[key] = _enumerate_tail_vertices(probs, beta, bound)
        except RiskEnumerationError as exc:
            _VERTEX_CACHE[key] = exc
    hit = _VERTEX_CACHE[key]
    if isinstance(hit, RiskEnumerationError):
        raise hit
    return [v.copy() for v in hit]


def _enumerate_tail_vertices(probs, beta, bound, tol=1e-12):
    """Vertices of {nu : 0 <= nu <= P, sum nu = beta}.

    A vertex has at most one component strictly between its bounds, so we
    enumerate (full set, optional boundary scenario) pairs depth first.
    """
    p = np.asarray(probs, dtype=float)
    n = len(p)
    suffix = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
    out = []

    def rec(i, mass, chosen, frac):
        if len(out) > bound:
            raise RiskEnumerationError(f"more than {bound} extreme points")
        extra = p[frac] if frac is not None else 0.0
        if mass > beta + tol or mass + extra + suffix[i] < beta - tol:
            return
        if frac is not None and mass >= beta - tol:
            return
        if i == n:
            v = np.zeros(n)
            v[list(chosen)] = p[list(chosen)]
            if frac is None:
                if abs(mass - beta) <= tol:
                    out.append(v)
            else:
                amt = beta - mass
                if tol < amt < p[frac] - tol:
                    v[frac] = amt
                    out.append(v)
            return
        rec(i + 1, mass + p[i], chosen + (i,), frac)
        rec(i + 1, mass, chosen, frac)
        if frac is None:
            rec(i + 1, mass, chosen, i)

    rec(0, 0.0, (), None)
    return out


def _nested(inner, outer, p, tol=1e-12) -> bool:
    """True when one scenario ordering fills both tails greedily (inner has the smaller level).

    Vertices of a sum of tail polytopes are exactly sums of such compatible
    vertices, so this replaces a convex-hull pruning pass.
    """
    full_in, full_out = inner >= p - tol, outer >= p - tol
    frac_in = (inner > tol) & ~full_in
    frac_out = (outer > tol) & ~full_out
    if np.any(full_in & ~full_out) or np.any(frac_in & ~(full_out | frac_out)):
        return False
    # a shared fractional scenario must be the last one filled in both tails
    return not np.any(frac_in & frac_out) or not np.any(full_out & ~full_in)


def extreme_points(spec: RiskSpec, probs, bound: int = ENUMERATION_BOUND) -> PolyhedralRiskSet:
    """Exact extreme points of the dual set of rho_disutility."""
    p = np.asarray(probs, dtype=float)
    if spec.kappa == 0.0:
        return PolyhedralRiskSet(p[None, :].copy())
    levels = sorted((b, w) for b, w in spec.spectrum if w > 0)
    # chains of per-level vertices (ascending beta) that share one filling order
    chains = [(np.zeros_like(p), None)]
    for b, w in levels:
        verts = _tail_vertices(p, b, bound)
        chains = [(acc + w * v, v) for acc, last in chains for v in verts if last is None or _nested(last, v, p)]
        if len(chains) > bound:
            raise RiskEnumerationError(f"more than {bound} extreme points")
    base = (1.0 - spec.kappa * spec.beta_bar) * p
    arr = np.unique(np.round(np.array([base + spec.kappa * acc for acc, _ in chains]), 14), axis=0)
    return PolyhedralRiskSet(arr)


def risk_value_lp(z, riskset: PolyhedralRiskSet) -> float:
    """min theta s.t. theta >= sum_w P_m(w) z(w) for every extreme point m."""
    if len(riskset) == 0:
        raise ValueError("empty risk set")
    z = np.asarray(z, dtype=float)
    bld = lp.LpBuilder()
    th = bld.add_var("theta", cost=1.0, lb=None)
    for m, pm in enumerate(riskset.points):
        bld.add_row([(th, 1.0)], lp.GE, float(pm @ z))
    sol = lp.solve(bld.build())
    if not sol.optimal:
        raise RuntimeError("risk value LP failed: " + sol.status)
    return float(sol.x[th])


def separate(loss, probs, risk) -> np.ndarray:
    """Measure in the risk set maximising E_mu[loss] (cutting-plane oracle)."""
    if isinstance(risk, PolyhedralRiskSet):
        return risk.points[int(np.argmax(risk.points @ np.asarray(loss, dtype=float)))].copy()
    return worst_case_measure(-np.asarray(loss, dtype=float), probs, risk)


def sup_expectation(loss, probs, risk) -> float:
    """max over the risk set of E_mu[loss]."""
    return float(separate(loss, probs, risk) @ np.asarray(loss, dtype=float))


def add_membership_rows(bld: lp.LpBuilder, mu_vars: Sequence[int], probs, risk):
    """Constrain the LP columns mu_vars to lie in the risk set."""
    p = np.asarray(probs, dtype=float)
    n = len(p)
    if isinstance(risk, PolyhedralRiskSet):
        lam = [bld.add_var(lb=0.0) for _ in range(len(risk))]
        bld.add_row([(v, 1.0) for v in lam], lp.EQ, 1.0)
        for s in range(n):
            bld.add_row([(mu_vars[s], 1.0)] + [(lam[m], -risk.points[m, s]) for m in range(len(risk))], lp.EQ, 0.0)
        return
    base = (1.0 - risk.kappa * risk.beta_bar) * p
    active = [(b, w) for b, w in risk.spectrum if w > 0 and risk.kappa > 0]
    nus = []
    for b, w in active:
        nu = [bld.add_var(lb=0.0, ub=p[s]) for s in range(n)]
        bld.add_row([(v, 1.0) for v in nu], lp.EQ, b)
        nus.append((w, nu))
    for s in range(n):
        coeffs = [(mu_vars[s], 1.0)] + [(nu[s], -risk.kappa * w) for w, nu in nus]
        bld.add_row(coeffs, lp.EQ, base[s])


def membership_residual(mu, probs, risk) -> float:
    """L1 distance from mu to the risk set (0 means mu is a member)."""
    mu = np.asarray(mu, dtype=float)
    n = len(mu)
    bld = lp.LpBuilder()
    mv = [bld.add_var(lb=None) for _ in range(n)]
    add_membership_rows(bld, mv, probs, risk)
    for s in range(n):
        sp = bld.add_var(cost=1.0)
        sm = bld.add_var(cost=1.0)
        bld.add_row([(mv[s], 1.0), (sp, 1.0), (sm, -1.0)], lp.EQ, mu[s])
    sol = lp.solve(bld.build())
    if not sol.optimal:
        return np.inf
    return float(sol.objective)


def intersection_point(probs, risks) -> np.ndarray | None:
    """A measure common to every risk set, or None when the intersection is empty."""
    n = len(probs)
    bld = lp.LpBuilder()
    mv = [bld.add_var(lb=0.0, ub=1.0) for _ in range(n)]
    bld.add_row([(v, 1.0) for v in mv], lp.EQ, 1.0)
    for r in risks:
        add_membership_rows(bld, mv, probs, r)
    sol = lp.solve(bld.build())
    if not sol.optimal:
        return None
    return sol.x[:n].copy()


def risk_premium_order_key(risk, probs) -> float:
    """Scalar used to rank agents from least to most risk averse (size of the risk set)."""
    p = np.asarray(probs, dtype=float)
    if isinstance(risk, PolyhedralRiskSet):
        return float(np.abs(risk.points - p).sum(axis=1).max())
    if risk.kappa == 0.0:
        return 0.0
    return float(risk.kappa * sum(w * (1.0 - b) for b, w in risk.spectrum))


def add_risk_bound(bld: lp.LpBuilder, theta: int, loss_terms, probs, risk, method="auto",
                   bound: int = ENUMERATION_BOUND, name="risk") -> int:
    """Rows forcing theta >= sup over the risk set of E_mu[loss].

    loss_terms[s] lists (column, coefficient) pairs whose sum is the loss in
    scenario s. Uses one row per extreme point when the set is small enough
    (or method == "extreme"), otherwise the exact tail-mean LP dual of a
    spectral set. Returns the number of rows added.
    """
    p = np.asarray(probs, dtype=float)
    S = len(p)
    pts = None
    if isinstance(risk, PolyhedralRiskSet):
        pts = risk.points
    elif method in ("auto", "extreme"):
        try:
            pts = extreme_points(risk, p, bound).points
        except RiskEnumerationError:
            if method == "extreme":
                raise
    elif method != "epigraph":
        raise ValueError(f"unknown risk method {method!r}")
    if pts is not None:
        for mu in pts:
            coeffs = [(theta, 1.0)]
            for s in range(S):
                if mu[s] != 0.0:
                    coeffs += [(j, -mu[s] * c) for j, c in loss_terms[s]]
            bld.add_row(coeffs, lp.GE, 0.0, name)
        return len(pts)
    # theta >= (1 - kappa*beta_bar) E_P[L] + kappa * sum_j w_j (beta_j eta_j + E_P[(L - eta_j)+])
    coeffs = [(theta, 1.0)]
    base = 1.0 - risk.kappa * risk.beta_bar
    for s in range(S):
        coeffs += [(j, -base * p[s] * c) for j, c in loss_terms[s]]
    count = 1
    for k, (b, w) in enumerate(risk.spectrum):
        if w <= 0 or risk.kappa == 0.0:
            continue
        eta = bld.add_var(f"eta[{name},{k}]", 0.0, None, None)
        coeffs.append((eta, -risk.kappa * w * b))
        for s in range(S):
            z = bld.add_var(f"z[{name},{k},{s}]", 0.0, 0.0, None)
            coeffs.append((z, -risk.kappa * w * p[s]))
            bld.add_row([(z, 1.0), (eta, 1.0)] + [(j, -c) for j, c in loss_terms[s]], lp.GE, 0.0,
                        f"tail[{name},{k},{s}]")
            count += 1
    bld.add_row(coeffs, lp.GE, 0.0, name)
    return count
