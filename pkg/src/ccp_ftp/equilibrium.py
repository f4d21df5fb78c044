"""Radner equilibria of one exchange.

An equilibrium is a price p and positions q_i with ``-p = ∇r_i(q_i)`` for
every participant and ``Σ q_i = c`` for the clearing right-hand side c.
Entropic/Gaussian exchanges have a closed form; expected-shortfall
exchanges are solved by damped Newton on the gradient-matching system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from .errors import DegenerateRisk, NoConvergence, SingularGamma, WrongRiskKind
from .market_model import (
    AssetModel,
    Entropic,
    ExpectedShortfall,
    Exchange,
    Participant,
    id_key,
    is_positive_definite,
    assemble_joint_moments,
)
from .risk_engine import curvature_proxy, es_level, grad_r, hess_r, objective_r

TOL_NEWTON = 1e-10
MAX_ITER = 200
TOL_GAP = 1e-8


@dataclass(frozen=True)
class AggregateRisk:
    varrho_agg: float
    cov_agg: np.ndarray


@dataclass(frozen=True, eq=False)
class Equilibrium:
    exchange_id: str
    positions: dict[str, np.ndarray]
    price: np.ndarray
    residual_kkt: float
    residual_clearing: float
    method: str
    iterations: int = 0
    clearing_rhs: np.ndarray | None = None
    residual_history: tuple[float, ...] = ()
    pinned: frozenset[str] = field(default_factory=frozenset)

    def position(self, pid: str) -> np.ndarray:
        return self.positions[str(pid)]

    @property
    def ids(self) -> list[str]:
        return sorted(self.positions, key=id_key)


def aggregate_risk(participants: Sequence[Participant]) -> AggregateRisk:
    rhos = []
    for p in participants:
        if not isinstance(p.risk, Entropic):
            raise WrongRiskKind(f"participant {p.id} is not entropic")
        rhos.append(p.risk.varrho)
    varrho = 1.0 / sum(1.0 / r for r in rhos)
    cov = np.sum([p.cov_r for p in participants], axis=0)
    return AggregateRisk(varrho, cov)


def _members(exchange: Exchange, participants: Mapping[str, Participant]) -> list[Participant]:
    return [participants[i] for i in sorted(exchange.members, key=id_key)]


def _rhs(exchange: Exchange, asset: AssetModel, clearing_rhs) -> np.ndarray:
    if clearing_rhs is None:
        return exchange.rhs(asset.m)
    return np.asarray(clearing_rhs, dtype=float).reshape(asset.m)


def _gamma_inverse(asset: AssetModel) -> np.ndarray:
    if not is_positive_definite(asset.gamma):
        raise SingularGamma("asset covariance is not invertible")
    return np.linalg.inv(asset.gamma)


def _closed_form(varrhos, covs, asset: AssetModel, rhs):
    """Entropic equilibrium for given risk aversions and covariances."""
    gi = _gamma_inverse(asset)
    varrho = 1.0 / np.sum(1.0 / np.asarray(varrhos))
    cov = np.sum(covs, axis=0)
    shifted = cov + asset.gamma @ rhs
    price = asset.mu - varrho * shifted
    qs = [gi @ ((varrho / r) * cov - c) + (varrho / r) * rhs for r, c in zip(varrhos, covs)]
    return price, qs


def _residuals(parts, asset, qs, price, rhs) -> tuple[float, float]:
    kkt = 0.0
    for p, q in zip(parts, qs):
        kkt = max(kkt, float(np.max(np.abs(grad_r(p, asset, q) + price))))
    clearing = float(np.max(np.abs(np.sum(qs, axis=0) - rhs)))
    return kkt, clearing


def solve_entropic(
    exchange: Exchange,
    participants: Mapping[str, Participant],
    asset: AssetModel,
    clearing_rhs=None,
) -> Equilibrium:
    """Closed-form equilibrium for entropic participants under Gaussian moments."""
    parts = _members(exchange, participants)
    if not asset.ellipse.is_gaussian:
        raise WrongRiskKind("entropic closed form needs Gaussian moments")
    for p in parts:
        if not isinstance(p.risk, Entropic):
            raise WrongRiskKind(f"participant {p.id} is not entropic")
    rhs = _rhs(exchange, asset, clearing_rhs)
    price, qs = _closed_form([p.risk.varrho for p in parts], [p.cov_r for p in parts], asset, rhs)
    kkt, clearing = _residuals(parts, asset, qs, price, rhs)
    return Equilibrium(
        exchange.id,
        {p.id: q for p, q in zip(parts, qs)},
        price,
        kkt,
        clearing,
        "closed_form",
        0,
        rhs,
    )


# ------------------------------------------------------------------ Newton


class _System:
    """Gradient-matching system F(x) = 0 for smooth participants."""

    def __init__(self, parts: list[Participant], asset: AssetModel, rhs: np.ndarray):
        self.parts = parts
        self.asset = asset
        self.rhs = rhs
        self.n = len(parts)
        self.m = asset.m
        self.ref = min(range(self.n), key=lambda k: id_key(parts[k].id))

    def residual(self, x: np.ndarray) -> np.ndarray:
        n, m = self.n, self.m
        qs = x.reshape(n, m)
        grads = [grad_r(p, self.asset, q) for p, q in zip(self.parts, qs)]
        rows = [grads[i] - grads[self.ref] for i in range(n) if i != self.ref]
        rows.append(qs.sum(axis=0) - self.rhs)
        return np.concatenate(rows)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        n, m = self.n, self.m
        qs = x.reshape(n, m)
        hs = [hess_r(p, self.asset, q) for p, q in zip(self.parts, qs)]
        jac = np.zeros((n * m, n * m))
        row = 0
        for i in range(n):
            if i == self.ref:
                continue
            jac[row:row + m, i * m:(i + 1) * m] = hs[i]
            jac[row:row + m, self.ref * m:(self.ref + 1) * m] = -hs[self.ref]
            row += m
        for i in range(n):
            jac[row:row + m, i * m:(i + 1) * m] = np.eye(m)
        return jac

    def norm(self, x: np.ndarray) -> float:
        try:
            return float(np.linalg.norm(self.residual(x)))
        except DegenerateRisk:
            return np.inf


def _newton(system: _System, x0: np.ndarray, tol: float, max_iter: int):
    x = np.array(x0, dtype=float)
    try:
        f = system.residual(x)
    except DegenerateRisk:
        raise NoConvergence(0, np.inf)
    history = [float(np.max(np.abs(f)))]
    for it in range(1, max_iter + 1):
        if history[-1] <= tol:
            return x, it - 1, history
        jac = system.jacobian(x)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -f, rcond=None)[0]
        f_norm = float(np.linalg.norm(f))
        lam = 1.0
        while True:
            trial = x + lam * step
            t_norm = system.norm(trial)
            if t_norm <= (1.0 - 1e-4 * lam) * f_norm or lam < 1e-12:
                break
            lam *= 0.5
        if not np.isfinite(t_norm):
            raise NoConvergence(it, history[-1], history)
        x = trial
        f = system.residual(x)
        history.append(float(np.max(np.abs(f))))
    if history[-1] <= tol:
        return x, max_iter, history
    raise NoConvergence(max_iter, history[-1], history)


def _initial_guess(parts, asset, rhs) -> np.ndarray:
    proxies = [curvature_proxy(p, asset) for p in parts]
    if any(r is None for r in proxies):
        return np.zeros(len(parts) * asset.m)
    try:
        _, qs = _closed_form(proxies, [p.cov_r for p in parts], asset, rhs)
    except SingularGamma:
        return np.zeros(len(parts) * asset.m)
    return np.concatenate(qs)


def _solve_smooth(parts, asset, rhs, tol, max_iter, x0=None):
    system = _System(parts, asset, rhs)
    if system.n == 1:
        qs = [np.array(rhs, dtype=float)]
        return qs, -grad_r(parts[0], asset, qs[0]), 0, [0.0]
    starts = [x0] if x0 is not None else []
    starts += [_initial_guess(parts, asset, rhs), np.zeros(system.n * asset.m)]
    failure = None
    for start in starts:
        try:
            x, iters, hist = _newton(system, start, tol, max_iter)
        except NoConvergence as exc:
            failure = exc
            continue
        qs = list(x.reshape(system.n, asset.m))
        price = -grad_r(parts[system.ref], asset, qs[system.ref])
        return qs, price, iters, hist
    raise failure


def kink_position(p: Participant, asset: AssetModel) -> np.ndarray | None:
    """Position that makes the receivable riskless, if the receivable is spanned.

    Returns z with (1, z)ᵀ Γ_i (1, z) = 0, or None when Γ_i is definite.
    """
    z = -np.linalg.solve(asset.gamma, p.cov_r)
    v = p.var_r + 2.0 * z @ p.cov_r + z @ asset.gamma @ z
    scale = max(p.var_r, 1.0)
    return z if v <= 1e-12 * scale else None


def kink_subgradient_residual(p: Participant, asset: AssetModel, price) -> float:
    """Distance of -p from the ES subdifferential at the riskless position.

    There ∂r = -μ + ES_α(Z) {Γu : uᵀΓu ≤ 1}, so -p belongs to it exactly when
    the Γ⁻¹-norm of μ - p is at most ES_α(Z).
    """
    excess = asset.mu - np.asarray(price, dtype=float).reshape(asset.m)
    norm = float(np.sqrt(excess @ np.linalg.solve(asset.gamma, excess)))
    return max(norm - es_level(p, asset), 0.0)


def conjugate_gap(p: Participant, asset: AssetModel, q, price, box_scale: float = 10.0) -> float:
    """Fenchel gap r(q) + qᵀp + r*(-p) ≥ 0, zero iff -p ∈ ∂r(q).

    The conjugate is evaluated by convex minimisation of r(z) + pᵀz over a
    box whose half-width is ``box_scale`` times the largest relevant
    position.
    """
    q = np.asarray(q, dtype=float).reshape(asset.m)
    price = np.asarray(price, dtype=float).reshape(asset.m)
    kink = kink_position(p, asset)
    width = max(float(np.max(np.abs(q))), 1.0)
    if kink is not None:
        width = max(width, float(np.max(np.abs(kink))))
    width *= box_scale
    bounds = [(-width, width)] * asset.m

    def f(z):
        return objective_r(p, asset, z) + price @ z

    own = f(q)
    best = own
    starts = [q, np.zeros(asset.m)] + ([kink] if kink is not None else [])
    for z0 in starts:
        if asset.m == 1:
            res = optimize.minimize_scalar(
                lambda t: f(np.array([t])), bounds=bounds[0], method="bounded",
                options={"xatol": 1e-12},
            )
            best = min(best, float(res.fun))
            break
        res = optimize.minimize(f, z0, method="Powell", bounds=bounds,
                                options={"xtol": 1e-12, "ftol": 1e-14})
        best = min(best, float(res.fun))
    for z in ([kink] if kink is not None else []):
        best = min(best, f(z))
    return float(max(own - best, 0.0))


def solve_es(
    exchange: Exchange,
    participants: Mapping[str, Participant],
    asset: AssetModel,
    clearing_rhs=None,
    hedger: Participant | None = None,
    tol: float = TOL_NEWTON,
    max_iter: int = MAX_ITER,
) -> Equilibrium:
    """Equilibrium by damped Newton on the gradient-matching root system.

    The reference participant for the matching equations is the one with
    the lowest id.  An optional CCP hedger is not listed among the exchange
    members; its position follows from clearing.  When the hedger's
    receivable is spanned by P its objective has a kink at the riskless
    position, and that position is tried first and accepted when the
    conjugate-equality gap vanishes.
    """
    parts = _members(exchange, participants)
    for p in parts:
        if isinstance(p.risk, ExpectedShortfall) and not is_positive_definite(assemble_joint_moments(p, asset)):
            raise DegenerateRisk(f"participant {p.id}: joint covariance is singular")
    rhs = _rhs(exchange, asset, clearing_rhs)
    if hedger is None:
        qs, price, iters, hist = _solve_smooth(parts, asset, rhs, tol, max_iter)
        positions = {p.id: q for p, q in zip(parts, qs)}
        kkt, clearing = _residuals(parts, asset, qs, price, rhs)
        return Equilibrium(exchange.id, positions, price, kkt, clearing, "newton", iters, rhs, tuple(hist))

    kink = kink_position(hedger, asset) if isinstance(hedger.risk, ExpectedShortfall) else None
    if kink is not None:
        qs, price, iters, hist = _solve_smooth(parts, asset, rhs - kink, tol, max_iter)
        gap = kink_subgradient_residual(hedger, asset, price)
        if gap <= TOL_GAP:
            positions = {p.id: q for p, q in zip(parts, qs)}
            positions[hedger.id] = kink.copy()
            kkt, _ = _residuals(parts, asset, qs, price, rhs - kink)
            clearing = float(np.max(np.abs(np.sum(list(positions.values()), axis=0) - rhs)))
            return Equilibrium(exchange.id, positions, price, max(kkt, gap), clearing,
                               "newton", iters, rhs, tuple(hist))
        # hedger trades away from its kink: treat it as a smooth participant,
        # nudged off the kink so its gradient exists
        x0 = np.concatenate(qs + [kink + 1e-3 * np.sign(asset.mu - price + 1e-300)])
    else:
        x0 = None
    everyone = parts + [hedger]
    qs, price, iters, hist = _solve_smooth(everyone, asset, rhs, tol, max_iter, x0=x0)
    positions = {p.id: q for p, q in zip(everyone, qs)}
    kkt, clearing = _residuals(everyone, asset, qs, price, rhs)
    return Equilibrium(exchange.id, positions, price, kkt, clearing, "newton", iters, rhs, tuple(hist))


def solve_exchange(
    exchange: Exchange,
    participants: Mapping[str, Participant],
    asset: AssetModel,
    clearing_rhs=None,
    hedger: Participant | None = None,
) -> Equilibrium:
    """Dispatch to the closed form when every participant is entropic."""
    everyone = _members(exchange, participants) + ([hedger] if hedger is not None else [])
    if asset.ellipse.is_gaussian and all(isinstance(p.risk, Entropic) for p in everyone):
        if hedger is not None:
            ext = Exchange(exchange.id, tuple(exchange.members) + (hedger.id,), exchange.clearing_rhs)
            pool = dict(participants)
            pool[hedger.id] = hedger
            return solve_entropic(ext, pool, asset, clearing_rhs)
        return solve_entropic(exchange, participants, asset, clearing_rhs)
    return solve_es(exchange, participants, asset, clearing_rhs, hedger=hedger)


def verify_equilibrium(
    eq: Equilibrium,
    participants: Mapping[str, Participant],
    asset: AssetModel,
) -> dict[str, float]:
    """Recompute KKT, clearing and implied-price residuals of an equilibrium."""
    kkt = 0.0
    implied = []
    for pid, q in eq.positions.items():
        if pid in eq.pinned:
            continue
        p = participants[pid]
        try:
            g = grad_r(p, asset, q)
        except DegenerateRisk:
            if isinstance(p.risk, ExpectedShortfall) and kink_position(p, asset) is not None:
                kkt = max(kkt, kink_subgradient_residual(p, asset, eq.price))
            else:
                kkt = max(kkt, conjugate_gap(p, asset, q, eq.price))
            continue
        kkt = max(kkt, float(np.max(np.abs(g + eq.price))))
        implied.append(-g)
    rhs = eq.clearing_rhs if eq.clearing_rhs is not None else np.zeros(asset.m)
    clearing = float(np.max(np.abs(np.sum(list(eq.positions.values()), axis=0) - rhs)))
    if implied:
        stack = np.array(implied)
        consistency = float(np.max(stack.max(axis=0) - stack.min(axis=0)))
    else:
        consistency = 0.0
    return {"residual_kkt": kkt, "residual_clearing": clearing, "price_consistency": consistency}
