"""Risk measures, participant objectives r_i(q) and their derivatives.

For a participant holding q units of the traded payoff the loss is
``-R_i - qᵀP`` and the objective is ``r_i(q) = ρ_i(-R_i - qᵀP)``.  Both
supported preferences reduce to closed forms in the joint moments:

* entropic (Gaussian only)::

    r(q) = -E[R] - qᵀμ + ϱ Var(R)/2 + ϱ qᵀcov + ϱ qᵀΓq / 2

* expected shortfall (any elliptical family)::

    r(q) = -E[R] - qᵀμ + ES_α(Z) sqrt((1, q)ᵀ Γ_i (1, q))

where Z is the unit-variance member of the family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateRisk, InvalidParam, UnsupportedCombination
from .market_model import AssetModel, EllipseKind, Entropic, ExpectedShortfall, Participant

DEGENERACY_TOL = 1e-12
ROUNDING = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class StandardizedTail:
    kind: EllipseKind
    alpha: float
    value: float


def _check_kind(kind: EllipseKind) -> None:
    if kind.kind == "student_t":
        if kind.nu is None or not kind.nu > 2:
            raise InvalidParam("Student-t expected shortfall needs nu > 2")
    elif kind.kind != "gaussian":
        raise InvalidParam(f"unknown elliptical family {kind.kind!r}")


def es_standardized(kind: EllipseKind, alpha: float) -> float:
    """Expected shortfall at level alpha of the unit-variance variable Z."""
    if not 0.0 <= alpha < 1.0:
        raise InvalidParam(f"alpha must lie in [0, 1), got {alpha}")
    _check_kind(kind)
    if alpha == 0.0:
        return 0.0  # ES_0 is the mean of a centred symmetric law
    if kind.is_gaussian:
        return float(stats.norm.pdf(stats.norm.ppf(alpha)) / (1.0 - alpha))
    nu = kind.nu
    x = stats.t.ppf(alpha, nu)
    raw = stats.t.pdf(x, nu) * (nu + x * x) / ((1.0 - alpha) * (nu - 1.0))
    return float(np.sqrt((nu - 2.0) / nu) * raw)


def standardized_tail(kind: EllipseKind, alpha: float) -> StandardizedTail:
    return StandardizedTail(kind, alpha, es_standardized(kind, alpha))


def quantile_standardized(kind: EllipseKind, alpha: float) -> float:
    """Quantile of the unit-variance variable Z (used for VaR-based margins)."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParam(f"alpha must lie in (0, 1), got {alpha}")
    _check_kind(kind)
    if kind.is_gaussian:
        return float(stats.norm.ppf(alpha))
    nu = kind.nu
    return float(np.sqrt((nu - 2.0) / nu) * stats.t.ppf(alpha, nu))


def _moments(p: Participant, a: AssetModel, q) -> tuple[np.ndarray, float, np.ndarray]:
    q = np.asarray(q, dtype=float).reshape(a.m)
    g = p.cov_r + a.gamma @ q
    # Var = unspanned part + (q + a)ᵀΓ(q + a) with a = Γ⁻¹cov; no cancellation near q = -a
    span = np.linalg.solve(a.gamma, p.cov_r)
    unspanned = p.var_r - p.cov_r @ span
    if unspanned <= ROUNDING * p.var_r:
        unspanned = 0.0
    d = q + span
    v = unspanned + d @ a.gamma @ d
    return q, float(v), g


def _entropic_ok(p: Participant, a: AssetModel) -> None:
    if not a.ellipse.is_gaussian:
        raise UnsupportedCombination(
            f"participant {p.id}: entropic risk requires Gaussian moments "
            "(the exponential moment diverges for Student-t)"
        )


def es_level(p: Participant, a: AssetModel) -> float:
    return es_standardized(a.ellipse, p.risk.alpha)


def objective_r(p: Participant, a: AssetModel, q) -> float:
    q, v, _ = _moments(p, a, q)
    base = -p.er - q @ a.mu
    if isinstance(p.risk, Entropic):
        _entropic_ok(p, a)
        rho = p.risk.varrho
        return float(base + rho * p.var_r / 2 + rho * q @ p.cov_r + 0.5 * rho * q @ a.gamma @ q)
    if isinstance(p.risk, ExpectedShortfall):
        return float(base + es_level(p, a) * np.sqrt(max(v, 0.0)))
    raise InvalidParam(f"unknown risk kind {p.risk!r}")


def grad_r(p: Participant, a: AssetModel, q) -> np.ndarray:
    q, v, g = _moments(p, a, q)
    if isinstance(p.risk, Entropic):
        _entropic_ok(p, a)
        return -a.mu + p.risk.varrho * g
    if isinstance(p.risk, ExpectedShortfall):
        if v <= DEGENERACY_TOL:
            raise DegenerateRisk(f"participant {p.id}: ES square-root argument {v:.3e} is degenerate")
        return -a.mu + es_level(p, a) * g / np.sqrt(v)
    raise InvalidParam(f"unknown risk kind {p.risk!r}")


def hess_r(p: Participant, a: AssetModel, q) -> np.ndarray:
    q, v, g = _moments(p, a, q)
    if isinstance(p.risk, Entropic):
        _entropic_ok(p, a)
        return p.risk.varrho * np.array(a.gamma)
    if isinstance(p.risk, ExpectedShortfall):
        if v <= DEGENERACY_TOL:
            raise DegenerateRisk(f"participant {p.id}: ES square-root argument {v:.3e} is degenerate")
        s = np.sqrt(v)
        return es_level(p, a) * (a.gamma / s - np.outer(g, g) / s**3)
    raise InvalidParam(f"unknown risk kind {p.risk!r}")


def curvature_proxy(p: Participant, a: AssetModel) -> float | None:
    """Entropic risk aversion with matching curvature at q = 0.

    Used to seed the Newton solver; None when no finite proxy exists.
    """
    if isinstance(p.risk, Entropic):
        return p.risk.varrho
    if p.var_r <= DEGENERACY_TOL:
        return None
    value = es_level(p, a) / np.sqrt(p.var_r)
    return value if value > 0 else None
