"""Scenario builders and published reference values shared by the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ccp_ftp.market_model import (
    AssetModel,
    EllipseKind,
    Entropic,
    Exchange,
    ExpectedShortfall,
    Participant,
    Scenario,
)

MU = 2.0
SIGMA = 0.2


def fifteen_members(risk, ellipse: EllipseKind | None = None, xva=None) -> Scenario:
    """Fifteen members, alternating hedging needs growing with i; member 15 defaults."""
    asset = AssetModel([MU], [[SIGMA**2]], ellipse or EllipseKind.gaussian())
    parts = {
        str(i): Participant(str(i), "clearing_member", risk, 0.0, 0.09 * i * i, [(-1) ** (i + 1) * 0.048 * i])
        for i in range(1, 16)
    }
    return Scenario(asset, (Exchange("D", tuple(parts)),), parts, "15", None, xva)


def entropic_15() -> Scenario:
    return fifteen_members(Entropic(1.0))


def es_15(ellipse: EllipseKind | None = None, xva=None) -> Scenario:
    return fifteen_members(ExpectedShortfall(0.975), ellipse, xva)


def symmetric_pair(n: int, delta: float, sigma: float, varrho: float, entrant_delta: float | None = None):
    """n survivors of which the last holds Cov = delta; the defaulter n+1 holds -delta."""
    asset = AssetModel([MU], [[sigma**2]])
    parts = {}
    for i in range(1, n + 2):
        cov = 0.0
        if i == n:
            cov = delta
        elif i == n + 1:
            cov = -delta
        parts[str(i)] = Participant(str(i), "clearing_member", Entropic(varrho), 0.0,
                                    max(4 * cov * cov / sigma**2, 0.01), [cov])
    entrants = ()
    if entrant_delta is not None:
        entrants = (Participant("e", "clearing_member", Entropic(varrho), 0.0,
                                max(4 * entrant_delta**2 / sigma**2, 0.01), [entrant_delta]),)
    s = Scenario(asset, (Exchange("D", tuple(parts)),), parts, str(n + 1))
    return s, entrants


def random_entropic(rng: np.random.Generator, m: int, k: int, with_external: bool = False) -> Scenario:
    """Random well-posed entropic Gaussian market with k members on D."""
    a = rng.normal(size=(m, m))
    gamma = a @ a.T / m + 0.2 * np.eye(m)
    asset = AssetModel(rng.uniform(1.0, 3.0, m), gamma)
    parts = {}
    for i in range(1, k + 1):
        cov = rng.normal(scale=0.3, size=m)
        var = float(cov @ np.linalg.solve(gamma, cov)) + rng.uniform(0.05, 1.0)
        parts[str(i)] = Participant(str(i), "clearing_member", Entropic(float(rng.uniform(0.3, 3.0))),
                                    float(rng.normal()), var, cov)
    exchanges = [Exchange("D", tuple(parts))]
    if with_external:
        ext = {}
        for i in range(k + 1, k + 4):
            cov = rng.normal(scale=0.3, size=m)
            var = float(cov @ np.linalg.solve(gamma, cov)) + 0.5
            ext[str(i)] = Participant(str(i), "clearing_member", Entropic(float(rng.uniform(0.3, 3.0))),
                                      0.0, var, cov)
        parts.update(ext)
        exchanges.append(Exchange("E", tuple(ext)))
    return Scenario(asset, tuple(exchanges), parts, str(k))


def random_es(rng: np.random.Generator, m: int, k: int, ellipse: EllipseKind | None = None) -> Scenario:
    a = rng.normal(size=(m, m))
    gamma = a @ a.T / m + 0.2 * np.eye(m)
    asset = AssetModel(rng.uniform(1.0, 3.0, m), gamma, ellipse or EllipseKind.gaussian())
    parts = {}
    for i in range(1, k + 1):
        cov = rng.normal(scale=0.3, size=m)
        var = float(cov @ np.linalg.solve(gamma, cov)) + rng.uniform(0.05, 1.0)
        parts[str(i)] = Participant(str(i), "clearing_member", ExpectedShortfall(float(rng.uniform(0.9, 0.99))),
                                    0.0, var, cov)
    return Scenario(asset, (Exchange("D", tuple(parts)),), parts, str(k))


def random_participant(rng, m, risk, definite=True):
    b = rng.normal(size=(m, m))
    gamma = b @ b.T / m + 0.3 * np.eye(m)
    asset = AssetModel(rng.uniform(0.5, 3.0, m), gamma)
    cov = rng.normal(scale=0.4, size=m)
    var = float(cov @ np.linalg.solve(gamma, cov)) + (rng.uniform(0.1, 1.0) if definite else 0.0)
    return Participant("x", "clearing_member", risk, float(rng.normal()), var, cov), asset


def gradient_fd_error(rng, risk, n_points: int) -> float:
    """Worst relative gap between grad_r and central differences over random points."""
    from ccp_ftp.risk_engine import grad_r, objective_r

    worst = 0.0
    for _ in range(n_points):
        m = int(rng.integers(1, 5))
        p, a = random_participant(rng, m, risk)
        q = rng.normal(scale=3.0, size=m)
        g = grad_r(p, a, q)
        h = 1e-6
        fd = np.array([(objective_r(p, a, q + h * e) - objective_r(p, a, q - h * e)) / (2 * h) for e in np.eye(m)])
        worst = max(worst, float(np.max(np.abs(g - fd) / (1 + np.abs(g)))))
    return worst


@dataclass(frozen=True)
class GridGap:
    position: float   # |grid argmin - solver position|
    value: float      # solver objective minus grid minimum
    step: float


def grid_search_gap(seed: int) -> GridGap:
    """Two members on one asset: compare the solver with a brute-force inf-convolution."""
    from ccp_ftp.equilibrium import solve_exchange
    from ccp_ftp.risk_engine import objective_r

    rng = np.random.default_rng(100 + seed)
    sigma = rng.uniform(0.1, 0.5)
    a = AssetModel([rng.uniform(1, 3)], [[sigma**2]])
    parts = {}
    for i in ("1", "2"):
        cov = rng.normal(scale=0.1)
        var = cov**2 / sigma**2 + rng.uniform(0.05, 0.5)
        risk = ExpectedShortfall(float(rng.uniform(0.9, 0.99))) if seed % 2 == 0 else Entropic(float(rng.uniform(0.5, 3)))
        parts[i] = Participant(i, "clearing_member", risk, 0.0, var, [cov])
    rhs = rng.normal(scale=2.0) if seed % 4 < 2 else 0.0
    eq = solve_exchange(Exchange("D", ("1", "2")), parts, a, clearing_rhs=[rhs])
    q1 = eq.positions["1"][0]

    def total(g):
        return objective_r(parts["1"], a, [g]) + objective_r(parts["2"], a, [rhs - g])

    grid = np.linspace(q1 - 40, q1 + 40, 400_001)
    step = grid[1] - grid[0]
    # coarse pass locates the basin, the fine pass resolves it
    coarse = grid[::1000]
    centre = coarse[np.argmin([total(g) for g in coarse])]
    fine = np.arange(centre - 0.3, centre + 0.3, step)
    values = np.array([total(g) for g in fine])
    return GridGap(abs(fine[np.argmin(values)] - q1), total(q1) - values.min(), step)


def aggregation_gaps(seed: int, strategy) -> dict[str, float]:
    """Merge two entropic defaulters and compare with the split market.

    The merged run must reproduce the split pre-default price and combined
    defaulted position, and its market cost must equal the cost computed
    member by member on the split market around the merged post-default state.
    """
    from ccp_ftp.resolution import StrategySpec, aggregate_defaulters, pre_default_equilibria, resolve
    from ccp_ftp.risk_engine import objective_r

    rng = np.random.default_rng(300 + seed)
    s = random_entropic(rng, int(rng.integers(1, 4)), 9)
    merged = aggregate_defaulters(s, ["8", "9"], "d")
    split = pre_default_equilibria(s)["D"]
    o = resolve(merged, StrategySpec(strategy))
    post = o.post["D"]
    p0, p1 = split.price, post.price
    mc = sum(q @ (p0 - p1) for q in post.positions.values())
    for pid, q_new in post.positions.items():
        if pid == "c":
            mc += objective_r(o.participants["c"], s.asset, q_new) + q_new @ p1
            continue
        p, q_old = s.participants[pid], split.positions[pid]
        mc += objective_r(p, s.asset, q_new) - objective_r(p, s.asset, q_old) + q_new @ p1 - q_old @ p0
    return {
        "price": float(np.max(np.abs(o.pre["D"].price - p0))),
        "q_d": float(np.max(np.abs(o.q_d - split.positions["8"] - split.positions["9"]))),
        "mc": abs(o.mc_total - mc),
    }


def positions(eq, ids) -> np.ndarray:
    return np.array([float(eq.positions[str(i)][0]) for i in ids])


IDS = list(range(1, 16))
SURVIVORS = list(range(1, 15))

# Entropic liquidation: pre-default and post-default positions
ENT_Q = [-0.56, 3.04, -2.96, 5.44, -5.36, 7.84, -7.76, 10.24, -10.16, 12.64, -12.56, 15.04, -14.96, 17.44, -17.36]
ENT_Q_LIQ = [-1.80, 1.80, -4.20, 4.20, -6.60, 6.60, -9.00, 9.00, -11.40, 11.40, -13.80, 13.80, -16.20, 16.20]
# Entropic hedging on the own exchange
ENT_Q_HEDGE = [-1.76, 1.84, -4.16, 4.24, -6.56, 6.64, -8.96, 9.04, -11.36, 11.44, -13.76, 13.84, -16.16, 16.24]
# Expected shortfall at 97.5% (liquidation and hedging share post-default positions)
ES_Q = [-1.12, 2.56, -3.36, 5.12, -5.60, 7.68, -7.84, 10.24, -10.08, 12.80, -12.32, 15.36, -14.56, 17.92, -16.80]
ES_Q_POST = [-1.28, 2.24, -3.84, 4.48, -6.40, 6.72, -8.96, 8.96, -11.52, 11.20, -14.08, 13.44, -16.64, 15.68]

# Per-member liquidity cost and risk increments, members 1..14 (then c for hedging)
ENT_LC_LIQ = [0.09, -0.09, 0.21, -0.21, 0.33, -0.33, 0.45, -0.45, 0.56, -0.56, 0.68, -0.68, 0.80, -0.80]
ENT_DR_LIQ = [-0.06, 0.1, -0.18, 0.24, -0.30, 0.36, -0.42, 0.48, -0.53, 0.60, -0.65, 0.72, -0.77, 0.83]
ENT_LC_HEDGE = [0.03, -0.15, 0.14, -0.26, 0.26, -0.38, 0.37, -0.49, 0.49, -0.61, 0.60, -0.72, 0.72, -0.84, 0.0]
ENT_DR_HEDGE = [-0.06, 0.12, -0.17, 0.23, -0.29, 0.35, -0.40, 0.46, -0.52, 0.58, -0.63, 0.69, -0.75, 0.81, 0.83]
ES_LC_LIQ = [0.11, -0.18, 0.32, -0.37, 0.53, -0.56, 0.74, -0.74, 0.95, -0.93, 1.167, -1.11, 1.38, -1.30]
ES_DR_LIQ = [-0.10, 0.20, -0.30, 0.40, -0.50, 0.60, -0.70, 0.80, -0.89, 0.99, -1.09, 1.19, -1.29, 1.39]
ES_LC_HEDGE = [0.09, -0.21, 0.28, -0.42, 0.46, -0.64, 0.65, -0.85, 0.84, -1.06, 1.02, -1.27, 1.21, -1.48, 0.0]
ES_DR_HEDGE = [-0.10, 0.20, -0.30, 0.40, -0.50, 0.60, -0.70, 0.80, -0.89, 0.99, -1.09, 1.19, -1.29, 1.39, 1.39]

# Collateralized (IM 75%, DF 80%) pre-default XVA of members 1..15
XVA_COLL = [0.37, 0.59, 0.72, 0.89, 1.00, 1.12, 1.21, 1.34, 1.42, 1.50, 1.57, 1.64, 1.72, 1.77, 1.85]
# Collateralized auction ranking, best first
AUCTION_COLL_RANKING = ["14", "12", "10", "8", "6", "4", "2", "1", "3", "5", "7", "9", "11", "13"]
