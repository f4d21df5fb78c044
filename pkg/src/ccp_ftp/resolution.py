"""Default resolution strategies and their market cost.

After member d defaults, the CCP either liquidates q_d, hedges it through a
CCP trading account c, replicates it (c holds exactly -q_d), or splits q_d
into a liquidated leg q_l and a hedged leg q_h = q_d - q_l.  Each strategy
is carried out on the defaulter's own exchange D or on an external
exchange E.  The cost of a strategy is

    MC = Σ_E (LC_E + Σ_{i∈E'} Δρ_i)

with the liquidity cost ``LC_E = Σ_{i∈E'} q'_iᵀ(p^E - p'^E)`` and the risk
increments ``Δρ_i = r_i(q'_i) - 1_{i≠c} r_i(q_i) + q'_iᵀp'^E - q_iᵀp^E``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .equilibrium import Equilibrium, solve_exchange
from .errors import StrategyMismatch, UnsupportedCombination, WrongRiskKind
from .market_model import (
    AssetModel,
    Diagnostic,
    Entropic,
    Exchange,
    ExpectedShortfall,
    Participant,
    Role,
    Scenario,
    as_vector,
    sorted_ids,
    validate_participant,
    validate_risk,
)
from .risk_engine import objective_r


class StrategyKind(str, enum.Enum):
    LIQUIDATE_OWN = "LiquidateOwn"
    LIQUIDATE_EXTERNAL = "LiquidateExternal"
    HEDGE_OWN = "HedgeOwn"
    HEDGE_EXTERNAL = "HedgeExternal"
    REPLICATE_OWN = "ReplicateOwn"
    REPLICATE_EXTERNAL = "ReplicateExternal"
    HYBRID_OWN = "HybridOwn"
    HYBRID_EXTERNAL = "HybridExternal"

    @property
    def row(self) -> int:
        """Line of the strategy in the market-cost decomposition table."""
        return list(StrategyKind).index(self) + 1

    @property
    def external(self) -> bool:
        return self.value.endswith("External")

    @property
    def family(self) -> str:
        return self.value.replace("Own", "").replace("External", "")

    @property
    def uses_hedger(self) -> bool:
        return self.family in ("Hedge", "Replicate", "Hybrid")


ALL_STRATEGIES = tuple(StrategyKind)


@dataclass(frozen=True, eq=False)
class StrategySpec:
    """A resolution strategy.

    ``exchange`` names the external exchange for the External kinds.
    ``hedger_risk`` defaults to the defaulter's own preferences.
    """

    kind: StrategyKind
    exchange: str | None = None
    q_d_liq: np.ndarray | None = None
    new_entrants: tuple[Participant, ...] = ()
    hedger_risk: Entropic | ExpectedShortfall | None = None
    hedger_id: str = "c"

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.exchange is not None:
            object.__setattr__(self, "exchange", str(self.exchange))
        if self.q_d_liq is not None:
            object.__setattr__(self, "q_d_liq", as_vector(self.q_d_liq, name="q_d_liq"))
        object.__setattr__(self, "new_entrants", tuple(self.new_entrants))

    def replace(self, **changes) -> "StrategySpec":
        kw = dict(kind=self.kind, exchange=self.exchange, q_d_liq=self.q_d_liq,
                  new_entrants=self.new_entrants, hedger_risk=self.hedger_risk,
                  hedger_id=self.hedger_id)
        kw.update(changes)
        return StrategySpec(**kw)

    def validate(self, s: Scenario) -> list[Diagnostic]:
        out = []
        k = self.kind
        if k.external:
            if self.exchange is None:
                out.append(Diagnostic("Error", "missing_exchange", f"{k.value} needs an external exchange"))
            elif self.exchange not in {e.id for e in s.exchanges}:
                out.append(Diagnostic("Error", "unknown_exchange", f"unknown exchange {self.exchange!r}"))
            elif s.defaulter in s.exchange(self.exchange).members:
                out.append(Diagnostic("Error", "external_contains_defaulter",
                                      f"exchange {self.exchange} contains the defaulter"))
        if k.family == "Hybrid":
            if self.q_d_liq is None or self.q_d_liq.shape[0] != s.asset.m:
                out.append(Diagnostic("Error", "bad_q_d_liq", f"{k.value} needs q_d_liq of length {s.asset.m}"))
        if k.uses_hedger:
            if self.hedger_id in s.participants:
                out.append(Diagnostic("Error", "hedger_id_taken", f"hedger id {self.hedger_id!r} is already used"))
            if self.hedger_risk is not None:
                out.extend(validate_risk(self.hedger_risk, s.asset.ellipse, f"hedger {self.hedger_id}"))
        seen = set(s.participants) | {self.hedger_id}
        for p in self.new_entrants:
            if p.id in seen:
                out.append(Diagnostic("Error", "entrant_id_taken", f"new entrant id {p.id!r} is already used"))
            seen.add(p.id)
            out.extend(validate_participant(p, s.asset))
        return out


@dataclass(frozen=True, eq=False)
class CcpHedger:
    """CCP trading account whose receivable is q_hᵀ(P - p^D)."""

    id: str
    q_h: np.ndarray
    price_ref: np.ndarray
    risk: Entropic | ExpectedShortfall

    def as_participant(self, asset: AssetModel) -> Participant:
        q = np.asarray(self.q_h, dtype=float)
        return Participant(
            self.id,
            Role.CCP_HEDGER,
            self.risk,
            float(q @ (asset.mu - self.price_ref)),
            float(q @ asset.gamma @ q),
            asset.gamma @ q,
        )


@dataclass(frozen=True, eq=False)
class PostDefaultPlan:
    """Post-default membership and clearing condition of one exchange."""

    exchange_id: str
    members: tuple[str, ...]
    clearing_rhs: np.ndarray
    hedger: Participant | None = None
    pinned: Mapping[str, np.ndarray] = field(default_factory=dict)
    liquidated: np.ndarray | None = None  # Σ of liquidation legs in this exchange


@dataclass(frozen=True, eq=False)
class ResolutionOutcome:
    strategy: StrategySpec
    pre: dict[str, Equilibrium]
    post: dict[str, Equilibrium]
    plans: dict[str, PostDefaultPlan]
    lc_per_exchange: dict[str, float]
    lc_per_participant: dict[str, float]
    delta_rho: dict[str, float]
    mc_per_exchange: dict[str, float]
    mc_total: float
    decomposition: dict
    q_d: np.ndarray
    participants: dict[str, Participant]
    legs: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lc_total(self) -> float:
        return float(sum(self.lc_per_exchange.values()))

    @property
    def sum_delta_rho(self) -> float:
        return float(sum(self.delta_rho.values()))

    def pre_position(self, pid: str) -> np.ndarray:
        for eq in self.pre.values():
            if pid in eq.positions:
                return eq.positions[pid]
        return np.zeros_like(self.q_d)

    def post_position(self, pid: str) -> np.ndarray | None:
        for eq in self.post.values():
            if pid in eq.positions:
                return eq.positions[pid]
        return None


# ---------------------------------------------------------------- operations


def pre_default_equilibria(s: Scenario) -> dict[str, Equilibrium]:
    """Solve every exchange at time 0- with zero net supply."""
    return {
        e.id: solve_exchange(e, s.participants, s.asset, np.zeros(s.asset.m))
        for e in s.exchanges
    }


def _strategy(s: Scenario, strategy: StrategySpec | None) -> StrategySpec:
    strategy = strategy if strategy is not None else s.strategy
    if strategy is None:
        raise StrategyMismatch("no resolution strategy given")
    diags = [d for d in strategy.validate(s) if d.severity == "Error"]
    if diags:
        raise StrategyMismatch("; ".join(d.message for d in diags))
    return strategy


def post_default_clearing(
    s: Scenario,
    pre: Mapping[str, Equilibrium],
    strategy: StrategySpec | None = None,
) -> dict[str, PostDefaultPlan]:
    """Post-default membership, clearing rhs and hedger for every exchange."""
    st = _strategy(s, strategy)
    own = s.own_exchange
    m = s.asset.m
    d = s.defaulter
    q_d = np.array(pre[own.id].positions[d])
    kind = st.kind
    target = st.exchange if kind.external else own.id
    p_ref = np.array(pre[own.id].price)
    hedger_risk = st.hedger_risk if st.hedger_risk is not None else s.participants[d].risk

    if kind.family == "Hybrid":
        q_l = np.array(st.q_d_liq, dtype=float)
    elif kind.family == "Liquidate":
        q_l = q_d.copy()
    else:
        q_l = np.zeros(m)
    q_h = q_d - q_l

    plans: dict[str, PostDefaultPlan] = {}
    for e in s.exchanges:
        members = tuple(i for i in e.members if i != d)
        rhs = np.zeros(m)
        if e.id == own.id:
            rhs = -q_d
        hedger = None
        pinned: dict[str, np.ndarray] = {}
        liquidated = np.zeros(m)
        if e.id == target:
            members = members + tuple(p.id for p in st.new_entrants)
            if kind.external:
                rhs = q_l.copy()
            else:
                rhs = -q_h if kind.family != "Replicate" else -q_d
            liquidated = q_l.copy()
            if kind.family == "Replicate":
                pinned[st.hedger_id] = -q_d
                rhs = rhs + q_d  # c's fixed position folded into the rhs
            elif kind.uses_hedger:
                hedger = CcpHedger(st.hedger_id, q_h, p_ref, hedger_risk).as_participant(s.asset)
        plans[e.id] = PostDefaultPlan(e.id, members, rhs, hedger, pinned, liquidated)
    return plans


def _solve_post(s: Scenario, plans, entrants) -> dict[str, Equilibrium]:
    pool = dict(s.participants)
    for p in entrants:
        pool[p.id] = p
    post = {}
    for eid, plan in plans.items():
        ex = Exchange(eid, plan.members)
        eq = solve_exchange(ex, pool, s.asset, plan.clearing_rhs, hedger=plan.hedger)
        if plan.pinned:
            positions = dict(eq.positions)
            positions.update({k: np.array(v) for k, v in plan.pinned.items()})
            rhs = plan.clearing_rhs + sum(plan.pinned.values())
            eq = Equilibrium(eq.exchange_id, positions, eq.price, eq.residual_kkt, eq.residual_clearing,
                             eq.method, eq.iterations, rhs, eq.residual_history,
                             frozenset(plan.pinned))
        post[eid] = eq
    return post


def _liquidation_legs(plan: PostDefaultPlan, pre_q, post_q, family: str, hedger_ids) -> dict[str, np.ndarray]:
    """Per-participant liquidation legs Δq^l_i."""
    ids = [i for i in post_q if i not in hedger_ids]
    dq = {i: post_q[i] - pre_q(i) for i in ids}
    if family == "Liquidate":
        return dq
    if family in ("Hedge", "Replicate"):
        return {i: np.zeros_like(v) for i, v in dq.items()}
    total = np.sum([dq[i] for i in ids], axis=0) if ids else np.zeros_like(plan.clearing_rhs)
    target = plan.liquidated
    legs = {}
    for i in ids:
        leg = np.empty_like(dq[i])
        for k in range(leg.shape[0]):
            if abs(total[k]) > 1e-14:
                leg[k] = dq[i][k] * target[k] / total[k]
            else:
                leg[k] = target[k] / len(ids)
        legs[i] = leg
    return legs


def liquidity_cost(pre, post, plans, strategy: StrategySpec, own_id: str, hedger_ids=("c",)):
    """Exchange-level and per-participant liquidity costs, plus the legs Δq^l_i."""
    lc_e: dict[str, float] = {}
    lc_i: dict[str, float] = {}
    all_legs: dict[str, np.ndarray] = {}

    def pre_q(eid):
        return lambda i: pre[eid].positions.get(i, np.zeros_like(pre[eid].price))

    for eid, eq in post.items():
        dp = pre[eid].price - eq.price
        lc_e[eid] = float(sum(q @ dp for q in eq.positions.values()))
        legs = _liquidation_legs(plans[eid], pre_q(eid), eq.positions, strategy.kind.family, hedger_ids)
        for pid in eq.positions:
            if pid in hedger_ids:
                lc_i[pid] = 0.0
                all_legs[pid] = np.zeros_like(dp)
            else:
                lc_i[pid] = float((pre_q(eid)(pid) + legs[pid]) @ dp)
                all_legs[pid] = legs[pid]
    return lc_e, lc_i, all_legs


def delta_rho(s: Scenario, pre, post, strategy: StrategySpec, participants, q_d) -> dict[str, float]:
    """Risk increments of every post-default participant."""
    out = {}
    a = s.asset
    for eid, eq in post.items():
        p_pre = pre[eid].price
        for pid, q_new in eq.positions.items():
            if pid == strategy.hedger_id and strategy.kind.family == "Replicate":
                out[pid] = float(q_d @ (pre[s.own_exchange.id].price - eq.price))
                continue
            part = participants[pid]
            q_old = pre[eid].positions.get(pid, np.zeros(a.m))
            val = objective_r(part, a, q_new) + q_new @ eq.price - q_old @ p_pre
            if pid != strategy.hedger_id:
                val -= objective_r(part, a, q_old)
            out[pid] = float(val)
    return out


def market_cost(lc_per_exchange, delta_rho_map, post, strategy: StrategySpec):
    mc_e = {
        eid: float(lc_per_exchange[eid] + sum(delta_rho_map[i] for i in eq.positions))
        for eid, eq in post.items()
    }
    mc_total = float(sum(mc_e.values()))
    row = {
        "row": strategy.kind.row,
        "strategy": strategy.kind.value,
        "lc": float(sum(lc_per_exchange.values())),
        "sum_delta_rho": float(sum(delta_rho_map.values())),
        "mc": mc_total,
    }
    return mc_e, mc_total, row


def resolve(s: Scenario, strategy: StrategySpec | None = None,
            pre: Mapping[str, Equilibrium] | None = None) -> ResolutionOutcome:
    """Full pipeline: pre-default → post-default → LC → Δρ → MC."""
    st = _strategy(s, strategy)
    pre = dict(pre) if pre is not None else pre_default_equilibria(s)
    plans = post_default_clearing(s, pre, st)
    post = _solve_post(s, plans, st.new_entrants)
    participants = dict(s.participants)
    for p in st.new_entrants:
        participants[p.id] = p
    for plan in plans.values():
        if plan.hedger is not None:
            participants[plan.hedger.id] = plan.hedger
    q_d = np.array(pre[s.own_exchange.id].positions[s.defaulter])
    if st.kind.family == "Replicate":
        participants[st.hedger_id] = CcpHedger(
            st.hedger_id, q_d, pre[s.own_exchange.id].price,
            st.hedger_risk or s.participants[s.defaulter].risk,
        ).as_participant(s.asset)
    lc_e, lc_i, legs = liquidity_cost(pre, post, plans, st, s.own_exchange.id, (st.hedger_id,))
    drho = delta_rho(s, pre, post, st, participants, q_d)
    mc_e, mc_total, row = market_cost(lc_e, drho, post, st)
    return ResolutionOutcome(st, pre, post, plans, lc_e, lc_i, drho, mc_e, mc_total, row, q_d, participants, legs)


# ---------------------------------------------------------------- closed form


def _entropic_aggregate(parts: Sequence[Participant], m: int):
    for p in parts:
        if not isinstance(p.risk, Entropic):
            raise WrongRiskKind(f"participant {p.id} is not entropic")
    varrho = 1.0 / sum(1.0 / p.risk.varrho for p in parts)
    cov = np.sum([p.cov_r for p in parts], axis=0) if parts else np.zeros(m)
    return varrho, cov


def entropic_mc_closed_form(s: Scenario, strategy: StrategySpec | None = None) -> float:
    """Market cost of own-exchange liquidation or hedging straight from moments.

    Liquidation allows new entrants; hedging is supported without them.
    """
    st = _strategy(s, strategy)
    a = s.asset
    if not a.ellipse.is_gaussian:
        raise WrongRiskKind("closed-form market cost needs Gaussian moments")
    own = s.own_exchange
    d = s.defaulter
    members = [s.participants[i] for i in own.members]
    varrho, cov = _entropic_aggregate(members, a.m)
    gi = np.linalg.inv(a.gamma)
    gamma = a.gamma
    q_d = gi @ ((varrho / s.participants[d].risk.varrho) * cov - s.participants[d].cov_r)
    survivors = [p for p in members if p.id != d]
    entrants = list(st.new_entrants)

    if st.kind == StrategyKind.LIQUIDATE_OWN:
        post_parts = survivors + entrants
        varrho_p, cov_p = _entropic_aggregate(post_parts, a.m)
        mc = 0.5 * varrho_p * q_d @ gamma @ q_d
        if entrants:
            shift = gi @ np.sum([(varrho / j.risk.varrho) * cov - j.cov_r for j in entrants], axis=0)
            mc -= varrho_p * shift @ (cov_p + 0.5 * gamma @ q_d)
            for i in entrants:
                q_new = gi @ ((varrho_p / i.risk.varrho) * cov_p - i.cov_r)
                mc += (gi @ (varrho * cov - i.risk.varrho * i.cov_r)) @ (i.cov_r + 0.5 * gamma @ q_new)
        return float(mc)

    if st.kind == StrategyKind.HEDGE_OWN:
        if entrants:
            raise UnsupportedCombination("closed-form hedging cost assumes no new entrants")
        risk_c = st.hedger_risk if st.hedger_risk is not None else s.participants[d].risk
        if not isinstance(risk_c, Entropic):
            raise WrongRiskKind("closed-form hedging cost needs an entropic hedger")
        rc = risk_c.varrho
        varrho_p = 1.0 / (sum(1.0 / p.risk.varrho for p in survivors) + 1.0 / rc)
        return float(
            varrho**2 * (varrho_p - rc) / (2.0 * rc**2) * cov @ gi @ cov
            + 0.5 * varrho_p * q_d @ gamma @ q_d
            - (varrho_p * varrho / rc) * q_d @ cov
        )
    raise UnsupportedCombination(f"no closed form for {st.kind.value}")


def aggregate_defaulters(s: Scenario, ids: Sequence[str], new_id: str | None = None) -> Scenario:
    """Fold several entropic members of one exchange into a single defaulter.

    The merged member has risk tolerance 1/ϱ = Σ 1/ϱ_k and receivable
    moments E[R] = Σ E[R_k], cov = Σ cov_k, so its equilibrium position is
    Σ q_k and every other position and price is unchanged.  The joint
    variance of the R_k is not part of the data; the comonotone bound
    (Σ sqrt Var R_k)² keeps the merged moments valid and does not enter any
    market cost.
    """
    ids = list(ids)
    if len(ids) < 1:
        raise StrategyMismatch("no defaulters to aggregate")
    parts = [s.participants[i] for i in ids]
    if not all(isinstance(p.risk, Entropic) for p in parts):
        raise WrongRiskKind("defaulters can only be aggregated under entropic preferences")
    homes = {e.id for e in s.exchanges for i in ids if i in e.members}
    if len(homes) != 1:
        raise StrategyMismatch("aggregated defaulters must share one exchange")
    new_id = new_id or "+".join(ids)
    merged = Participant(
        new_id, parts[0].role,
        Entropic(1.0 / sum(1.0 / p.risk.varrho for p in parts)),
        float(sum(p.er for p in parts)),
        float(sum(np.sqrt(p.var_r) for p in parts) ** 2),
        np.sum([p.cov_r for p in parts], axis=0),
    )
    participants = {k: v for k, v in s.participants.items() if k not in ids}
    participants[new_id] = merged
    exchanges = []
    for e in s.exchanges:
        if e.id in homes:
            members = [i for i in e.members if i not in ids] + [new_id]
            e = Exchange(e.id, tuple(members), e.clearing_rhs)
        exchanges.append(e)
    return s.replace(participants=participants, exchanges=tuple(exchanges), defaulter=new_id)


def strategy_ids(outcome: ResolutionOutcome) -> list[str]:
    ids = set()
    for eq in outcome.post.values():
        ids.update(eq.positions)
    return sorted_ids(ids)
