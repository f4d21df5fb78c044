"""Credit costs of a default resolution: margins, XVAs, auction cost and FTP.

Defaults over the horizon follow a one-factor Gaussian latent model,
``X_i = sqrt(ϱ_cr) ε + sqrt(1 - ϱ_cr) ε_i`` with default iff
``X_i <= Φ⁻¹(γ_i)``.  The traded payoff P is drawn independently of the
credit factors.  For a clearing member 0 of an exchange, the credit loss is
its share of the losses of defaulted members in excess of their margins,

    C_0 = w_0 Σ_j (1 - J_j) [ (client_j - IM_j)⁺ + (house_j - IM̄_j)⁺ - DF_j ]⁺

plus the losses on its own cleared clients.  From C_0 the engine derives

* CVA = E[J_0 C_0] / (1 - γ_0)
* MVA = γ̃_0 (IM + IM̄ + DF)
* KVA = h/(1+h) · ES_α̃(C_0 - CVA) under the survival measure
* FVA = γ_0/(1+γ_0) · (Σ E R^o - CVA - MVA - ES)⁺

All Monte Carlo estimates for the pools of one run share the same random
draws, so differences between pools are computed with common random
numbers.  Each batch owns a stream spawned from the run seed and batches are
reduced in index order, which makes results identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import InsufficientTail, InvalidParam, NoSurvivors, WeightUndefined
from .market_model import (
    AssetModel,
    Diagnostic,
    ExpectedShortfall,
    Role,
    Scenario,
    sorted_ids,
)
from .resolution import ResolutionOutcome, StrategyKind, StrategySpec, resolve
from .risk_engine import quantile_standardized

KVA_SCALINGS = ("survival_density", "plain")
MIN_TAIL = 100


@dataclass(frozen=True, eq=False)
class XvaConfig:
    """Credit and funding configuration.

    ``gamma`` is a default probability over the horizon, either one number
    for everyone or a map from participant id (missing ids use ``"*"``).
    ``funding_blend`` is the ratio γ̃/γ of the blended funding rate.
    ``clearing_via`` maps simple participants to the clearing member whose
    client account carries them.  ``kva_scaling`` selects how the survival
    measure enters the KVA estimator (see :func:`kva`).
    """

    horizon: float = 5.0
    gamma: float | Mapping[str, float] = 0.393
    funding_blend: float = 0.25
    rho_cr: float = 0.2
    collateralized: bool = True
    alpha_im: float = 0.75
    alpha_df: float = 0.80
    alpha_kva: float = 0.9975
    hurdle: float = 0.1
    n_paths: int = 1_000_000
    n_batches: int = 10
    seed: int = 20240607
    kva_scaling: str = "survival_density"
    otc_receivables: Mapping[str, float] = field(default_factory=dict)
    clearing_via: Mapping[str, str] = field(default_factory=dict)
    workers: int = 1

    def gamma_of(self, pid: str) -> float:
        if isinstance(self.gamma, Mapping):
            if str(pid) in self.gamma:
                return float(self.gamma[str(pid)])
            return float(self.gamma.get("*", 0.0))
        return float(self.gamma)

    def replace(self, **changes) -> "XvaConfig":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return XvaConfig(**kw)

    @property
    def batch_size(self) -> int:
        return self.n_paths // self.n_batches

    def validate(self, s: Scenario | None = None) -> list[Diagnostic]:
        out = []

        def err(code, msg):
            out.append(Diagnostic("Error", code, msg))

        gammas = list(self.gamma.values()) if isinstance(self.gamma, Mapping) else [self.gamma]
        if any(not (0.0 <= float(g) < 1.0) for g in gammas):
            err("gamma_out_of_range", "default probabilities must lie in [0, 1)")
        if not 0.0 <= self.funding_blend <= 1.0:
            err("blend_out_of_range", "funding_blend must lie in [0, 1]")
        if not 0.0 <= self.rho_cr < 1.0:
            err("rho_cr_out_of_range", "rho_cr must lie in [0, 1)")
        if not 0.0 < self.alpha_im < 1.0 or not 0.0 < self.alpha_df < 1.0:
            err("alpha_margin_out_of_range", "margin confidence levels must lie in (0, 1)")
        elif self.alpha_df <= self.alpha_im:
            err("alpha_df_not_above_im", "alpha_df must exceed alpha_im")
        if not 0.0 < self.alpha_kva < 1.0:
            err("alpha_kva_out_of_range", "alpha_kva must lie in (0, 1)")
        if self.hurdle < 0:
            err("negative_hurdle", "hurdle rate must be >= 0")
        if self.n_batches < 1 or self.n_paths < 1 or self.n_paths % self.n_batches:
            err("bad_paths", "n_paths must be a positive multiple of n_batches")
        if self.kva_scaling not in KVA_SCALINGS:
            err("bad_kva_scaling", f"kva_scaling must be one of {KVA_SCALINGS}")
        if self.workers < 1:
            err("bad_workers", "workers must be >= 1")
        if s is not None:
            for p in s.participants.values():
                if isinstance(p.risk, ExpectedShortfall) and self.alpha_kva <= p.risk.alpha:
                    err("alpha_kva_not_above_market",
                        f"alpha_kva must exceed the market-risk level of participant {p.id}")
            for client, member in self.clearing_via.items():
                if client not in s.participants or member not in s.participants:
                    err("unknown_clearing_link", f"clearing link {client} -> {member} is unknown")
                    continue
                if s.participants[member].role != Role.CLEARING_MEMBER:
                    err("clearing_via_non_member", f"{member} is not a clearing member")
                if member == s.defaulter:
                    err("porting_not_modelled", f"client {client} clears through the defaulter")
                if {e.id for e in s.exchanges_of(client)} != {e.id for e in s.exchanges_of(member)}:
                    err("clearing_link_exchange", f"{client} and {member} trade on different exchanges")
        return out


# ---------------------------------------------------------------- margins


@dataclass(frozen=True, eq=False)
class MarginProfile:
    ids: tuple[str, ...]
    im: np.ndarray           # proprietary account IM̄
    client_im: np.ndarray    # client account IM charged by the CCP
    sloim: np.ndarray
    df: np.ndarray

    def of(self, pid: str) -> dict[str, float]:
        k = self.ids.index(pid)
        return {"im": float(self.im[k]), "client_im": float(self.client_im[k]),
                "sloim": float(self.sloim[k]), "df": float(self.df[k])}


def _risk_size(q: np.ndarray, asset: AssetModel) -> np.ndarray:
    q = np.atleast_2d(q)
    return np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", q, asset.gamma, q), 0.0))


def value_at_risk_margin(q: np.ndarray, price_ref, asset: AssetModel, alpha: float) -> np.ndarray:
    """VaR margin qᵀ(p - μ) + sqrt(qᵀΓq) z_α of the loss qᵀ(p - P)."""
    q = np.atleast_2d(q)
    z = quantile_standardized(asset.ellipse, alpha)
    return q @ (np.asarray(price_ref) - asset.mu) + _risk_size(q, asset) * z


def cover2(sloim: np.ndarray) -> np.ndarray:
    """Allocate the two largest stressed losses pro-rata to every SLOIM."""
    sloim = np.asarray(sloim, dtype=float)
    total = sloim.sum()
    if total <= 0:
        return np.zeros_like(sloim)
    top2 = np.sort(sloim)[-2:].sum()
    return sloim / total * top2


def compute_margins(
    ids: Sequence[str],
    house: np.ndarray,
    client: np.ndarray | None,
    price_ref,
    asset: AssetModel,
    cfg: XvaConfig,
) -> MarginProfile:
    """IM by VaR at alpha_im, DF by cover-2 on the stressed loss over IM."""
    if cfg.alpha_df <= cfg.alpha_im:
        raise InvalidParam("alpha_df must exceed alpha_im")
    house = np.atleast_2d(np.asarray(house, dtype=float))
    client = np.zeros_like(house) if client is None else np.atleast_2d(client)
    k = house.shape[0]
    if not cfg.collateralized:
        z = np.zeros(k)
        return MarginProfile(tuple(ids), z, z.copy(), z.copy(), z.copy())
    im = value_at_risk_margin(house, price_ref, asset, cfg.alpha_im)
    cim = value_at_risk_margin(client, price_ref, asset, cfg.alpha_im)
    spread = quantile_standardized(asset.ellipse, cfg.alpha_df) - quantile_standardized(asset.ellipse, cfg.alpha_im)
    sloim = (_risk_size(house, asset) + _risk_size(client, asset)) * spread
    return MarginProfile(tuple(ids), im, cim, sloim, cover2(sloim))


# ---------------------------------------------------------------- credit pools


@dataclass(frozen=True, eq=False)
class CreditPool:
    """Clearing members of one exchange in one state, ready for simulation.

    A member's loss on default of j is ``a_j - q_jᵀP`` on each account, so
    ``offset`` carries the deterministic part of the variation-margin call.
    ``credit_col`` indexes the latent default draws; -1 marks a
    non-defaultable member (the CCP trading account).
    """

    name: str
    ids: tuple[str, ...]
    house: np.ndarray
    house_offset: np.ndarray
    client: np.ndarray
    client_offset: np.ndarray
    margins: MarginProfile
    weights: np.ndarray
    credit_col: np.ndarray
    gamma: np.ndarray
    gamma_funding: np.ndarray
    otc: np.ndarray
    clients_pos: np.ndarray          # (n_clients, m)
    clients_offset: np.ndarray
    clients_im: np.ndarray
    clients_member: np.ndarray       # index into ids
    clients_col: np.ndarray

    @property
    def k(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class PoolMember:
    id: str
    house: np.ndarray
    house_offset: float
    client: np.ndarray | None = None
    client_offset: float = 0.0
    defaultable: bool = True


@dataclass(frozen=True)
class PoolClient:
    id: str
    member: str
    position: np.ndarray
    offset: float


def make_pool(
    name: str,
    members: Sequence[PoolMember],
    clients: Sequence[PoolClient],
    price_ref,
    asset: AssetModel,
    cfg: XvaConfig,
    credit_ids: Sequence[str],
) -> CreditPool:
    m = asset.m
    ids = tuple(mb.id for mb in members)
    house = np.array([np.asarray(mb.house, dtype=float) for mb in members]).reshape(len(ids), m)
    client = np.array([
        np.zeros(m) if mb.client is None else np.asarray(mb.client, dtype=float) for mb in members
    ]).reshape(len(ids), m)
    margins = compute_margins(ids, house, client, price_ref, asset, cfg)
    if margins.df.sum() > 0:
        weights = margins.df.copy()
    else:
        # without a default fund, allocate pro-rata to risk size
        weights = _risk_size(house, asset) + _risk_size(client, asset)
    col_of = {pid: k for k, pid in enumerate(credit_ids)}
    credit_col = np.array([col_of[mb.id] if mb.defaultable else -1 for mb in members], dtype=int)
    # a non-defaultable account has no default risk of its own to price
    # unless the configuration names it explicitly
    explicit = cfg.gamma if isinstance(cfg.gamma, Mapping) else {}
    gamma = np.array([
        cfg.gamma_of(mb.id) if mb.defaultable or mb.id in explicit else 0.0 for mb in members
    ])
    if clients:
        c_pos = np.array([c.position for c in clients], dtype=float).reshape(len(clients), m)
        c_off = np.array([c.offset for c in clients], dtype=float)
        c_im = value_at_risk_margin(c_pos, price_ref, asset, cfg.alpha_im) if cfg.collateralized \
            else np.zeros(len(clients))
        c_mem = np.array([ids.index(c.member) for c in clients], dtype=int)
        c_col = np.array([col_of[c.id] for c in clients], dtype=int)
    else:
        c_pos = np.zeros((0, m))
        c_off = c_im = np.zeros(0)
        c_mem = c_col = np.zeros(0, dtype=int)
    return CreditPool(
        name, ids, house,
        np.array([mb.house_offset for mb in members], dtype=float),
        client,
        np.array([mb.client_offset for mb in members], dtype=float),
        margins, weights, credit_col, gamma, cfg.funding_blend * gamma,
        np.array([float(cfg.otc_receivables.get(pid, 0.0)) for pid in ids]),
        c_pos, c_off, c_im, c_mem, c_col,
    )


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True)
class BatchDraws:
    price: np.ndarray      # (n, m) simulated payoff P
    survive: np.ndarray    # (n, n_credit) survival indicators J


def _latent_thresholds(credit_ids: Sequence[str], cfg: XvaConfig) -> np.ndarray:
    gam = np.array([cfg.gamma_of(pid) for pid in credit_ids])
    with np.errstate(divide="ignore"):
        return stats.norm.ppf(gam)


def simulate_defaults(cfg: XvaConfig, credit_ids: Sequence[str], asset: AssetModel,
                      batch: int, n_base: int | None = None) -> BatchDraws:
    """Draws of one batch.

    The first ``n_base`` credit ids draw their idiosyncratic factors before
    the rest, so appending ids (new entrants) leaves earlier draws unchanged.
    """
    seq = np.random.SeedSequence(cfg.seed).spawn(cfg.n_batches)[batch]
    rng = np.random.default_rng(seq)
    n = cfg.batch_size
    m = asset.m
    n_base = len(credit_ids) if n_base is None else n_base
    y = rng.standard_normal((n, m))
    if not asset.ellipse.is_gaussian:
        nu = asset.ellipse.nu
        y = y * np.sqrt((nu - 2.0) / rng.chisquare(nu, size=n))[:, None]
    chol = np.linalg.cholesky(asset.gamma)
    price = asset.mu + y @ chol.T
    common = rng.standard_normal(n)
    idio = rng.standard_normal((n, n_base))
    if len(credit_ids) > n_base:
        idio = np.hstack([idio, rng.standard_normal((n, len(credit_ids) - n_base))])
    latent = math.sqrt(cfg.rho_cr) * common[:, None] + math.sqrt(1.0 - cfg.rho_cr) * idio
    survive = latent > _latent_thresholds(credit_ids, cfg)[None, :]
    return BatchDraws(price, survive)


def pool_survival(pool: CreditPool, draws: BatchDraws) -> np.ndarray:
    n = draws.price.shape[0]
    j = np.ones((n, pool.k), dtype=bool)
    mask = pool.credit_col >= 0
    j[:, mask] = draws.survive[:, pool.credit_col[mask]]
    return j


def allocation_weights(pool: CreditPool, survive: np.ndarray) -> np.ndarray:
    """w_0 = W_0 J_0 / Σ_j W_j J_j, equal split among survivors if that is 0/0."""
    w = survive * pool.weights[None, :]
    den = w.sum(axis=1)
    n_alive = survive.sum(axis=1)
    out = np.zeros_like(w, dtype=float)
    ok = den > 0
    out[ok] = w[ok] / den[ok, None]
    fallback = (~ok) & (n_alive > 0)
    out[fallback] = survive[fallback] / n_alive[fallback, None]
    return out


def credit_loss(pool: CreditPool, draws: BatchDraws, survive: np.ndarray | None = None) -> np.ndarray:
    """Credit loss profile C_0 of every pool member, shape (n, k)."""
    survive = pool_survival(pool, draws) if survive is None else survive
    price = draws.price
    house = np.maximum(pool.house_offset[None, :] - price @ pool.house.T - pool.margins.im[None, :], 0.0)
    client = np.maximum(pool.client_offset[None, :] - price @ pool.client.T
                        - pool.margins.client_im[None, :], 0.0)
    loss = np.maximum(house + client - pool.margins.df[None, :], 0.0)
    total = ((~survive) * loss).sum(axis=1)
    if pool.weights.sum() <= 0 and np.any(total > 0):
        raise WeightUndefined(f"pool {pool.name}: no loss-allocation weight")
    out = allocation_weights(pool, survive) * total[:, None]
    if pool.clients_pos.shape[0]:
        c_alive = draws.survive[:, pool.clients_col]
        c_loss = (~c_alive) * np.maximum(
            pool.clients_offset[None, :] - price @ pool.clients_pos.T - pool.clients_im[None, :], 0.0
        )
        for b, k in enumerate(pool.clients_member):
            out[:, k] += c_loss[:, b]
    return out


def _upper_tail_mean(x: np.ndarray, alpha: float) -> float:
    """Expected shortfall of a sample: mean of its ceil((1-α)n) largest values."""
    n = x.shape[0]
    k = max(int(math.ceil((1.0 - alpha) * n)), 1)
    if k >= n:
        return float(x.mean())
    return float(np.partition(x, n - k)[n - k:].mean())


@dataclass(frozen=True)
class _BatchStats:
    s1: np.ndarray        # Σ J C
    s2: np.ndarray        # Σ (J C)²
    es: np.ndarray        # ES of C over survivors
    n_alive: np.ndarray


def _pool_batch(pool: CreditPool, draws: BatchDraws, alpha_kva: float) -> _BatchStats:
    survive = pool_survival(pool, draws)
    c = credit_loss(pool, draws, survive)
    jc = survive * c
    es = np.empty(pool.k)
    n_alive = survive.sum(axis=0)
    for k in range(pool.k):
        alive = c[survive[:, k], k]
        if (1.0 - alpha_kva) * alive.shape[0] < MIN_TAIL:
            raise InsufficientTail(
                f"pool {pool.name}, member {pool.ids[k]}: only {alive.shape[0]} surviving paths "
                f"in a batch, too few for ES at {alpha_kva}"
            )
        es[k] = _upper_tail_mean(alive, alpha_kva)
    return _BatchStats(jc.sum(axis=0), (jc**2).sum(axis=0), es, n_alive)


def _run_batch(args):
    pools, cfg, credit_ids, n_base, asset, batch = args
    draws = simulate_defaults(cfg, credit_ids, asset, batch, n_base)
    return [_pool_batch(p, draws, cfg.alpha_kva) for p in pools]


@dataclass(frozen=True, eq=False)
class PoolXva:
    """Per-member XVA estimates of one pool."""

    name: str
    ids: tuple[str, ...]
    cva: np.ndarray
    mva: np.ndarray
    kva: np.ndarray
    fva: np.ndarray
    es: np.ndarray
    cva_se: np.ndarray
    kva_se: np.ndarray
    margins: MarginProfile

    @property
    def xva(self) -> np.ndarray:
        return self.cva + self.mva + self.kva + self.fva

    def of(self, pid: str) -> dict[str, float]:
        k = self.ids.index(pid)
        return {"cva": float(self.cva[k]), "mva": float(self.mva[k]), "kva": float(self.kva[k]),
                "fva": float(self.fva[k]), "xva": float(self.xva[k]),
                "cva_se": float(self.cva_se[k]), "kva_se": float(self.kva_se[k])}


def cva(s1: np.ndarray, n_paths: int, gamma: np.ndarray) -> np.ndarray:
    """(1-γ)⁻¹ E[J C] from the sample sum of J C."""
    return s1 / n_paths / (1.0 - gamma)


def mva(margins: MarginProfile, gamma_funding: np.ndarray) -> np.ndarray:
    return gamma_funding * (margins.im + margins.client_im + margins.df)


def kva(es_mean: np.ndarray, cva_value: np.ndarray, gamma: np.ndarray, cfg: XvaConfig) -> np.ndarray:
    """h/(1+h) κ (ES_α̃(C | J=1) - CVA), clamped at 0.

    The ES of C - CVA equals ES(C) - CVA by translation equivariance.  With
    ``kva_scaling="survival_density"`` the tail term is rescaled by
    κ = 1/(1-γ), the density of the survival measure; ``"plain"`` uses κ = 1.
    """
    kappa = 1.0 / (1.0 - gamma) if cfg.kva_scaling == "survival_density" else np.ones_like(gamma)
    return cfg.hurdle / (1.0 + cfg.hurdle) * np.maximum(kappa * (es_mean - cva_value), 0.0)


def fva(otc: np.ndarray, cva_value, mva_value, es_term, gamma: np.ndarray) -> np.ndarray:
    return gamma / (1.0 + gamma) * np.maximum(otc - cva_value - mva_value - es_term, 0.0)


class XvaEngine:
    """One Monte Carlo pass over any number of pools with shared draws."""

    def __init__(self, cfg: XvaConfig, asset: AssetModel, credit_ids: Sequence[str],
                 n_base: int | None = None):
        diags = [d for d in cfg.validate() if d.severity == "Error"]
        if diags:
            raise InvalidParam("; ".join(d.message for d in diags))
        self.cfg = cfg
        self.asset = asset
        self.credit_ids = tuple(credit_ids)
        self.n_base = len(self.credit_ids) if n_base is None else n_base

    def run(self, pools: Sequence[CreditPool]) -> dict[str, PoolXva]:
        cfg = self.cfg
        jobs = [(tuple(pools), cfg, self.credit_ids, self.n_base, self.asset, b)
                for b in range(cfg.n_batches)]
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
                per_batch = list(ex.map(_run_batch, jobs))
        else:
            per_batch = [_run_batch(j) for j in jobs]
        out = {}
        n = cfg.n_batches * cfg.batch_size
        for i, pool in enumerate(pools):
            s1 = np.zeros(pool.k)
            s2 = np.zeros(pool.k)
            es = np.zeros((cfg.n_batches, pool.k))
            for b, stats_b in enumerate(per_batch):  # fixed reduction order
                s1 += stats_b[i].s1
                s2 += stats_b[i].s2
                es[b] = stats_b[i].es
            cva_v = cva(s1, n, pool.gamma)
            var = np.maximum(s2 / n - (s1 / n) ** 2, 0.0)
            cva_se = np.sqrt(var / n) / (1.0 - pool.gamma)
            es_mean = es.mean(axis=0)
            kva_v = kva(es_mean, cva_v, pool.gamma, cfg)
            kappa = 1.0 / (1.0 - pool.gamma) if cfg.kva_scaling == "survival_density" else 1.0
            es_se = es.std(axis=0, ddof=1) / math.sqrt(cfg.n_batches) if cfg.n_batches > 1 \
                else np.full(pool.k, np.nan)
            kva_se = cfg.hurdle / (1.0 + cfg.hurdle) * kappa * es_se
            mva_v = mva(pool.margins, pool.gamma_funding)
            es_term = kappa * (es_mean - cva_v)
            fva_v = fva(pool.otc, cva_v, mva_v, es_term, pool.gamma)
            out[pool.name] = PoolXva(pool.name, pool.ids, cva_v, mva_v, kva_v, fva_v, es_mean,
                                     cva_se, kva_se, pool.margins)
        return out


# ---------------------------------------------------------------- pool states


@dataclass(frozen=True, eq=False)
class ExchangeState:
    """Positions, exposure offsets and reference prices of one exchange."""

    exchange_id: str
    positions: dict[str, np.ndarray]
    offsets: dict[str, float]
    price_ref: np.ndarray
    non_defaultable: frozenset[str] = frozenset()


def _pool_from_state(name: str, st: ExchangeState, s: Scenario, cfg: XvaConfig,
                     credit_ids: Sequence[str], extra: Mapping | None = None) -> CreditPool:
    roles = {}
    for pid in st.positions:
        p = s.participants.get(pid) or (extra or {}).get(pid)
        roles[pid] = p.role if p is not None else Role.CCP_HEDGER
    clients_of: dict[str, list[str]] = {}
    for client, member in cfg.clearing_via.items():
        if client in st.positions:
            clients_of.setdefault(member, []).append(client)
    members = []
    for pid in sorted_ids(st.positions):
        if roles[pid] == Role.SIMPLE_PARTICIPANT and pid in cfg.clearing_via:
            continue
        cl = clients_of.get(pid, [])
        client = np.sum([st.positions[c] for c in cl], axis=0) if cl else None
        client_off = float(sum(st.offsets[c] for c in cl)) if cl else 0.0
        members.append(PoolMember(pid, st.positions[pid], st.offsets[pid], client, client_off,
                                  pid not in st.non_defaultable))
    clients = [PoolClient(c, cfg.clearing_via[c], st.positions[c], st.offsets[c])
               for c in sorted_ids(cfg.clearing_via) if c in st.positions]
    return make_pool(name, members, clients, st.price_ref, s.asset, cfg, credit_ids)


def pre_default_states(outcome: ResolutionOutcome) -> dict[str, ExchangeState]:
    out = {}
    for eid, eq in outcome.pre.items():
        out[eid] = ExchangeState(eid, dict(eq.positions),
                                 {pid: float(q @ eq.price) for pid, q in eq.positions.items()},
                                 np.array(eq.price))
    return out


def post_default_states(outcome: ResolutionOutcome) -> dict[str, ExchangeState]:
    """Exposure ``q'ᵀ(p' - P) + (q + Δq^l)ᵀ(p - p')``; margins at pre-default prices."""
    out = {}
    hid = outcome.strategy.hedger_id
    for eid, eq in outcome.post.items():
        p_pre = outcome.pre[eid].price
        offsets = {}
        for pid, q_new in eq.positions.items():
            q_old = outcome.pre[eid].positions.get(pid, np.zeros_like(q_new))
            leg = outcome.legs.get(pid, np.zeros_like(q_new))
            if pid == hid:
                q_old = np.zeros_like(q_new)
            offsets[pid] = float(q_new @ eq.price + (q_old + leg) @ (p_pre - eq.price))
        out[eid] = ExchangeState(eid, dict(eq.positions), offsets, np.array(p_pre),
                                 frozenset([hid]) if hid in eq.positions else frozenset())
    return out


def auction_state(base: ExchangeState, taker: str, package: np.ndarray, package_price,
                  leaving: Sequence[str] = ()) -> ExchangeState:
    """``taker`` absorbs ``package`` at fixed prices; ``leaving`` accounts are closed."""
    positions = {k: v for k, v in base.positions.items() if k not in leaving}
    offsets = {k: v for k, v in base.offsets.items() if k not in leaving}
    positions[taker] = positions[taker] + package
    offsets[taker] = offsets[taker] + float(package @ np.asarray(package_price))
    return ExchangeState(base.exchange_id, positions, offsets, base.price_ref,
                         base.non_defaultable - set(leaving))


# ---------------------------------------------------------------- reports


@dataclass(frozen=True, eq=False)
class TakerQuote:
    taker: str
    ac: float
    d_cva: float
    d_mva: float
    d_kva: float
    d_fva: float


@dataclass(frozen=True, eq=False)
class XvaReport:
    name: str
    pre: dict[str, dict[str, float]]
    post: dict[str, dict[str, float]]
    delta_xva: dict[str, float]
    sum_delta_xva: float
    ac: float
    taker: str | None
    ranking: tuple[TakerQuote, ...]
    lc: float
    sum_delta_rho: float
    mc: float
    cc: float
    ftp: float
    mc_error: dict[str, float]

    def row(self) -> dict:
        return {"strategy": self.name, "lc": self.lc, "sum_delta_rho": self.sum_delta_rho,
                "sum_delta_xva": self.sum_delta_xva, "ac": self.ac, "ftp": self.ftp}


def ftp(name: str, mc_parts: tuple[float, float], pre_x: Mapping[str, dict], post_x: Mapping[str, dict],
        survivors: Sequence[str], ac: float = 0.0, taker: str | None = None,
        ranking: Sequence[TakerQuote] = ()) -> XvaReport:
    """CC = Σ ΔXVA over pre-existing survivors + AC and FTP = MC + CC."""
    lc, sdr = mc_parts
    delta = {pid: post_x[pid]["xva"] - pre_x[pid]["xva"] for pid in survivors}
    sdx = float(sum(delta.values()))
    mc = lc + sdr
    total = mc + (sdx + ac)
    cc = total - mc  # reported parts satisfy FTP - MC == CC in floating point
    err = float(math.sqrt(sum(post_x[p]["cva_se"] ** 2 + pre_x[p]["cva_se"] ** 2 for p in survivors)))
    return XvaReport(name, dict(pre_x), dict(post_x), delta, sdx, float(ac), taker, tuple(ranking),
                     float(lc), float(sdr), float(mc), float(cc), float(total),
                     {"sum_delta_cva_se_upper": err})


COMPOSITES = ("auction", "hedge_then_auction")


def _flatten(results: Mapping[str, PoolXva], names: Sequence[str]) -> dict[str, dict[str, float]]:
    out = {}
    for n in names:
        r = results[n]
        for pid in r.ids:
            out[pid] = r.of(pid)
    return out


def _credit_ids(s: Scenario, outcomes: Sequence[ResolutionOutcome]) -> tuple[list[str], int]:
    base = sorted_ids(s.participants)
    extra = sorted_ids({p.id for o in outcomes for p in o.strategy.new_entrants} - set(base))
    return base + extra, len(base)


def _quote(taker, base_x, auc_x, survivors) -> TakerQuote:
    parts = {}
    for key in ("cva", "mva", "kva", "fva"):
        parts[key] = float(sum(auc_x[p][key] - base_x[p][key] for p in survivors))
    total = float(sum(auc_x[p]["xva"] - base_x[p]["xva"] for p in survivors))
    return TakerQuote(taker, total, parts["cva"], parts["mva"], parts["kva"], parts["fva"])


def _best(quotes: Sequence[TakerQuote]) -> TakerQuote:
    from .market_model import id_key
    return min(quotes, key=lambda q: (q.ac, id_key(q.taker)))


def evaluate(s: Scenario, cfg: XvaConfig, strategies: Sequence[StrategySpec | str],
             outcomes: Mapping[str, ResolutionOutcome] | None = None) -> dict[str, XvaReport]:
    """Credit costs and FTP of each strategy in one shared Monte Carlo pass.

    Strategies are StrategySpec objects or the composite names ``"auction"``
    (the package goes to the survivor with the lowest auction cost at
    pre-default prices) and ``"hedge_then_auction"`` (hedge on the own
    exchange, then auction whatever the hedge leaves open).
    """
    diags = [d for d in cfg.validate(s) if d.severity == "Error"]
    if diags:
        raise InvalidParam("; ".join(d.message for d in diags))
    outcomes = dict(outcomes or {})
    own = s.own_exchange.id
    d = s.defaulter
    labels = []
    for st in strategies:
        if isinstance(st, str):
            if st not in COMPOSITES:
                raise InvalidParam(f"unknown composite strategy {st!r}")
            label = st
            if st == "auction" and label not in outcomes:
                outcomes[label] = resolve(s, StrategySpec(StrategyKind.LIQUIDATE_OWN))
            if st == "hedge_then_auction" and label not in outcomes:
                outcomes[label] = resolve(s, StrategySpec(StrategyKind.HEDGE_OWN))
        else:
            label = st.kind.value
            if label not in outcomes:
                outcomes[label] = resolve(s, st)
        labels.append(label)

    credit_ids, n_base = _credit_ids(s, list(outcomes.values()))
    any_outcome = outcomes[labels[0]]
    pre_states = pre_default_states(any_outcome)
    survivors_all = [pid for pid in sorted_ids(s.participants)
                     if pid != d and pid not in cfg.clearing_via]
    own_survivors = [pid for pid in sorted_ids(s.own_exchange.members)
                     if pid != d and pid not in cfg.clearing_via]
    if not own_survivors:
        raise NoSurvivors("no surviving member can take the defaulted package")

    pools: list[CreditPool] = []

    def add(name, st, extra=None):
        pools.append(_pool_from_state(name, st, s, cfg, credit_ids, extra))
        return name

    pre_names = [add(f"pre:{eid}", st) for eid, st in pre_states.items()]
    plan: dict[str, dict] = {}
    for label in labels:
        o = outcomes[label]
        extra = {p.id: p for p in o.strategy.new_entrants}
        if label == "auction":
            base = pre_states[own]
            names = {}
            for t in own_survivors:
                st = auction_state(base, t, base.positions[d], base.price_ref, leaving=(d,))
                names[t] = add(f"{label}:taker:{t}", st)
            plan[label] = {"takers": names, "base": pre_names}
            continue
        post_states = post_default_states(o)
        post_names = [add(f"{label}:post:{eid}", st, extra) for eid, st in post_states.items()]
        entry = {"post": post_names}
        if label == "hedge_then_auction":
            hid = o.strategy.hedger_id
            base = post_states[own]
            residual = o.q_d + base.positions.get(hid, np.zeros(s.asset.m))
            entry["residual"] = residual
            if np.max(np.abs(residual)) > 1e-8 * max(1.0, float(np.max(np.abs(o.q_d)))):
                names = {}
                for t in own_survivors:
                    st = auction_state(base, t, residual, o.post[own].price, leaving=(hid,))
                    names[t] = add(f"{label}:taker:{t}", st, extra)
                entry["takers"] = names
        plan[label] = entry

    engine = XvaEngine(cfg, s.asset, credit_ids, n_base)
    results = engine.run(pools)
    pre_x = _flatten(results, pre_names)

    reports = {}
    for label in labels:
        o = outcomes[label]
        entry = plan[label]
        if label == "auction":
            quotes = [_quote(t, pre_x, _flatten(results, [n]), own_survivors)
                      for t, n in entry["takers"].items()]
            best = _best(quotes)
            reports[label] = ftp(label, (0.0, 0.0), pre_x, pre_x, survivors_all,
                                 best.ac, best.taker, sorted(quotes, key=lambda q: q.ac))
            continue
        post_x = _flatten(results, entry["post"])
        survivors = [pid for pid in survivors_all if pid in post_x]
        ac, taker, quotes = 0.0, None, []
        if "takers" in entry:
            quotes = [_quote(t, post_x, _flatten(results, [n]), own_survivors)
                      for t, n in entry["takers"].items()]
            best = _best(quotes)
            ac, taker = best.ac, best.taker
            quotes = sorted(quotes, key=lambda q: q.ac)
        reports[label] = ftp(label, (o.lc_total, o.sum_delta_rho), pre_x, post_x, survivors,
                             ac, taker, quotes)
    return reports
