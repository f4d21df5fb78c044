"""Scenario data model, joint moment assembly and well-posedness checks.

Receivables enter only through their first two joint moments with the
traded payoff ``P``: the mean ``er``, the variance ``var_r`` and the
cross-covariance vector ``cov_r = Cov(R_i, P)``.  Every downstream formula
consumes nothing else.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch

TOL_PD = 1e-10


# ---------------------------------------------------------------- risk specs


@dataclass(frozen=True)
class EllipseKind:
    """Elliptical family shared by all (R_i, P) in a scenario."""

    kind: str = "gaussian"
    nu: float | None = None

    @classmethod
    def gaussian(cls) -> "EllipseKind":
        return cls("gaussian", None)

    @classmethod
    def student_t(cls, nu: float) -> "EllipseKind":
        return cls("student_t", float(nu))

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"


@dataclass(frozen=True)
class Entropic:
    varrho: float


@dataclass(frozen=True)
class ExpectedShortfall:
    alpha: float


RiskSpec = Entropic | ExpectedShortfall


class Role(str, enum.Enum):
    CLEARING_MEMBER = "clearing_member"
    SIMPLE_PARTICIPANT = "simple_participant"
    CCP_HEDGER = "ccp_hedger"


def as_vector(x, m: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {v.shape}")
    if m is not None and v.shape[0] != m:
        raise DimensionMismatch(f"{name} has length {v.shape[0]}, expected {m}")
    v.setflags(write=False)
    return v


def id_key(pid: str):
    """Natural ordering: numeric ids first by value, then the rest lexically."""
    s = str(pid)
    if re.fullmatch(r"-?\d+", s):
        return (0, int(s), s)
    return (1, 0, s)


def sorted_ids(ids) -> list[str]:
    return sorted((str(i) for i in ids), key=id_key)


# ---------------------------------------------------------------- data types


@dataclass(frozen=True, eq=False)
class AssetModel:
    mu: np.ndarray
    gamma: np.ndarray
    ellipse: EllipseKind = field(default_factory=EllipseKind.gaussian)

    def __post_init__(self):
        mu = as_vector(self.mu, name="mu")
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float)).copy()
        if gamma.shape != (mu.shape[0], mu.shape[0]):
            raise DimensionMismatch(
                f"gamma has shape {gamma.shape}, expected {(mu.shape[0],) * 2}"
            )
        gamma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma", gamma)

    @property
    def m(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True, eq=False)
class Participant:
    id: str
    role: Role
    risk: RiskSpec
    er: float
    var_r: float
    cov_r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "er", float(self.er))
        object.__setattr__(self, "var_r", float(self.var_r))
        object.__setattr__(self, "cov_r", as_vector(self.cov_r, name=f"cov_r of {self.id}"))


@dataclass(frozen=True, eq=False)
class Exchange:
    id: str
    members: tuple[str, ...]
    clearing_rhs: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "members", tuple(str(i) for i in self.members))
        if self.clearing_rhs is not None:
            object.__setattr__(self, "clearing_rhs", as_vector(self.clearing_rhs, name="clearing_rhs"))

    def rhs(self, m: int) -> np.ndarray:
        if self.clearing_rhs is None:
            return np.zeros(m)
        return np.array(self.clearing_rhs, dtype=float)


@dataclass(frozen=True, eq=False)
class Scenario:
    asset: AssetModel
    exchanges: tuple[Exchange, ...]
    participants: Mapping[str, Participant]
    defaulter: str
    strategy: Any = None
    xva: Any = None

    def __post_init__(self):
        object.__setattr__(self, "exchanges", tuple(self.exchanges))
        object.__setattr__(self, "participants", dict(self.participants))
        object.__setattr__(self, "defaulter", str(self.defaulter))

    def exchange(self, exchange_id: str) -> Exchange:
        for e in self.exchanges:
            if e.id == str(exchange_id):
                return e
        raise KeyError(f"unknown exchange {exchange_id!r}")

    def exchanges_of(self, pid: str) -> list[Exchange]:
        return [e for e in self.exchanges if str(pid) in e.members]

    @property
    def own_exchange(self) -> Exchange:
        """The exchange D of the defaulter."""
        found = self.exchanges_of(self.defaulter)
        if len(found) != 1:
            raise KeyError(f"defaulter {self.defaulter!r} belongs to {len(found)} exchanges")
        return found[0]

    def replace(self, **changes) -> "Scenario":
        kw = dict(
            asset=self.asset,
            exchanges=self.exchanges,
            participants=self.participants,
            defaulter=self.defaulter,
            strategy=self.strategy,
            xva=self.xva,
        )
        kw.update(changes)
        return Scenario(**kw)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "Error" or "Warning"
    code: str
    message: str


# ---------------------------------------------------------------- operations


def assemble_joint_moments(p: Participant, a: AssetModel) -> np.ndarray:
    """Covariance matrix of (R_i, P): [[Var R_i, cov_iᵀ], [cov_i, Γ]]."""
    if p.cov_r.shape[0] != a.m:
        raise DimensionMismatch(
            f"participant {p.id}: cov_r has length {p.cov_r.shape[0]}, expected {a.m}"
        )
    m = a.m
    out = np.empty((m + 1, m + 1))
    out[0, 0] = p.var_r
    out[0, 1:] = p.cov_r
    out[1:, 0] = p.cov_r
    out[1:, 1:] = a.gamma
    return out


def _eig_status(mat: np.ndarray, tol: float = TOL_PD) -> str:
    """Classify a symmetric matrix as 'pd', 'psd' or 'indefinite'."""
    eig = np.linalg.eigvalsh(mat)
    scale = max(float(np.max(np.abs(eig))), 1e-300)
    if eig[0] > tol * scale:
        return "pd"
    if eig[0] >= -tol * scale:
        return "psd"
    return "indefinite"


def is_positive_definite(mat, tol: float = TOL_PD) -> bool:
    return _eig_status(np.asarray(mat, dtype=float), tol) == "pd"


def validate_risk(risk: RiskSpec, ellipse: EllipseKind, who: str) -> list[Diagnostic]:
    out = []
    if isinstance(risk, Entropic):
        if not (np.isfinite(risk.varrho) and risk.varrho > 0):
            out.append(Diagnostic("Error", "varrho_not_positive", f"{who}: varrho must be > 0"))
        if not ellipse.is_gaussian:
            out.append(Diagnostic(
                "Error", "entropic_needs_gaussian",
                f"{who}: entropic preferences are only defined for Gaussian moments",
            ))
    elif isinstance(risk, ExpectedShortfall):
        if not (0.0 <= risk.alpha < 1.0):
            out.append(Diagnostic("Error", "alpha_out_of_range", f"{who}: alpha must lie in [0, 1)"))
    else:
        out.append(Diagnostic("Error", "unknown_risk_kind", f"{who}: unknown risk kind"))
    return out


def validate_participant(p: Participant, a: AssetModel) -> list[Diagnostic]:
    out = []
    if p.cov_r.shape[0] != a.m:
        return [Diagnostic("Error", "dimension_mismatch",
                           f"participant {p.id}: cov_r length {p.cov_r.shape[0]} != {a.m}")]
    if not (np.isfinite(p.er) and np.isfinite(p.var_r) and np.all(np.isfinite(p.cov_r))):
        out.append(Diagnostic("Error", "moments_not_finite", f"participant {p.id}: non-finite moments"))
        return out
    if p.var_r < 0:
        out.append(Diagnostic("Error", "negative_variance", f"participant {p.id}: var_r < 0"))
        return out
    out.extend(validate_risk(p.risk, a.ellipse, f"participant {p.id}"))
    status = _eig_status(assemble_joint_moments(p, a))
    if status == "indefinite":
        out.append(Diagnostic("Error", "gamma_i_not_psd",
                              f"participant {p.id}: joint covariance is not positive semidefinite"))
    elif status == "psd" and isinstance(p.risk, ExpectedShortfall):
        out.append(Diagnostic("Warning", "gamma_i_singular",
                              f"participant {p.id}: receivable lies in the span of P, "
                              "uniqueness not guaranteed"))
    return out


def validate_scenario(s: Scenario) -> list[Diagnostic]:
    """Return one diagnostic per violated hypothesis; empty when well posed."""
    out: list[Diagnostic] = []
    a = s.asset
    if not np.all(np.isfinite(a.mu)):
        out.append(Diagnostic("Error", "mu_not_finite", "asset mean has non-finite entries"))
    if not np.array_equal(a.gamma, a.gamma.T):
        out.append(Diagnostic("Error", "gamma_not_symmetric", "asset covariance is not symmetric"))
    if not np.all(np.isfinite(a.gamma)) or _eig_status(a.gamma) != "pd":
        out.append(Diagnostic("Error", "gamma_not_pd", "asset covariance is not positive definite"))
    if a.ellipse.kind == "student_t":
        if a.ellipse.nu is None or not a.ellipse.nu > 2:
            out.append(Diagnostic("Error", "nu_too_small", "Student-t requires nu > 2"))
    elif a.ellipse.kind != "gaussian":
        out.append(Diagnostic("Error", "unknown_ellipse", f"unknown elliptical family {a.ellipse.kind!r}"))

    for pid in sorted_ids(s.participants):
        p = s.participants[pid]
        if p.id != pid:
            out.append(Diagnostic("Error", "id_mismatch", f"participant key {pid!r} != id {p.id!r}"))
        out.extend(validate_participant(p, a))

    seen: dict[str, str] = {}
    for e in s.exchanges:
        if not e.members:
            out.append(Diagnostic("Error", "empty_exchange", f"exchange {e.id} has no members"))
        if e.clearing_rhs is not None and (
            e.clearing_rhs.shape[0] != a.m or not np.all(np.isfinite(e.clearing_rhs))
        ):
            out.append(Diagnostic("Error", "bad_clearing_rhs", f"exchange {e.id}: bad clearing_rhs"))
        for pid in e.members:
            if pid not in s.participants:
                out.append(Diagnostic("Error", "unknown_participant",
                                      f"exchange {e.id} references unknown participant {pid!r}"))
            elif pid in seen:
                out.append(Diagnostic("Error", "multi_exchange_member",
                                      f"participant {pid} belongs to exchanges {seen[pid]} and {e.id}"))
            else:
                seen[pid] = e.id
    if len({e.id for e in s.exchanges}) != len(s.exchanges):
        out.append(Diagnostic("Error", "duplicate_exchange", "exchange ids are not unique"))

    n_own = len(s.exchanges_of(s.defaulter))
    if s.defaulter not in s.participants:
        out.append(Diagnostic("Error", "unknown_defaulter", f"defaulter {s.defaulter!r} is unknown"))
    elif n_own != 1:
        out.append(Diagnostic("Error", "defaulter_exchange",
                              f"defaulter must belong to exactly one exchange, found {n_own}"))

    if not any(d.severity == "Error" for d in out):
        if s.strategy is not None and hasattr(s.strategy, "validate"):
            out.extend(s.strategy.validate(s))
        if s.xva is not None and hasattr(s.xva, "validate"):
            out.extend(s.xva.validate(s))
    return out


def has_errors(diags: Sequence[Diagnostic]) -> bool:
    return any(d.severity == "Error" for d in diags)
