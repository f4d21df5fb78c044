"""Command-line front end: scenario files in, comparison tables out.

Usage::

    ccp-ftp run SCENARIO [--strategies LIST] [--xva | --no-xva] [--seed N]
                         [--paths N] [--workers N] [--out table,csv,json]
                         [--report summary|per_participant|full]
    ccp-ftp validate SCENARIO
    ccp-ftp scenarios

SCENARIO is a path or the name of a bundled scenario (``example_4_1``,
``example_5_1``, ``example_5_1_uncollateralized``, ``two_member_symmetric``).

Scenario files are YAML::

    asset:
      mu: [2.0]                 # scalar allowed when m = 1
      gamma: [[0.04]]           # or `sigma: 0.2` when m = 1
      family: gaussian          # or student_t, with `nu: 2.5`
    participants:
      - {id: 1, risk: {kind: entropic, varrho: 1.0}, var_r: 0.09, cov_r: [0.048]}
      - {id: 2, role: clearing_member, risk: {kind: expected_shortfall, alpha: 0.975},
         er: 0.0, var_r: 0.36, cov_r: [-0.096]}
    exchanges:
      - {id: D, members: all}   # or an explicit id list; `clearing_rhs` optional
    defaulter: 15
    resolution:                 # optional strategy parameters
      strategies: [liquidate_own, hedge_own]
      external_exchange: E
      q_d_liq: [-5.0]
      hedger: {id: c, risk: {kind: entropic, varrho: 1.0}}
      new_entrants: [ ...participant entries... ]
    xva:                        # optional; enables credit costs
      gamma: 0.393              # or {"*": 0.393, "7": 0.1}
      funding_blend: 0.25
      rho_cr: 0.2
      collateralized: true
      alpha_im: 0.75
      alpha_df: 0.80
      alpha_kva: 0.9975
      hurdle: 0.1
      n_paths: 1000000
      n_batches: 10
      seed: 20240607
      clearing_via: {client_id: member_id}
      otc_receivables: {member_id: 0.0}

Strategy names: liquidate_own, liquidate_external, hedge_own, hedge_external,
replicate_own, replicate_external, hybrid_own, hybrid_external, the
composites auction and hedge_then_auction, and ``all8`` for the eight
resolution strategies.

Exit codes: 0 success, 2 parse error, 3 validation error, 4 solver failure,
5 Monte Carlo estimator failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .errors import (
    DegenerateRisk,
    DimensionMismatch,
    InsufficientTail,
    InvalidParam,
    NoConvergence,
    NoSurvivors,
    ParseError,
    SingularGamma,
    StrategyMismatch,
    UnsupportedCombination,
    ValidationError,
    WeightUndefined,
    WrongRiskKind,
)
from .market_model import (
    AssetModel,
    EllipseKind,
    Entropic,
    Exchange,
    ExpectedShortfall,
    Participant,
    Role,
    Scenario,
    has_errors,
    sorted_ids,
    validate_scenario,
)
from .resolution import (
    StrategyKind,
    StrategySpec,
    entropic_mc_closed_form,
    resolve,
    strategy_ids,
)
from .xva import COMPOSITES, XvaConfig, evaluate

STRATEGY_NAMES = {
    "liquidate_own": StrategyKind.LIQUIDATE_OWN,
    "liquidate_external": StrategyKind.LIQUIDATE_EXTERNAL,
    "hedge_own": StrategyKind.HEDGE_OWN,
    "hedge_external": StrategyKind.HEDGE_EXTERNAL,
    "replicate_own": StrategyKind.REPLICATE_OWN,
    "replicate_external": StrategyKind.REPLICATE_EXTERNAL,
    "hybrid_own": StrategyKind.HYBRID_OWN,
    "hybrid_external": StrategyKind.HYBRID_EXTERNAL,
}
NAME_OF_KIND = {v: k for k, v in STRATEGY_NAMES.items()}
BUNDLED = ("example_4_1", "example_5_1", "example_5_1_uncollateralized", "two_member_symmetric")

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_SOLVER, EXIT_XVA = 0, 2, 3, 4, 5


# ---------------------------------------------------------------- YAML with marks


class _MarkedDict(dict):
    mark = None
    key_marks: dict


class _MarkedList(list):
    mark = None
    item_marks: list


def _from_node(node):
    if isinstance(node, yaml.MappingNode):
        out = _MarkedDict()
        out.mark = node.start_mark
        out.key_marks = {}
        for k, v in node.value:
            key = _from_node(k)
            if isinstance(key, (dict, list)):
                raise ParseError("mapping keys must be scalars", k.start_mark.line + 1, k.start_mark.column + 1)
            key = str(key)
            if key in out:
                raise ParseError(f"duplicate key {key!r}", k.start_mark.line + 1, k.start_mark.column + 1)
            out[key] = _from_node(v)
            out.key_marks[key] = v.start_mark
        return out
    if isinstance(node, yaml.SequenceNode):
        out = _MarkedList(_from_node(v) for v in node.value)
        out.mark = node.start_mark
        out.item_marks = [v.start_mark for v in node.value]
        return out
    return _construct_scalar(node)


def _construct_scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def _load_yaml(text: str):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ParseError(str(exc.problem or exc), line, col) from None
    if node is None:
        raise ParseError("empty scenario file", 1, 1)
    return _from_node(node)


def _fail(msg: str, mark) -> ParseError:
    if mark is None:
        return ParseError(msg, None, None)
    return ParseError(msg, mark.line + 1, mark.column + 1)


def _get(d: _MarkedDict, key: str, default=..., kind: str | None = None):
    if not isinstance(d, dict):
        raise _fail("expected a mapping", getattr(d, "mark", None))
    if key not in d:
        if default is ...:
            raise _fail(f"missing required key {key!r}", d.mark)
        return default
    return d[key]


def _mark(d, key):
    return d.key_marks.get(key, d.mark) if isinstance(d, _MarkedDict) else None


def _number(d, key, default=...) -> float:
    v = _get(d, key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _fail(f"{key!r} must be a number", _mark(d, key))
    return float(v)


def _vector(d, key, m: int | None = None, default=...) -> np.ndarray:
    v = _get(d, key, default)
    if v is None:
        return None
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise _fail(f"{key!r} must be a number or a list of numbers", _mark(d, key))
    out = np.array(v, dtype=float)
    if m is not None and out.shape[0] != m:
        raise _fail(f"{key!r} has length {out.shape[0]}, expected {m}", _mark(d, key))
    return out


def _known_keys(d, allowed: Sequence[str], what: str):
    for k in d:
        if k not in allowed:
            raise _fail(f"unknown key {k!r} in {what}", d.key_marks.get(k, d.mark))


# ---------------------------------------------------------------- schema


@dataclass
class ResolutionDefaults:
    strategies: list[str] = field(default_factory=list)
    external_exchange: str | None = None
    q_d_liq: np.ndarray | None = None
    hedger_id: str = "c"
    hedger_risk: Any = None
    new_entrants: tuple[Participant, ...] = ()

    def spec(self, name: str) -> StrategySpec:
        kind = STRATEGY_NAMES[name]
        return StrategySpec(
            kind,
            exchange=self.external_exchange if kind.external else None,
            q_d_liq=self.q_d_liq if kind.family == "Hybrid" else None,
            new_entrants=self.new_entrants,
            hedger_risk=self.hedger_risk,
            hedger_id=self.hedger_id,
        )


def _risk(d) -> Entropic | ExpectedShortfall:
    if not isinstance(d, dict):
        raise _fail("risk must be a mapping", getattr(d, "mark", None))
    kind = _get(d, "kind")
    if kind in ("entropic",):
        _known_keys(d, ("kind", "varrho"), "risk")
        return Entropic(_number(d, "varrho"))
    if kind in ("expected_shortfall", "es"):
        _known_keys(d, ("kind", "alpha"), "risk")
        return ExpectedShortfall(_number(d, "alpha"))
    raise _fail(f"unknown risk kind {kind!r}", _mark(d, "kind"))


def _participant(d, m: int) -> Participant:
    if not isinstance(d, dict):
        raise _fail("participant entries must be mappings", getattr(d, "mark", None))
    _known_keys(d, ("id", "role", "risk", "er", "var_r", "cov_r"), "participant")
    pid = _get(d, "id")
    role = _get(d, "role", "clearing_member")
    try:
        role = Role(role)
    except ValueError:
        raise _fail(f"unknown role {role!r}", _mark(d, "role")) from None
    return Participant(str(pid), role, _risk(_get(d, "risk")), _number(d, "er", 0.0),
                       _number(d, "var_r"), _vector(d, "cov_r"))


def _asset(d) -> AssetModel:
    _known_keys(d, ("mu", "gamma", "sigma", "family", "nu"), "asset")
    mu = _vector(d, "mu")
    m = mu.shape[0]
    if "gamma" in d and "sigma" in d:
        raise _fail("give either gamma or sigma, not both", d.mark)
    if "sigma" in d:
        if m != 1:
            raise _fail("sigma is only allowed for a single asset", _mark(d, "sigma"))
        gamma = np.array([[_number(d, "sigma") ** 2]])
    else:
        g = _get(d, "gamma")
        if isinstance(g, (int, float)) and not isinstance(g, bool):
            g = [[g]]
        try:
            gamma = np.array(g, dtype=float)
        except (TypeError, ValueError):
            raise _fail("gamma must be a numeric matrix", _mark(d, "gamma")) from None
        if gamma.shape != (m, m):
            raise _fail(f"gamma has shape {gamma.shape}, expected {(m, m)}", _mark(d, "gamma"))
    family = _get(d, "family", "gaussian")
    if family == "gaussian":
        ellipse = EllipseKind.gaussian()
    elif family == "student_t":
        ellipse = EllipseKind.student_t(_number(d, "nu"))
    else:
        raise _fail(f"unknown family {family!r}", _mark(d, "family"))
    return AssetModel(mu, gamma, ellipse)


def _xva(d) -> XvaConfig:
    allowed = ("horizon", "gamma", "funding_blend", "rho_cr", "collateralized", "alpha_im", "alpha_df",
               "alpha_kva", "hurdle", "n_paths", "n_batches", "seed", "kva_scaling",
               "otc_receivables", "clearing_via", "workers")
    _known_keys(d, allowed, "xva")
    kw: dict[str, Any] = {}
    for key in ("horizon", "funding_blend", "rho_cr", "alpha_im", "alpha_df", "alpha_kva", "hurdle"):
        if key in d:
            kw[key] = _number(d, key)
    for key in ("n_paths", "n_batches", "seed", "workers"):
        if key in d:
            v = d[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise _fail(f"{key!r} must be an integer", _mark(d, key))
            kw[key] = v
    if "collateralized" in d:
        if not isinstance(d["collateralized"], bool):
            raise _fail("'collateralized' must be true or false", _mark(d, "collateralized"))
        kw["collateralized"] = d["collateralized"]
    if "kva_scaling" in d:
        kw["kva_scaling"] = str(d["kva_scaling"])
    if "gamma" in d:
        g = d["gamma"]
        if isinstance(g, dict):
            kw["gamma"] = {str(k): _number(g, k) for k in g}
        else:
            kw["gamma"] = _number(d, "gamma")
    for key in ("otc_receivables",):
        if key in d:
            v = d[key]
            if not isinstance(v, dict):
                raise _fail(f"{key!r} must be a mapping", _mark(d, key))
            kw[key] = {str(k): _number(v, k) for k in v}
    if "clearing_via" in d:
        v = d["clearing_via"]
        if not isinstance(v, dict):
            raise _fail("'clearing_via' must be a mapping", _mark(d, "clearing_via"))
        kw["clearing_via"] = {str(k): str(x) for k, x in v.items()}
    return XvaConfig(**kw)


def parse_document(text: str) -> tuple[Scenario, ResolutionDefaults]:
    """Parse scenario YAML text into a Scenario and the strategy defaults."""
    root = _load_yaml(text)
    if not isinstance(root, dict):
        raise _fail("scenario must be a mapping", getattr(root, "mark", None))
    _known_keys(root, ("asset", "participants", "exchanges", "defaulter", "resolution", "xva", "notes"),
                "scenario")
    asset = _asset(_get(root, "asset"))
    plist = _get(root, "participants")
    if not isinstance(plist, list) or not plist:
        raise _fail("participants must be a non-empty list", _mark(root, "participants"))
    participants: dict[str, Participant] = {}
    for entry, mk in zip(plist, plist.item_marks):
        p = _participant(entry, asset.m)
        if p.id in participants:
            raise _fail(f"duplicate participant id {p.id!r}", mk)
        participants[p.id] = p
    exchanges = []
    elist = _get(root, "exchanges")
    if not isinstance(elist, list) or not elist:
        raise _fail("exchanges must be a non-empty list", _mark(root, "exchanges"))
    for e in elist:
        if not isinstance(e, dict):
            raise _fail("exchange entries must be mappings", getattr(e, "mark", None))
        _known_keys(e, ("id", "members", "clearing_rhs"), "exchange")
        members = _get(e, "members")
        if members == "all":
            members = sorted_ids(participants)
        elif not isinstance(members, list):
            raise _fail("members must be a list of ids or 'all'", _mark(e, "members"))
        exchanges.append(Exchange(str(_get(e, "id")), tuple(str(x) for x in members),
                                  _vector(e, "clearing_rhs", asset.m, None)))
    defaults = ResolutionDefaults()
    res = _get(root, "resolution", None)
    if res is not None:
        _known_keys(res, ("strategies", "external_exchange", "q_d_liq", "hedger", "new_entrants"), "resolution")
        names = _get(res, "strategies", [])
        if not isinstance(names, list):
            raise _fail("strategies must be a list", _mark(res, "strategies"))
        for n in names:
            if n not in STRATEGY_NAMES and n not in COMPOSITES:
                raise _fail(f"unknown strategy {n!r}", _mark(res, "strategies"))
        defaults.strategies = [str(n) for n in names]
        if "external_exchange" in res:
            defaults.external_exchange = str(res["external_exchange"])
        defaults.q_d_liq = _vector(res, "q_d_liq", asset.m, None)
        hedger = _get(res, "hedger", None)
        if hedger is not None:
            _known_keys(hedger, ("id", "risk"), "hedger")
            defaults.hedger_id = str(_get(hedger, "id", "c"))
            if "risk" in hedger:
                defaults.hedger_risk = _risk(hedger["risk"])
        entrants = _get(res, "new_entrants", [])
        if not isinstance(entrants, list):
            raise _fail("new_entrants must be a list", _mark(res, "new_entrants"))
        defaults.new_entrants = tuple(_participant(x, asset.m) for x in entrants)
    xva_cfg = _xva(root["xva"]) if root.get("xva") is not None else None
    scenario = Scenario(asset, tuple(exchanges), participants, str(_get(root, "defaulter")), None, xva_cfg)
    return scenario, defaults


def resolve_path(name: str | Path) -> Path:
    """A file path, or the name of a bundled scenario."""
    path = Path(name)
    if path.exists():
        return path
    stem = path.name[:-4] if path.name.endswith(".scn") else path.name
    bundled = resources.files("ccp_ftp") / "scenarios" / f"{stem}.scn"
    if bundled.is_file():
        return Path(str(bundled))
    raise ParseError(f"scenario file {str(name)!r} not found", None, None)


def load(path: str | Path) -> tuple[Scenario, ResolutionDefaults]:
    p = resolve_path(path)
    return parse_document(p.read_text())


def parse_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file; raise ValidationError on errors."""
    scenario, _ = load(path)
    diags = validate_scenario(scenario)
    if has_errors(diags):
        raise ValidationError(diags)
    return scenario


# ---------------------------------------------------------------- tables


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            return str(v)
        return f"{v:.6g}"
    return str(v)


def render_table(t: Table) -> str:
    cells = [t.columns] + [[_fmt(v) for v in r] for r in t.rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(t.columns))]
    lines = [t.name, "  ".join(c.rjust(w) for c, w in zip(cells[0], widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells[1:]]
    return "\n".join(lines)


def render_csv(tables: Sequence[Table]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for t in tables:
        w.writerow(["table"] + t.columns)
        for r in t.rows:
            w.writerow([t.name] + [repr(float(v)) if isinstance(v, (float, np.floating)) else
                                   ("" if v is None else v) for v in r])
    return buf.getvalue()


def render_json(tables: Sequence[Table]) -> str:
    def clean(v):
        if isinstance(v, (np.floating, float)):
            return float(v)
        if isinstance(v, np.integer):
            return int(v)
        return v
    doc = {t.name: [dict(zip(t.columns, map(clean, r))) for r in t.rows] for t in tables}
    return json.dumps(doc, indent=2)


def _scalar(v: np.ndarray) -> float | list[float]:
    v = np.asarray(v, dtype=float).ravel()
    return float(v[0]) if v.shape[0] == 1 else [float(x) for x in v]


def _component_columns(prefix: str, m: int) -> list[str]:
    return [prefix] if m == 1 else [f"{prefix}[{k}]" for k in range(m)]


def _components(v, m: int) -> list[float]:
    if v is None:
        return [None] * m
    return [float(x) for x in np.asarray(v, dtype=float).ravel()]


# ---------------------------------------------------------------- run


@dataclass
class RunRequest:
    scenario: str
    strategies: list[str] | None = None
    outputs: list[str] = field(default_factory=lambda: ["table"])
    seed: int | None = None
    paths: int | None = None
    workers: int | None = None
    xva: bool | None = None
    report: str = "summary"


def _expand(names: Sequence[str]) -> list[str]:
    out = []
    for n in names:
        n = n.strip()
        if not n:
            continue
        if n == "all8":
            out.extend(STRATEGY_NAMES)
        elif n in STRATEGY_NAMES or n in COMPOSITES:
            out.append(n)
        else:
            raise InvalidParam(f"unknown strategy {n!r}")
    if not out:
        raise InvalidParam("no strategies requested")
    return out


def build_tables(scenario: Scenario, defaults: ResolutionDefaults, names: Sequence[str],
                 use_xva: bool, report: str) -> list[Table]:
    m = scenario.asset.m
    specs: dict[str, StrategySpec] = {}
    outcomes = {}
    for n in names:
        if n in STRATEGY_NAMES:
            spec = defaults.spec(n)
        elif n == "auction":
            spec = defaults.spec("liquidate_own")
        else:
            spec = defaults.spec("hedge_own")
        specs[n] = spec
        diags = [d for d in spec.validate(scenario) if d.severity == "Error"]
        if diags:
            raise ValidationError(diags)
    for n in names:
        outcomes[n] = resolve(scenario, specs[n])

    reports = {}
    if use_xva:
        xva_inputs = [specs[n] if n in STRATEGY_NAMES else n for n in names]
        keyed = {}
        for n in names:
            keyed[n if n in COMPOSITES else specs[n].kind.value] = outcomes[n]
        raw = evaluate(scenario, scenario.xva, xva_inputs, keyed)
        for n in names:
            reports[n] = raw[n if n in COMPOSITES else specs[n].kind.value]

    summary_cols = ["strategy", "row", "lc", "sum_delta_rho", "mc", "mc_closed_form"]
    if use_xva:
        summary_cols += ["sum_delta_xva", "ac", "taker", "cc", "ftp"]
    summary = Table("summary", summary_cols)
    for n in names:
        o = outcomes[n]
        cf = None
        if o.strategy.kind in (StrategyKind.LIQUIDATE_OWN, StrategyKind.HEDGE_OWN) and n in STRATEGY_NAMES:
            try:
                cf = entropic_mc_closed_form(scenario, specs[n])
            except (WrongRiskKind, UnsupportedCombination):
                cf = None
        if n == "auction":
            row = [n, None, 0.0, 0.0, 0.0, None]
        else:
            row = [n, o.strategy.kind.row, o.lc_total, o.sum_delta_rho, o.mc_total, cf]
        if use_xva:
            r = reports[n]
            row += [r.sum_delta_xva, r.ac, r.taker, r.cc, r.ftp]
        summary.rows.append(row)
    tables = [summary]
    if report == "summary":
        return tables

    pos_cols = ["strategy", "id", "role"] + _component_columns("q", m) + _component_columns("q_post", m)
    positions = Table("positions", pos_cols)
    prices = Table("prices", ["strategy", "exchange"] + _component_columns("p", m)
                   + _component_columns("p_post", m) + ["method_post", "iterations_post"])
    costs = Table("participant_costs", ["strategy", "id", "lc_i", "delta_rho_i"])
    for n in names:
        if n == "auction":
            continue
        o = outcomes[n]
        for pid in strategy_ids(o):
            part = o.participants[pid]
            positions.rows.append([n, pid, part.role.value] + _components(o.pre_position(pid), m)
                                  + _components(o.post_position(pid), m))
            costs.rows.append([n, pid, o.lc_per_participant.get(pid), o.delta_rho.get(pid)])
        d = scenario.defaulter
        positions.rows.append([n, d, "defaulter"] + _components(o.pre_position(d), m) + [None] * m)
        for eid, eq in o.post.items():
            prices.rows.append([n, eid] + _components(o.pre[eid].price, m) + _components(eq.price, m)
                               + [eq.method, eq.iterations])
    tables += [positions, prices, costs]

    if use_xva:
        xt = Table("xva", ["strategy", "id", "cva", "mva", "kva", "fva", "xva",
                           "cva_post", "mva_post", "kva_post", "fva_post", "xva_post", "delta_xva",
                           "cva_se", "kva_se"])
        ranking = Table("taker_ranking", ["strategy", "rank", "taker", "ac", "d_cva", "d_mva", "d_kva", "d_fva"])
        for n in names:
            r = reports[n]
            ids = sorted_ids(set(r.pre) | set(r.post))
            for pid in ids:
                a = r.pre.get(pid, {})
                b = r.post.get(pid, {}) if n != "auction" else {}
                xt.rows.append([n, pid] + [a.get(k) for k in ("cva", "mva", "kva", "fva", "xva")]
                               + [b.get(k) for k in ("cva", "mva", "kva", "fva", "xva")]
                               + [r.delta_xva.get(pid), a.get("cva_se"), a.get("kva_se")])
            for k, q in enumerate(r.ranking, 1):
                ranking.rows.append([n, k, q.taker, q.ac, q.d_cva, q.d_mva, q.d_kva, q.d_fva])
        tables += [xt, ranking]

    if report == "full":
        eqt = Table("equilibria", ["strategy", "state", "exchange", "method", "iterations",
                                   "residual_kkt", "residual_clearing"])
        for n in names:
            o = outcomes[n]
            for state, eqs in (("pre", o.pre), ("post", o.post)):
                for eid, eq in eqs.items():
                    eqt.rows.append([n, state, eid, eq.method, eq.iterations, eq.residual_kkt,
                                     eq.residual_clearing])
        tables.append(eqt)
    return tables


def run(req: RunRequest, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        scenario, defaults = load(req.scenario)
    except ParseError as exc:
        print(f"parse error: {exc}", file=stderr)
        return EXIT_PARSE
    try:
        if scenario.xva is not None:
            changes = {}
            if req.seed is not None:
                changes["seed"] = req.seed
            if req.paths is not None:
                changes["n_paths"] = req.paths
                if req.paths % scenario.xva.n_batches:
                    changes["n_batches"] = math.gcd(req.paths, scenario.xva.n_batches)
            if req.workers is not None:
                changes["workers"] = req.workers
            if changes:
                scenario = scenario.replace(xva=scenario.xva.replace(**changes))
        diags = validate_scenario(scenario)
        for d in diags:
            print(f"{d.severity}: [{d.code}] {d.message}", file=stderr)
        if has_errors(diags):
            raise ValidationError(diags)
        names = _expand(req.strategies if req.strategies else (defaults.strategies or ["liquidate_own"]))
        use_xva = scenario.xva is not None if req.xva is None else req.xva
        if use_xva and scenario.xva is None:
            raise InvalidParam("--xva requested but the scenario has no xva section")
        tables = build_tables(scenario, defaults, names, use_xva, req.report)
    except (ValidationError, InvalidParam, StrategyMismatch, DimensionMismatch,
            UnsupportedCombination, WrongRiskKind) as exc:
        print(f"validation error: {exc}", file=stderr)
        return EXIT_VALIDATION
    except NoConvergence as exc:
        print(f"solver error: {exc}", file=stderr)
        print("residual history: " + ", ".join(f"{r:.3e}" for r in exc.history), file=stderr)
        return EXIT_SOLVER
    except (DegenerateRisk, SingularGamma) as exc:
        print(f"solver error: {exc}", file=stderr)
        return EXIT_SOLVER
    except (InsufficientTail, WeightUndefined, NoSurvivors) as exc:
        print(f"xva error: {exc}", file=stderr)
        return EXIT_XVA

    for k, sink in enumerate(req.outputs):
        if k:
            stdout.write("\n")
        if sink == "table":
            stdout.write("\n\n".join(render_table(t) for t in tables) + "\n")
        elif sink == "csv":
            stdout.write(render_csv(tables))
        elif sink == "json":
            stdout.write(render_json(tables) + "\n")
    return EXIT_OK


def _validate_cmd(path: str, stdout, stderr) -> int:
    try:
        scenario, defaults = load(path)
    except ParseError as exc:
        print(f"parse error: {exc}", file=stderr)
        return EXIT_PARSE
    diags = validate_scenario(scenario)
    for n in defaults.strategies:
        if n in STRATEGY_NAMES:
            diags += defaults.spec(n).validate(scenario)
    for d in diags:
        print(f"{d.severity}: [{d.code}] {d.message}", file=stderr)
    if has_errors(diags):
        return EXIT_VALIDATION
    print("ok", file=stdout)
    return EXIT_OK


def main(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = argparse.ArgumentParser(prog="ccp-ftp", description="Funds transfer prices of CCP default resolutions")
    sub = parser.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="evaluate strategies on a scenario")
    pr.add_argument("scenario")
    pr.add_argument("--strategies", help="comma-separated strategy names or all8")
    g = pr.add_mutually_exclusive_group()
    g.add_argument("--xva", dest="xva", action="store_true", default=None)
    g.add_argument("--no-xva", dest="xva", action="store_false")
    pr.add_argument("--seed", type=int)
    pr.add_argument("--paths", type=int)
    pr.add_argument("--workers", type=int)
    pr.add_argument("--out", default="table", help="comma-separated sinks among table, csv, json")
    pr.add_argument("--report", default="summary", choices=("summary", "per_participant", "full"))
    pv = sub.add_parser("validate", help="parse and validate a scenario")
    pv.add_argument("scenario")
    sub.add_parser("scenarios", help="list bundled scenarios")
    args = parser.parse_args(argv)

    if args.command == "scenarios":
        for name in BUNDLED:
            print(name, file=stdout)
        return EXIT_OK
    if args.command == "validate":
        return _validate_cmd(args.scenario, stdout, stderr)
    outputs = [o.strip() for o in args.out.split(",") if o.strip()]
    bad = [o for o in outputs if o not in ("table", "csv", "json")]
    if bad or not outputs:
        print(f"validation error: unknown output sink(s) {bad}", file=stderr)
        return EXIT_VALIDATION
    try:
        strategies = _expand(args.strategies.split(",")) if args.strategies else None
    except InvalidParam as exc:
        print(f"validation error: {exc}", file=stderr)
        return EXIT_VALIDATION
    req = RunRequest(args.scenario, strategies, outputs, args.seed, args.paths, args.workers,
                     args.xva, args.report)
    return run(req, stdout, stderr)


if __name__ == "__main__":
    sys.exit(main())
