"""Equilibrium market costs and XVA-based funds transfer prices of CCP default resolutions."""

from .errors import ModelError
from .market_model import (
    AssetModel,
    EllipseKind,
    Entropic,
    Exchange,
    ExpectedShortfall,
    Participant,
    Role,
    Scenario,
    validate_scenario,
)
from .equilibrium import Equilibrium, solve_entropic, solve_es, solve_exchange, verify_equilibrium
from .resolution import StrategyKind, StrategySpec, ResolutionOutcome, entropic_mc_closed_form, resolve
from .xva import XvaConfig, XvaReport, evaluate

__all__ = [
    "AssetModel", "EllipseKind", "Entropic", "Equilibrium", "Exchange", "ExpectedShortfall",
    "ModelError", "Participant", "ResolutionOutcome", "Role", "Scenario", "StrategyKind",
    "StrategySpec", "XvaConfig", "XvaReport", "entropic_mc_closed_form", "evaluate", "resolve",
    "solve_entropic", "solve_es", "solve_exchange", "validate_scenario", "verify_equilibrium",
]
__version__ = "0.1.0"
