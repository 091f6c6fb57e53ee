"""Multi-fidelity hyperparameter optimization with density-model sampling,
greedy warmstart portfolios, post-hoc ensemble selection, and study tools."""

from importlib import resources

from .configspace import (ConfigurationSpace, HyperparameterSpec, ConditionRule,
                          SpaceError, parse_space, load_space)
from .optimizer import (BudgetLadder, Bracket, Limits, RunHistory,
                        budget_ladder, bracket_plan, sh_promote, run)
from .shaped_arch import FunnelShape, funnel_widths, resnet_group_widths

__version__ = "0.1.0"


def fixture_path(name: str) -> str:
    """Absolute path to a bundled fixture file (e.g. 'space1.json')."""
    return str(resources.files("multifid").joinpath("fixtures", name))
