from .scenario import ConfigError, ScenarioConfig
from .runner import run_scenario
from .checks import (
    check_agreement,
    check_censorship_bound,
    check_no_loss_no_unbounded_dup,
    check_validity,
)

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "run_scenario",
    "check_agreement",
    "check_censorship_bound",
    "check_no_loss_no_unbounded_dup",
    "check_validity",
]
