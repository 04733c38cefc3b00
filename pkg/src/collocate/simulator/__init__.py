from .engine import Simulation, run, run_fake_upload_attack, run_rebroadcast_attack
from .metrics import Metrics
from .scenario import (
    AdversarySpec,
    ContactEvent,
    Scenario,
    ScenarioError,
    Surface,
    load_scenario,
    random_scenario,
    scenario_from_dict,
    scenario_to_dict,
    validate_scenario,
)
from .truth import ground_truth

__all__ = [
    "AdversarySpec", "ContactEvent", "Metrics", "Scenario", "ScenarioError", "Simulation", "Surface",
    "ground_truth", "load_scenario", "random_scenario", "run", "run_fake_upload_attack",
    "run_rebroadcast_attack", "scenario_from_dict", "scenario_to_dict", "validate_scenario",
]
