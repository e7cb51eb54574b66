"""Traffic simulator: scenarios, sampling, the engine and its outputs."""
from ctgossip.sim.engine import Simulation, SimulationResult, detected, run
from ctgossip.sim.scenario import (
    ATTACKS,
    PROTOCOLS,
    AttackSpec,
    CountryModel,
    Scenario,
    ScenarioError,
    ServerModel,
    desk_scale_scenario,
)

__all__ = [
    "ATTACKS",
    "PROTOCOLS",
    "AttackSpec",
    "CountryModel",
    "Scenario",
    "ScenarioError",
    "ServerModel",
    "Simulation",
    "SimulationResult",
    "desk_scale_scenario",
    "detected",
    "run",
]
