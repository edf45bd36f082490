"""Simulation-driven falsification of closed-loop autonomous systems.

The package wires together six pieces: a probabilistic scenario language
(`falsify.scenario`), search-point samplers including cross-entropy
adaptation (`falsify.samplers`), a quantitative MTL monitor (`falsify.mtl`),
a JSON-lines TCP bridge to simulators (`falsify.protocol`), a deterministic
reference simulator with a configurable faulty-perception stub
(`falsify.refsim`), and the campaign engine plus analysis tools on top
(`falsify.engine`).

The names re-exported here are the stable surface for library users; the
``falsify`` command line (see `falsify.cli`) covers the same ground for
shell use.
"""

from falsify.engine import (
    CampaignConfig,
    ResultRow,
    ResultTable,
    Verdict,
    binned_stats,
    export_table,
    export_training_configs,
    filter_counterexamples,
    replay,
    rho_scatter_svg,
    run_campaign,
    same_rows,
)
from falsify.mtl import (
    Trace,
    hold_within,
    parse_spec,
    parse_spec_file,
    reach_and_hold,
    robustness,
    satisfied,
)
from falsify.protocol import SimulatorServer, TestConfig, connect_simulator, run_in_process
from falsify.refsim import ControllerGains, FaultProfile, default_profile, make_runner
from falsify.rejection import REJECTED, Rejected
from falsify.samplers import (
    Continuous,
    CrossEntropySampler,
    Discrete,
    DomainSpec,
    HaltonSampler,
    Robustness,
    UniformSampler,
    distribution_report,
    star_discrepancy,
)
from falsify.scenario import FeatureVector, ScenarioProgram, parse_scenario, parse_scenario_file, sample

__version__ = "0.1.0"

__all__ = [
    "REJECTED",
    "Rejected",
    "__version__",
    # scenario
    "ScenarioProgram",
    "FeatureVector",
    "parse_scenario",
    "parse_scenario_file",
    "sample",
    # samplers
    "DomainSpec",
    "Continuous",
    "Discrete",
    "UniformSampler",
    "HaltonSampler",
    "CrossEntropySampler",
    "Robustness",
    "distribution_report",
    "star_discrepancy",
    # monitor
    "Trace",
    "parse_spec",
    "parse_spec_file",
    "robustness",
    "satisfied",
    "hold_within",
    "reach_and_hold",
    # protocol
    "TestConfig",
    "SimulatorServer",
    "run_in_process",
    "connect_simulator",
    # refsim
    "ControllerGains",
    "FaultProfile",
    "default_profile",
    "make_runner",
    # engine
    "CampaignConfig",
    "ResultRow",
    "ResultTable",
    "Verdict",
    "run_campaign",
    "same_rows",
    "binned_stats",
    "filter_counterexamples",
    "replay",
    "export_training_configs",
    "export_table",
    "rho_scatter_svg",
]
