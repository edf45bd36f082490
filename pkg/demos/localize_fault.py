"""Attribute failures to the perception component by replaying
counterexamples with substituted oracles.

Two interventions, both on recorded counterexamples and both bit-exact
replays (same features, same noise seeds):

  1. swap perception for ground truth: if every failure clears, the
     plant and controller are fine and perception is the culprit;
  2. disable just the shadow rule for the clear-sky afternoon failures:
     if their robustness recovers, the shadow bias specifically is what
     broke them.
"""

import statistics
from pathlib import Path

from falsify import CampaignConfig, Verdict, filter_counterexamples, replay, run_campaign

ROOT = Path(__file__).resolve().parent.parent

config = CampaignConfig(
    scenario=ROOT / "scenarios" / "falsification.scn",
    spec=ROOT / "scenarios" / "reach_and_hold.mtl",
    sampler="uniform",
    episodes=400,
    seed=12,
)
table = run_campaign(config)
counterexamples = filter_counterexamples(table)
print(f"{len(table)} episodes, {len(counterexamples)} counterexamples")

# Intervention 1: perfect perception.
clean = replay(table, override="ground-truth")
cleared = sum(1 for row in clean.rows if row.verdict is Verdict.SATISFIED)
print(f"ground-truth replay: {cleared}/{len(clean.rows)} counterexamples satisfied")

# Intervention 2: shadows off, for the failures where shadows could be
# the cause (clear sky, afternoon).
afternoon = [
    row
    for row in table.rows
    if row.verdict is Verdict.FALSIFIED
    and row.features.get("clouds") == "clear"
    and 12.0 <= float(row.features.get("time_of_day", 0.0)) <= 18.0
]
print(f"\n{len(afternoon)} clear-sky afternoon counterexamples")
if afternoon:
    unshadowed = replay(table, override="no-shadow", rows=afternoon)
    before = statistics.median(row.rho for row in afternoon)
    after = statistics.median(row.rho for row in unshadowed.rows)
    recovered = sum(1 for row in unshadowed.rows if row.verdict is Verdict.SATISFIED)
    print(f"shadow rule disabled: median robustness {before:.3f} -> {after:.3f}, "
          f"{recovered}/{len(unshadowed.rows)} now satisfied")
