"""Learn where failures live with cross-entropy sampling, then export
training configurations concentrated there.

Uniform sampling wastes most episodes on benign parameter regions. The
cross-entropy sampler reweights its proposal toward the lowest-robustness
episodes batch by batch, so after a few hundred episodes the learned
distribution sits on the failure region and can be handed to a training
pipeline as a dataset specification.
"""

from pathlib import Path

from falsify import (
    CampaignConfig,
    CrossEntropySampler,
    distribution_report,
    export_training_configs,
    parse_scenario_file,
    run_campaign,
)

ROOT = Path(__file__).resolve().parent.parent
OUT = Path(__file__).resolve().parent / "out"
OUT.mkdir(exist_ok=True)

state_path = OUT / "learned.sampler.json"
config = CampaignConfig(
    scenario=ROOT / "scenarios" / "falsification.scn",
    spec=ROOT / "scenarios" / "reach_and_hold.mtl",
    sampler="ce",
    episodes=600,
    seed=5,
    sampler_options={"buckets": 20},
    sampler_state_out=state_path,
)
table = run_campaign(config)
print(f"{len(table)} episodes: {table.counts()}")

# The saved sampler state is the learned distribution. Print the start
# distance dimension: most of the probability should have migrated onto
# the faulty stretch of runway.
sampler = CrossEntropySampler.from_json(state_path.read_text(), seed=1)
print("\nlearned start_s distribution (100 m buckets):")
for dim, lo, hi, p in distribution_report(sampler).rows:
    if dim == "start_s" and p > 0.001:
        print(f"  [{lo:6.0f}, {hi:6.0f})  p={p:.3f}  {'#' * int(p * 60)}")

# Draw new full configurations with externals from the learned
# distribution and everything else from the scenario's own distributions.
vectors = export_training_configs(
    parse_scenario_file(ROOT / "scenarios" / "falsification.scn"),
    200,
    seed=9,
    out_path=OUT / "training_configs.jsonl",
    distribution=sampler,
)
hits = sum(1 for v in vectors if 1400 <= v["start_s"] <= 1500)
print(f"\nexported {len(vectors)} configs, {hits} start in [1400, 1500] m")
print(f"configs written to {OUT / 'training_configs.jsonl'}")
