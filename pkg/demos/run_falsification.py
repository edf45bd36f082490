"""Run a falsification campaign against the bundled taxiing simulator.

The scenario draws start pose, time of day and weather; the specification
says the plane must settle within 1.5 m of the centerline inside 10 s and
stay there. Episodes where perception faults break that show up as
Falsified rows with negative robustness.
"""

from pathlib import Path

from falsify import CampaignConfig, binned_stats, filter_counterexamples, rho_scatter_svg, run_campaign

ROOT = Path(__file__).resolve().parent.parent
OUT = Path(__file__).resolve().parent / "out"
OUT.mkdir(exist_ok=True)

config = CampaignConfig(
    scenario=ROOT / "scenarios" / "falsification.scn",
    spec=ROOT / "scenarios" / "reach_and_hold.mtl",
    sampler="uniform",
    episodes=300,
    seed=2,
    table_path=OUT / "falsification.jsonl",
)
table = run_campaign(config)

print(f"{len(table)} episodes: {table.counts()}")
print(f"off runway: {table.meta.get('off_runway_episodes', 0)}")

# The worst counterexamples come out first; their features tell you where
# in the parameter space the trouble lives.
worst = filter_counterexamples(table)[:5]
print("\nworst five counterexamples:")
for vector in worst:
    s = vector["start_s"]
    tod = vector["time_of_day"]
    print(f"  episode {vector.provenance.index:3d}: start_s={s:7.1f}  time_of_day={tod:5.2f}  clouds={vector['clouds']}")

# Binning robustness by start distance makes the faulty stretch of runway
# jump out: the bin medians dive where the perception bias lives.
print("\nmedian robustness by start distance (200 m bins):")
for stat in binned_stats(table, "start_s", 200.0):
    bar = "" if stat.median is None else "#" * max(0, int((2.0 - stat.median) * 4))
    median = "-" if stat.median is None else f"{stat.median:7.3f}"
    print(f"  [{stat.lo:6.0f}, {stat.hi:6.0f})  n={stat.count:3d}  median={median}  {bar}")

svg_path = OUT / "rho_vs_start_s.svg"
svg_path.write_text(rho_scatter_svg(table, "start_s", 200.0))
print(f"\nscatter plot written to {svg_path}")
print(f"table written to {config.table_path}")
