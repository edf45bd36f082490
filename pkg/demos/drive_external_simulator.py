"""Drive a simulator over TCP instead of in process.

The engine listens; the simulator connects, receives one init record per
episode, streams step records back, and finishes with done. Here the
"external" simulator is the bundled reference plant running in a thread in
this same script, which keeps the demo self-contained while exercising the
real wire path end to end. Any process that speaks the protocol (see
PROTOCOL.md) can take its place.
"""

import socket
import threading
import time
from pathlib import Path

from falsify import CampaignConfig, run_campaign, same_rows
from falsify.protocol import connect_simulator
from falsify.refsim import make_runner

ROOT = Path(__file__).resolve().parent.parent
EPISODES = 8

with socket.socket() as probe:
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]


def simulator_process():
    # One keep-alive connection serving every episode of the campaign.
    # The engine only starts listening once run_campaign is under way, so
    # keep dialing until it answers.
    runner = make_runner()
    for _ in range(200):
        try:
            connect_simulator(("127.0.0.1", port), runner, max_episodes=EPISODES, timeout=30)
            return
        except OSError:
            time.sleep(0.05)


client = threading.Thread(target=simulator_process)
client.start()

tcp_config = CampaignConfig(
    scenario=ROOT / "scenarios" / "falsification.scn",
    spec=ROOT / "scenarios" / "reach_and_hold.mtl",
    episodes=EPISODES,
    seed=6,
    sim=f"tcp:127.0.0.1:{port}",
    keep_alive=True,
)
tcp_table = run_campaign(tcp_config)
client.join()
print(f"over TCP: {tcp_table.counts()}")

# The wire adds nothing and loses nothing: the same campaign in process
# produces identical rows, robustness values included.
builtin_table = run_campaign(
    CampaignConfig(
        scenario=tcp_config.scenario,
        spec=tcp_config.spec,
        episodes=EPISODES,
        seed=6,
    )
)
print(f"in process: {builtin_table.counts()}")
print(f"identical rows: {same_rows(tcp_table, builtin_table)}")
