"""Let the throughput trigger drive handovers for an on/off voice flow.

Silence periods pull the sender down to Bluetooth; talkspurts push it back
to Wi-Fi.  The handover log and the energy summary come from the same
scenario file the CLI accepts.

    python demos/speech_trigger.py
"""
from pathlib import Path

from sdnhandover.scenario import parse_scenario
from sdnhandover.world import run_scenario

path = Path(__file__).resolve().parents[1] / "scenarios" / "speech_trigger.scn"
report = run_scenario(parse_scenario(path.read_text()))

print("device   direction            start_s   delay_ms  lost")
for h in report.handovers:
    if h.committed_at is None:
        continue
    print(f"{h.device:<8} {h.direction.value:<20} {h.started_at / 1e6:7.3f}   {h.delay_ms:8.2f}  {h.lost_packets:4d}")
print()
print(report.summary, end="")
