"""Run scripted handovers in both directions and summarise their timing.

Each run is the three-device layout (master plus two clients) with one CBR
flow; Client1 hands over at t = 1 s.  The table shows mean configuration
time, rule-installation time, total delay and packets lost per rate.

    python demos/handover_timing.py [repetitions]
"""
import sys

from sdnhandover.reproduce import handover_report, handover_runs

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 10
rows = handover_runs(rates=(100, 300, 500), repetitions=reps)
print(handover_report(rows), end="")
