"""Relay a UDP stream from a Wi-Fi device to a Bluetooth device through a bridge.

Client3 (Wi-Fi only) sends to Client1 (Bluetooth only); Client2 holds both
radios and rewrites between them.  With ideal links every payload arrives
in order, so the script checks that first and then reports jitter and loss
on the calibrated links.

    python demos/relay_qos.py
"""
from sdnhandover.reproduce import relay_report, relay_runs, relay_scenario
from sdnhandover.world import run_scenario

ideal = run_scenario(relay_scenario(300, seed=0, ideal=True)).flows["udp"]
print(f"ideal links: sent {len(ideal.sent_ids)}, received {len(ideal.recv_ids)}, "
      f"in order: {ideal.recv_ids == ideal.sent_ids}")
print()
print(relay_report(relay_runs(rates=(100, 300, 500), repetitions=5)), end="")
