"""Walk through the handover energy arithmetic and the savings curve.

Prints the per-segment energies of one Bluetooth/Wi-Fi handover cycle, the
Wi-Fi-only baseline for the same interval, and how the savings grow as the
device dwells longer on Bluetooth.

    python demos/energy_walkthrough.py
"""
from sdnhandover.energy import DEFAULT_PARAMS, fig10_curve, fig10_limit, handover_cycle, savings_fraction

cycle = handover_cycle(DEFAULT_PARAMS)
print(f"Bluetooth wake-up   {cycle.bt_wakeup_mj:9.2f} mJ")
print(f"Bluetooth active    {cycle.bt_active_mj:9.2f} mJ")
print(f"Wi-Fi wake-up       {cycle.wifi_wakeup_mj:9.2f} mJ")
print(f"proposed total      {cycle.proposed_segments_mj:9.2f} mJ")
print(f"Wi-Fi-only total    {cycle.baseline_segments_mj:9.2f} mJ")
print(f"savings             {100 * savings_fraction(cycle.proposed_segments_mj, cycle.baseline_segments_mj):8.2f} %")
print()
print("dwell on Bluetooth (s)   savings (%)")
for t in (0, 30, 60, 120, 300, 600, 1200, 3600):
    print(f"{t:>22}   {100 * fig10_curve(DEFAULT_PARAMS, t):10.2f}")
print(f"{'limit':>22}   {100 * fig10_limit(DEFAULT_PARAMS):10.2f}")
