"""PMU share needed on long chains, from the count bound and from the exact solver."""

from gridfault.montecarlo import emit_curves

for curve, x, level, pct in emit_curves(ns=(10, 50, 250), extras_pct=(0, 10), r_pct=(0, 10),
                                        delta_r_pct=(0,), check_chains=(20, 200)):
    print(f"{curve:20s} x={x:<4} level={level:<3} {pct:6.2f}%")
