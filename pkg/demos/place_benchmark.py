"""Optimal placement on the 84-bus reference feeder and the resulting fault clusters."""

from gridfault import benchmark_setup, compute_ufc2

net, sol = benchmark_setup("solid", 1)
part = compute_ufc2(net)

print(f"PMUs {sol.d_star}, voltage-only meters {len(sol.voltage_only)}, bound {sol.d_bar}")
print(f"clusters {part.r}")
for i, lines in enumerate(part.clusters, 1):
    print(f"  {i:2d}: lines {min(lines)}-{max(lines)} ({len(lines)})")
