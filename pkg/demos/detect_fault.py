"""Simulate a two-phase fault on the reference feeder and run the detection pipeline on it."""

import numpy as np

from gridfault import (FaultSpec, NoiseSpec, Pipeline, Scenario, benchmark_setup,
                       build_estimator_bank, calibrate, generate_frames)

net, _ = benchmark_setup("solid", 1)
healthy = generate_frames(Scenario(net, None, 0, 5000, NoiseSpec(seed=1)))
bank = build_estimator_bank(net, noise=NoiseSpec(), reference_frame=healthy[0])
cal = calibrate(bank, healthy)

fault = FaultSpec(19, 0.25, "2ph", "bc")
stream = generate_frames(Scenario(net, fault, 20, 30, NoiseSpec(seed=2)))
events = Pipeline(bank, cal, delta=3).process(stream, warmup=1)
ev = next(e for e in events if e.t_F >= 20)
print(f"fault on line {fault.line_id}, phases {fault.phases}")
print(f"alarm at frame {ev.t_F} via {ev.path}: cluster {ev.cluster} "
      f"(lines {min(ev.lines)}-{max(ev.lines)}), phases {ev.phases}")
print("thresholds:", np.round([cal.th_w, cal.th_0ng], 4))
