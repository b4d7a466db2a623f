"""
Linear ramp against an oscillating dwell on a ring
==================================================

Both protocols run on the same 22-ion ring with the same noise streams.
The dwell keeps the drive amplitude below the lifetime threshold until the
correlation length reaches the chain length, then pulls the trap down.
"""

# %%
import json
from pathlib import Path

from kzq import experiments
from kzq import langevin_sim as sim
from kzq.quench import protocol_from_dict

cfg = json.loads((Path(__file__).parent.parent / "configs" / "compare_ring22.json").read_text())
cmp_cfg = cfg["compare"]
a = sim.SimConfig(protocol=protocol_from_dict(cmp_cfg["protocol_a"]), **cfg["sim"])
b = sim.SimConfig(protocol=protocol_from_dict(cmp_cfg["protocol_b"]), **cfg["sim"])

# %%
# A quarter of the configured ensemble keeps the run short.
rep = experiments.compare_protocols(a, b, n_seeds=100, seed=cfg["seed"])
print(f"linear      {rep.mu_a:.3f} +- {rep.se_a:.3f} kinks")
print(f"oscillating {rep.mu_b:.3f} +- {rep.se_b:.3f} kinks")
print(f"reduction {100 * rep.reduction:.1f}% (one-sided 95% bound {100 * rep.reduction_lower95:.1f}%)")
print(f"equivalent linear slowdown x{rep.slowdown:.3g}")
