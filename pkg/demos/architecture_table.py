"""Print parameter and MAC counts for every shipped preset.

Run: python3 demos/architecture_table.py
"""

from rvt.model import count_flops, count_params, flops_breakdown, preset
from rvt.model.config import PRESETS

print(f"{'preset':16s} {'params':>10s} {'MACs@native':>12s}  grids")
for name in sorted(PRESETS):
    cfg = preset(name)
    grids = " -> ".join(f"{h}x{w}" for h, w in cfg.stage_grids().values())
    print(f"{name:16s} {count_params(cfg) / 1e6:9.3f}M {count_flops(cfg) / 1e9:11.3f}G  {grids}")

# Where the compute goes: attention core grows with tokens squared, so
# spending blocks on the early high-resolution stages (V5/V6) is expensive.
print()
for name in ("v2", "v6"):
    br = flops_breakdown(preset(name))
    total = sum(br.values())
    parts = ", ".join(f"{k} {v / total:.0%}" for k, v in br.items() if v)
    print(f"{name}: {parts}")
