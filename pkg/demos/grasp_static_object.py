"""Search, approach and grasp a ball lying on the floor.

Places the ball off to the side and prints the mission events as the behavior
tree moves through its phases, followed by the run summary.
"""
import json
import tempfile
from pathlib import Path

from sagquad.cli import load_config, run

SCEN = Path(__file__).resolve().parents[1] / "scenarios" / "sag_static.yaml"

cfg = load_config(SCEN)
cfg.object.position = (1.8, 1.6, 0.35)
s, log = run(cfg, tempfile.mkdtemp())

seen = set()
with open(log) as fh:
    header = fh.readline().rstrip("\n").split(",")
    ti, pi, ei = header.index("t"), header.index("phase"), header.index("event")
    for line in fh:
        f = line.rstrip("\n").split(",")
        if f[ei] or f[pi] not in seen:
            seen.add(f[pi])
            print(f"{float(f[ti]):6.2f} s  {f[pi]:<10} {f[ei]}")
print(json.dumps({k: v for k, v in s.as_dict().items() if k != "wall_clock"}, indent=1))
