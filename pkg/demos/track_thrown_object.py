"""Keep a ball that is tossed across the field of view in sight.

Only the wrist moves; the summary reports the fraction of vision frames in
which the ball was detected while airborne.
"""
import tempfile
from pathlib import Path

from sagquad.cli import load_config, run

SCEN = Path(__file__).resolve().parents[1] / "scenarios" / "sag_thrown.yaml"

s, _ = run(load_config(SCEN), tempfile.mkdtemp())
print(f"ball in view for {100 * s.fov_fraction:.1f} % of the flight, "
      f"peak image error {s.max_feature_error:.3f}")
