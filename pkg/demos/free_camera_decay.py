"""A free-flying camera centred on a point by the image-based servo law.

With perfect depth the three image errors shrink as exp(-lam t); the demo
prints the trace next to that envelope and fits the observed rate.
"""
import numpy as np

from sagquad.sim import simulate_free_camera
from sagquad.spatial import Pose, rotx, rotz

lam = 3.0
cam = Pose(rotz(0.3) @ rotx(-0.2), np.zeros(3))
target = np.array([0.4, -0.3, 2.0])
t, E = simulate_free_camera(cam, target, lam=lam, duration=1.5)
norm = np.linalg.norm(E, axis=1)

print(" t [s]   |e|       |e0| exp(-lam t)")
for k in range(0, len(t), 150):
    print(f"{t[k]:5.2f}   {norm[k]:.6f}  {norm[0] * np.exp(-lam * t[k]):.6f}")
rate = -np.polyfit(t, np.log(norm), 1)[0]
print(f"fitted decay rate {rate:.4f} 1/s for lam = {lam}")
