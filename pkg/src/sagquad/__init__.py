"""Search-Approach-Grasp control for a torque-controlled quadruped manipulator."""

__version__ = "0.1.0"
