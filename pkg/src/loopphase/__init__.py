"""Loop-phase imaging of structured light in closed-loop three-level atoms."""

__version__ = "0.1.0"
