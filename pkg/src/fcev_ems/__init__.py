"""Energy-management simulation toolkit for a dual-source fuel-cell/battery
4WD electric vehicle: plant models, two receding-horizon controllers (a
linearized-observer baseline and an explicit-table strategy), a deep-forest
velocity predictor, and a closed-loop benchmark harness.
"""

__version__ = "0.1.0"

from . import harness, mpc, observer, powertrain, report, velocity

__all__ = ["harness", "mpc", "observer", "powertrain", "report", "velocity", "__version__"]
