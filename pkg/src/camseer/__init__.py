"""Camera-movement timing prediction from surgical-instrument kinematics."""

__version__ = "0.1.0"
