"""drlr: reference-policy guided off-policy RL with calibrated action selection."""

__version__ = "0.1.0"
