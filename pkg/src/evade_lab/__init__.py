"""2D time-to-collision conflict detection and DDPG evasive-behavior modelling."""

__version__ = "0.1.0"

from .ssm import (ConflictKind, PairState, TtcResult, VehicleDims, classify_risk,  # noqa: F401
                  conventional_ttc, ttc_2d, ttc_lateral, ttc_longitudinal)
