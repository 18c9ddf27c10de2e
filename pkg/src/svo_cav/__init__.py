"""Socially cooperative receding-horizon control of a CAV merging with a human driver."""

from svo_cav.core import (
    ConfigError,
    ScenarioConfig,
    SvoPair,
    TrajectorySegment,
    VehicleState,
    default_config,
    load_config,
    phi_from_psi,
    psi_from_phi,
)

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "SvoPair",
    "TrajectorySegment",
    "VehicleState",
    "default_config",
    "load_config",
    "phi_from_psi",
    "psi_from_phi",
]
