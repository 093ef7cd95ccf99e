"""Python bindings for the mpcctv C++ library."""

from ._mpcctv import (
    ConfigError,
    ControlRates,
    IllPosedFitError,
    TyreParams,
    VehicleParams,
    VehicleState,
    cornering_stiffness_fx,
    default_config,
    fit_tyre_csv,
    fy_max,
    lateral_force,
    rk2_step,
    simulate,
    slip_angle_threshold,
    tv_yaw_moment,
    tyre_samples_csv,
    validate_config,
)

__all__ = [
    "ConfigError",
    "ControlRates",
    "IllPosedFitError",
    "TyreParams",
    "VehicleParams",
    "VehicleState",
    "cornering_stiffness_fx",
    "default_config",
    "fit_tyre_csv",
    "fy_max",
    "lateral_force",
    "rk2_step",
    "simulate",
    "slip_angle_threshold",
    "tv_yaw_moment",
    "tyre_samples_csv",
    "validate_config",
]
