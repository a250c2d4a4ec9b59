"""Vehicle, battery and charger dynamics."""

from dataclasses import dataclass

import numpy as np

from .battery import BatteryModel, ConstantRate, ControlDependent, battery_deriv
from .integrate import IntegrationError, rk4_step, rollout, step_model
from .linear import (
    LinearizedModel,
    controllability_rank,
    discretize,
    error_state_map,
    jacobians_fd,
    linearize,
    reduce_attitude,
)
from .models import (
    ConfigurationError,
    DoubleIntegrator,
    Quadrotor,
    QuadrotorParams,
    Unicycle,
    model_deriv,
    quadrotor_deriv,
)
from .quaternion import H, attitude_error, hat, quat_left, quat_mul, rotation_matrix


@dataclass
class SystemState:
    """Robot state ``x`` augmented with its SoC ``e`` (percent)."""

    x: np.ndarray
    e: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.e < 0:
            raise ValueError(f"SoC must be non-negative, got {self.e}")


__all__ = [
    "BatteryModel", "ConfigurationError", "ConstantRate", "ControlDependent", "DoubleIntegrator", "H",
    "IntegrationError", "LinearizedModel", "Quadrotor", "QuadrotorParams", "SystemState", "Unicycle",
    "attitude_error", "battery_deriv", "controllability_rank", "discretize", "error_state_map", "hat",
    "jacobians_fd", "linearize", "model_deriv", "quadrotor_deriv", "quat_left", "quat_mul",
    "reduce_attitude", "rk4_step", "rollout", "rotation_matrix", "step_model",
]
