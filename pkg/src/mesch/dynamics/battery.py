"""Battery state-of-charge models (SoC in percent)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray


@dataclass(frozen=True)
class ConstantRate:
    """Discharge at a fixed ``k_d`` %/s regardless of the control."""

    k_d: float
    e_min: float = 0.0
    e_max: float = 100.0

    def __post_init__(self):
        if self.k_d <= 0:
            raise ValueError(f"k_d must be positive, got {self.k_d}")
        if not self.e_min < self.e_max:
            raise ValueError("e_min must be below e_max")

    def rate(self, u: ArrayLike) -> float:
        return -self.k_d

    def max_rate(self) -> float:
        return self.k_d

    def kernel_params(self) -> NDArray[np.float64]:
        return np.array([0.0, self.k_d, 0.0, 1.0])


@dataclass(frozen=True)
class ControlDependent:
    """Discharge ``de/dt = -eta/C * alpha(|u|^2)`` with ``alpha(s) = coef * s**power``.

    ``u_norm_max`` bounds ``|u|`` and sets the worst-case rate used for
    remaining-time estimates.
    """

    eta: float
    C: float
    alpha_coef: float = 1.0
    alpha_power: float = 1.0
    u_norm_max: float = 4.0
    e_min: float = 0.0
    e_max: float = 100.0

    def __post_init__(self):
        if self.eta <= 0 or self.C <= 0:
            raise ValueError("eta and C must be positive")
        if self.alpha_coef <= 0 or self.alpha_power <= 0:
            raise ValueError("alpha must be class-K: positive coefficient and power")
        if not self.e_min < self.e_max:
            raise ValueError("e_min must be below e_max")

    def alpha(self, s: float) -> float:
        return self.alpha_coef * s ** self.alpha_power

    def rate(self, u: ArrayLike) -> float:
        s = float(np.dot(u, u))
        return -self.eta / self.C * self.alpha(s)

    def max_rate(self) -> float:
        return self.eta / self.C * self.alpha(self.u_norm_max ** 2)

    def kernel_params(self) -> NDArray[np.float64]:
        return np.array([1.0, self.eta / self.C, self.alpha_coef, self.alpha_power])


BatteryModel = ConstantRate | ControlDependent


def battery_deriv(model: BatteryModel, u: ArrayLike) -> float:
    """SoC rate in %/s; never positive."""
    return model.rate(u)
