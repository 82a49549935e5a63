from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ArgumentError, ConfigurationError, RangeError

COST_FAMILIES = ("quadratic", "power", "cosh", "linear")
ELL_FAMILIES = ("linear", "power", "quadratic", "shifted-quadratic")
SCALAR_FAMILIES = ("quadratic", "power", "cosh")
PENALTY_FAMILIES = ("entropy", "quadratic")


@dataclass(frozen=True)
class CostSpec:
    """
    Convex profile h of the cost c(x, y) = h(d(x, y)), with lambda = h'.
    The linear family is a W1 utility: lambda is constant and not invertible.
    """

    family: str = "quadratic"
    p: float = 2.0

    def __post_init__(self) -> None:
        if self.family not in COST_FAMILIES:
            raise ConfigurationError(f"Unknown cost family {self.family!r}.")
        if self.family == "power" and not self.p > 1.0:
            raise ConfigurationError("Power cost requires p > 1.")

    @property
    def is_linear(self) -> bool:
        return self.family == "linear"

    def h(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "quadratic":
            return 0.5 * t * t
        if self.family == "power":
            return np.power(t, self.p) / self.p
        if self.family == "cosh":
            return np.cosh(t) - 1.0
        return t.copy()

    def dh(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "quadratic":
            return t.copy()
        if self.family == "power":
            return np.power(t, self.p - 1.0)
        if self.family == "cosh":
            return np.sinh(t)
        return np.ones_like(t)

    def ddh(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "quadratic":
            return np.ones_like(t)
        if self.family == "power":
            return (self.p - 1.0) * np.power(t, self.p - 2.0)
        if self.family == "cosh":
            return np.cosh(t)
        return np.zeros_like(t)

    def lambda_inverse(self, y: Any) -> np.ndarray:
        if self.is_linear:
            raise RangeError("lambda = h' is constant for the linear cost; it has no inverse.")
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise RangeError("lambda^-1 is only defined on [0, inf).")
        if self.family == "quadratic":
            return y.copy()
        if self.family == "power":
            return np.power(y, 1.0 / (self.p - 1.0))
        return np.arcsinh(y)

    def h_inverse(self, y: Any) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise RangeError("h^-1 is only defined on [0, inf).")
        if self.family == "quadratic":
            return np.sqrt(2.0 * y)
        if self.family == "power":
            return np.power(self.p * y, 1.0 / self.p)
        if self.family == "cosh":
            return np.arccosh(y + 1.0)
        return y.copy()

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "p": self.p}


@dataclass(frozen=True)
class EllSpec:
    """
    Isotropic convex profile ell with ell(0) = 0 and ell' >= 0 nondecreasing.
    shifted-quadratic is ell(t) = ((t^2 - a^2)_+)^2 / 4, identically zero near 0.
    """

    family: str = "quadratic"
    p: float = 2.0
    shift: float = 0.1

    def __post_init__(self) -> None:
        if self.family not in ELL_FAMILIES:
            raise ConfigurationError(f"Unknown ell family {self.family!r}.")
        if self.family == "power" and not self.p > 1.0:
            raise ConfigurationError("Power ell requires p > 1.")
        if self.family == "shifted-quadratic" and self.shift < 0:
            raise ConfigurationError("shifted-quadratic ell requires shift >= 0.")

    def ell(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "linear":
            return t.copy()
        if self.family == "power":
            return np.power(t, self.p) / self.p
        if self.family == "quadratic":
            return 0.5 * t * t
        excess = np.maximum(t * t - self.shift**2, 0.0)
        return 0.25 * excess * excess

    def derivative(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "linear":
            return np.ones_like(t)
        if self.family == "power":
            return np.power(t, self.p - 1.0)
        if self.family == "quadratic":
            return t.copy()
        return t * np.maximum(t * t - self.shift**2, 0.0)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "p": self.p, "shift": self.shift}


@dataclass(frozen=True)
class ScalarSpec:
    """Even convex scalar f used by the directional inequality; f' is odd and nondecreasing."""

    family: str = "quadratic"
    p: float = 2.0

    def __post_init__(self) -> None:
        if self.family not in SCALAR_FAMILIES:
            raise ConfigurationError(f"Unknown scalar family {self.family!r}.")
        if self.family == "power" and not self.p > 1.0:
            raise ConfigurationError("Power f requires p > 1.")

    def f(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "quadratic":
            return 0.5 * t * t
        if self.family == "power":
            return np.power(np.abs(t), self.p) / self.p
        return np.cosh(t) - 1.0

    def derivative(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "quadratic":
            return t.copy()
        if self.family == "power":
            return np.sign(t) * np.power(np.abs(t), self.p - 1.0)
        return np.sinh(t)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "p": self.p}


@dataclass(frozen=True)
class PenaltySpec:
    """Convex internal energy eta(t) scaled by weight: t log t or t^2 / 2."""

    family: str = "entropy"
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in PENALTY_FAMILIES:
            raise ConfigurationError(f"Unknown penalty family {self.family!r}.")
        if self.weight < 0:
            raise ConfigurationError("Penalty weight must be nonnegative.")

    def eta(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "quadratic":
            return self.weight * 0.5 * t * t
        if np.any(t < 0):
            raise ArgumentError("Entropy penalty is undefined for negative densities.")
        safe = np.where(t > 0, t, 1.0)
        return self.weight * np.where(t > 0, t * np.log(safe), 0.0)

    def derivative(self, t: Any) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family == "quadratic":
            return self.weight * t
        if np.any(t <= 0):
            raise ArgumentError("Entropy penalty derivative requires strictly positive densities.")
        return self.weight * (np.log(t) + 1.0)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "weight": self.weight}
