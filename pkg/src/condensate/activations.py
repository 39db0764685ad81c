"""Activation functions with their derivatives and multiplicity at the origin."""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

RELU = "relu"
TANH = "tanh"
XTANH = "xtanh"
CUSTOM = "custom"


def multiplicity_from_derivatives(derivs_at_zero: Sequence[float], tol: float = 0.0) -> Optional[int]:
    """Smallest s >= 1 with sigma^(s)(0) != 0, given [sigma'(0), sigma''(0), ...]."""
    for s, value in enumerate(derivs_at_zero, start=1):
        if abs(value) > tol:
            return s
    return None


@dataclass(frozen=True)
class ActivationSpec:
    """An elementwise activation.

    ``kind`` selects a built-in; ``custom`` takes user callables for the value and
    first derivative plus a table of derivatives at zero (``derivs_at_zero[i]`` is
    the (i+1)-th derivative) from which the multiplicity is read.
    """

    kind: str
    fn: Optional[Callable] = field(default=None, compare=False)
    dfn: Optional[Callable] = field(default=None, compare=False)
    derivs_at_zero: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in (RELU, TANH, XTANH, CUSTOM):
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == CUSTOM and (self.fn is None or self.dfn is None):
            raise ValueError("custom activation needs fn and dfn")

    @property
    def multiplicity_p(self) -> Optional[int]:
        if self.kind == RELU:
            return None
        if self.kind == TANH:
            return 1
        if self.kind == XTANH:
            return 2
        return multiplicity_from_derivatives(self.derivs_at_zero)

    @property
    def label(self) -> str:
        return self.name or self.kind

    @property
    def is_odd(self) -> bool:
        return self.kind == TANH

    @property
    def smooth(self) -> bool:
        return self.kind != RELU

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.kind == RELU:
            return np.maximum(z, 0.0)
        if self.kind == TANH:
            return np.tanh(z)
        if self.kind == XTANH:
            return z * np.tanh(z)
        return self.fn(z)

    def deriv(self, z: np.ndarray) -> np.ndarray:
        if self.kind == RELU:
            # subgradient 0 at the kink
            return (z > 0).astype(z.dtype)
        if self.kind == TANH:
            t = np.tanh(z)
            return 1.0 - t * t
        if self.kind == XTANH:
            t = np.tanh(z)
            return t + z * (1.0 - t * t)
        return self.dfn(z)

    def value_and_deriv(self, z: np.ndarray):
        if self.kind == TANH:
            t = np.tanh(z)
            return t, 1.0 - t * t
        if self.kind == XTANH:
            t = np.tanh(z)
            return z * t, t + z * (1.0 - t * t)
        return self(z), self.deriv(z)


def get_activation(name: str) -> ActivationSpec:
    name = name.lower()
    if name in (RELU, TANH, XTANH):
        return ActivationSpec(name)
    raise ValueError(f"unknown activation {name!r}; expected relu, tanh or xtanh")
