from __future__ import annotations

"""
Forward-mode dual numbers carrying a full gradient.

A `DualVector` pairs a value with the vector of its partial derivatives with
respect to the n coordinates of θ. Values may be scalars or batched arrays of
shape ``(B,)``; partials then have shape ``(B, n)``. Every operation applies
the chain rule, so evaluating an expression on seeded variables yields the
exact gradient up to floating-point roundoff.
"""

from dataclasses import dataclass
from typing import List, Union

import numpy as np

__all__ = ["DualVector", "Operand", "seed_variables"]

Operand = Union["DualVector", float, np.ndarray]


@dataclass(frozen=True)
class DualVector:
    """
    Value plus gradient.

    Attributes
    ----------
    value : numpy.ndarray
        Scalar (0-d) or batched value of shape ``S``.
    partials : numpy.ndarray
        Gradient of shape ``S + (n,)``.
    """

    value: np.ndarray
    partials: np.ndarray

    # numpy defers to the reflected operators below.
    __array_ufunc__ = None

    @property
    def dim(self) -> int:
        return int(self.partials.shape[-1])

    # ------------------------------------------------------------------
    # Construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def constant(cls, value: Operand, like: "DualVector") -> "DualVector":
        """Lift a plain number to a dual with zero partials, shaped like ``like``."""
        v = np.broadcast_to(np.asarray(value, dtype=float), like.value.shape)
        return cls(v, np.zeros(like.partials.shape, dtype=float))

    def _lift(self, other: Operand) -> "DualVector":
        if isinstance(other, DualVector):
            return other
        return DualVector.constant(other, self)

    def _scale(self, factor: np.ndarray) -> np.ndarray:
        # Broadcast a per-sample factor over the trailing gradient axis.
        return np.asarray(factor)[..., None] * self.partials

    # ------------------------------------------------------------------
    # Arithmetic
    # ------------------------------------------------------------------

    def __neg__(self) -> "DualVector":
        return DualVector(-self.value, -self.partials)

    def __pos__(self) -> "DualVector":
        return self

    def __add__(self, other: Operand) -> "DualVector":
        o = self._lift(other)
        return DualVector(self.value + o.value, self.partials + o.partials)

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "DualVector":
        o = self._lift(other)
        return DualVector(self.value - o.value, self.partials - o.partials)

    def __rsub__(self, other: Operand) -> "DualVector":
        return self._lift(other) - self

    def __mul__(self, other: Operand) -> "DualVector":
        o = self._lift(other)
        return DualVector(
            self.value * o.value,
            self._scale(o.value) + o._scale(self.value),
        )

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> "DualVector":
        o = self._lift(other)
        inv = 1.0 / o.value
        value = self.value * inv
        # (u/v)' = (u' - (u/v) v') / v
        partials = (self.partials - o._scale(value)) * np.asarray(inv)[..., None]
        return DualVector(value, partials)

    def __rtruediv__(self, other: Operand) -> "DualVector":
        return self._lift(other) / self

    def __pow__(self, exponent: float) -> "DualVector":
        """
        Power with a constant real exponent.

        Integer exponents use exact integer powers so negative bases are
        allowed; ``x**0`` has zero partials everywhere.
        """
        b = float(exponent)
        if b.is_integer():
            k = int(b)
            if k == 0:
                return DualVector(np.ones_like(self.value), np.zeros_like(self.partials))
            value = self.value**k
            slope = k * self.value ** (k - 1)
        else:
            value = np.power(self.value, b)
            slope = b * np.power(self.value, b - 1.0)
        return DualVector(value, self._scale(slope))

    # ------------------------------------------------------------------
    # Elementary functions
    # ------------------------------------------------------------------

    def exp(self) -> "DualVector":
        e = np.exp(self.value)
        return DualVector(e, self._scale(e))

    def sin(self) -> "DualVector":
        return DualVector(np.sin(self.value), self._scale(np.cos(self.value)))

    def cos(self) -> "DualVector":
        return DualVector(np.cos(self.value), self._scale(-np.sin(self.value)))

    def sqrt(self) -> "DualVector":
        r = np.sqrt(self.value)
        return DualVector(r, self._scale(0.5 / r))

    def ln(self) -> "DualVector":
        return DualVector(np.log(self.value), self._scale(1.0 / self.value))

    def abs(self) -> "DualVector":
        # Subgradient 0 at the kink (np.sign(0) == 0).
        return DualVector(np.abs(self.value), self._scale(np.sign(self.value)))


def seed_variables(theta: np.ndarray) -> List[DualVector]:
    """
    Seed one dual per coordinate of θ.

    ``theta`` has shape ``(n,)`` or ``(B, n)``; variable i carries the unit
    vector e_i as its partials.
    """
    arr = np.asarray(theta, dtype=float)
    n = arr.shape[-1]
    eye = np.eye(n)
    seeds: List[DualVector] = []
    for i in range(n):
        partials = np.broadcast_to(eye[i], arr.shape).copy()
        seeds.append(DualVector(arr[..., i], partials))
    return seeds
