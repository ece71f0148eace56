"""Closed-form circle maps given by monotone lifts.

These satisfy the same map-handle protocol as ``FlowMap`` (apply_many,
tangent_many, log_jacobian_many), so the invariant-rate and transfer-operator
machinery treats flow-time maps and closed-form maps uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spaces import torus1

__all__ = ["LiftCircleMap", "linear_circle_map", "doubling_map", "rotation_map"]


@dataclass(frozen=True)
class LiftCircleMap:
    """Circle map from an increasing lift L with L(u+1) = L(u) + degree."""

    lift: Callable[[np.ndarray], np.ndarray]
    dlift: Callable[[np.ndarray], np.ndarray]
    name: str = "circle map"
    space = torus1()

    @property
    def dim(self) -> int:
        return 1

    @property
    def degree(self) -> int:
        d = float(self.lift(1.0) - self.lift(0.0))
        k = int(round(d))
        if abs(d - k) > 1e-9 or k < 1:
            raise ValueError(f"lift of {self.name} has non-integer winding {d}")
        return k

    def apply_many(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.mod(self.lift(x[:, 0]), 1.0)[:, None]

    def tangent_many(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.dlift(x[:, 0]), dtype=float)[:, None, None]

    def log_jacobian_many(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.log(np.abs(self.dlift(x[:, 0])))

    def full_many(self, x):
        return self.apply_many(x), self.tangent_many(x), self.log_jacobian_many(x)

    def apply(self, x):
        return self.apply_many(np.asarray(x, dtype=float)[None, :])[0]

    def tangent(self, x):
        return self.tangent_many(np.asarray(x, dtype=float)[None, :])[0]

    def log_jacobian(self, x):
        return float(self.log_jacobian_many(np.asarray(x, dtype=float)[None, :])[0])


def linear_circle_map(m: int) -> LiftCircleMap:
    """x -> m x mod 1 (degree m, uniformly expanding for m >= 2)."""
    if int(m) != m or m < 1:
        raise ValueError("m must be a positive integer")
    m = int(m)
    return LiftCircleMap(
        lift=lambda u: m * np.asarray(u, dtype=float),
        dlift=lambda u: np.full_like(np.asarray(u, dtype=float), float(m)),
        name=f"x -> {m}x",
    )


def doubling_map() -> LiftCircleMap:
    return linear_circle_map(2)


def rotation_map(theta: float) -> LiftCircleMap:
    """x -> x + theta mod 1 (degree-1 isometry)."""
    return LiftCircleMap(
        lift=lambda u: np.asarray(u, dtype=float) + theta,
        dlift=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        name=f"rotation by {theta}",
    )
