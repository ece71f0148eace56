"""Stationary densities of two-mode switched transport in one dimension.

For modes F0 < 0 < F1 on an interval bracketed by their equilibria, the
stationary balance equations reduce by flux elimination to a single scalar
quadrature: with u = F1 rho1 = -F0 rho0,

    u'(x) = -u(x) [a01(x)/F0(x) + a10(x)/F1(x)],

so u is an explicit exponential integral. The endpoints are integrable
singularities; they are handled with endpoint-clustered nodes. This is the
model-side stationary solution that simulations are compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = ["StationaryTransport", "stationary_two_mode_1d"]


def _as_rate_fn(a):
    if callable(a):
        return a
    val = float(a)
    return lambda x: np.full_like(np.asarray(x, dtype=float), val)


@dataclass
class StationaryTransport:
    """Normalized stationary pair (rho0, rho1) on the support interval."""

    z0: float
    z1: float
    nodes: np.ndarray
    rho0: np.ndarray
    rho1: np.ndarray
    cum0: np.ndarray  # cumulative mass of mode 0 up to each node
    cum1: np.ndarray
    exponents: tuple  # (mode-0 exponent at z0, mode-1 exponent at z1)

    @property
    def mode_masses(self) -> tuple:
        return float(self.cum0[-1]), float(self.cum1[-1])

    def bin_masses(self, edges: np.ndarray) -> np.ndarray:
        """Per-mode masses of the bins delimited by ``edges`` (shape (2, n))."""
        e = np.clip(np.asarray(edges, dtype=float), self.z0, self.z1)
        m0 = np.interp(e, self.nodes, self.cum0)
        m1 = np.interp(e, self.nodes, self.cum1)
        return np.stack([np.diff(m0), np.diff(m1)])

    def densities_at(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r0 = np.interp(x, self.nodes, self.rho0, left=0.0, right=0.0)
        r1 = np.interp(x, self.nodes, self.rho1, left=0.0, right=0.0)
        out = np.stack([r0, r1])
        out[:, (x < self.z0) | (x > self.z1)] = 0.0
        return out


def _find_zero(field, lo, hi):
    def f(x):
        return float(field.value(np.array([[x]]))[0, 0])

    return brentq(f, lo, hi, xtol=1e-14)


def stationary_two_mode_1d(space, field0, field1, a01, a10, n_nodes=20001) -> StationaryTransport:
    """Stationary transport solution for mode fields F0 (flowing down to its
    zero z0) and F1 (flowing up to its zero z1 > z0), with switching rates
    a01 (out of mode 0) and a10 (constants or callables of x)."""
    lo, hi = float(space.lower[0]), float(space.upper[0])
    z0 = _find_zero(field0, lo, hi)
    z1 = _find_zero(field1, lo, hi)
    if not z0 < z1:
        raise ValueError("mode-0 equilibrium must lie left of mode-1 equilibrium")
    r01, r10 = _as_rate_fn(a01), _as_rate_fn(a10)

    # endpoint-clustered nodes (quadratic clustering at both ends), open interval
    s = (np.arange(1, n_nodes + 1) - 0.5) / n_nodes
    x = z0 + (z1 - z0) * 0.5 * (1.0 - np.cos(np.pi * s))

    f0 = field0.value(x[:, None])[:, 0]
    f1 = field1.value(x[:, None])[:, 0]
    if not (np.all(f0 < 0.0) and np.all(f1 > 0.0)):
        raise ValueError("need F0 < 0 < F1 strictly inside the support interval")
    g = r01(x) / f0 + r10(x) / f1
    # psi(x) = int_mid^x g, by trapezoid from the midpoint node outward
    mid = n_nodes // 2
    dpsi = 0.5 * (g[1:] + g[:-1]) * np.diff(x)
    psi = np.concatenate([[0.0], np.cumsum(dpsi)])
    psi -= psi[mid]
    u = np.exp(-psi)
    rho0 = -u / f0
    rho1 = u / f1

    def cum(rho):
        seg = 0.5 * (rho[1:] + rho[:-1]) * np.diff(x)
        return np.concatenate([[0.0], np.cumsum(seg)])

    c0, c1 = cum(rho0), cum(rho1)
    total = c0[-1] + c1[-1]
    rho0, rho1, c0, c1 = rho0 / total, rho1 / total, c0 / total, c1 / total

    lam0 = abs(float(field0.jacobian(np.array([[z0]]))[0, 0, 0]))
    lam1 = abs(float(field1.jacobian(np.array([[z1]]))[0, 0, 0]))
    e0 = float(r01(np.array([z0]))[0]) / lam0 - 1.0
    e1 = float(r10(np.array([z1]))[0]) / lam1 - 1.0
    return StationaryTransport(
        z0=z0, z1=z1, nodes=x, rho0=rho0, rho1=rho1, cum0=c0, cum1=c1, exponents=(e0, e1)
    )
