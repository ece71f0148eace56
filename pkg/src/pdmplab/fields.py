"""Closed catalog of vector fields with exact derivatives.

Every field exposes ``value``, ``jacobian`` and ``divergence`` as consistent
closed forms (trace of the Jacobian equals the divergence), vectorized over
leading axes, plus a ``config`` dict so scenarios can be serialized and
reproduced exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "VectorField",
    "ConstantField",
    "ShearSinField",
    "AffineField",
    "Circle1DField",
    "ContractorExpanderCircleField",
    "field_from_config",
]

TWO_PI = 2.0 * np.pi


class VectorField:
    """Base interface; subclasses are frozen dataclasses with exact derivatives."""

    dim: int

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def divergence(self, x: np.ndarray) -> np.ndarray:
        # trace of the Jacobian; subclasses override with cheaper closed forms
        jac = self.jacobian(x)
        return np.trace(jac, axis1=-2, axis2=-1)

    def config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantField(VectorField):
    """F(x) = v; divergence-free translation flow."""

    v: tuple

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(np.atleast_1d(np.asarray(self.v, dtype=float))))

    @property
    def dim(self):
        return len(self.v)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.v), x.shape).copy()

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        d = self.dim
        return np.zeros(x.shape[:-1] + (d, d))

    def divergence(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def config(self):
        return {"family": "constant", "v": list(self.v)}


@dataclass(frozen=True)
class ShearSinField(VectorField):
    """F(x, y) = (c, -s sin(2 pi y)) on the 2-torus.

    Constant drift in x; the y-dynamics has a linearly stable circle y=0
    (exponent -2 pi s) and an unstable circle y=1/2 (+2 pi s).
    """

    speed: float
    amplitude: float

    dim = 2

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = self.speed
        out[..., 1] = -self.amplitude * np.sin(TWO_PI * x[..., 1])
        return out

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        jac = np.zeros(x.shape[:-1] + (2, 2))
        jac[..., 1, 1] = -self.amplitude * TWO_PI * np.cos(TWO_PI * x[..., 1])
        return jac

    def divergence(self, x):
        x = np.asarray(x, dtype=float)
        return -self.amplitude * TWO_PI * np.cos(TWO_PI * x[..., 1])

    def config(self):
        return {"family": "shear_sin", "speed": self.speed, "amplitude": self.amplitude}


@dataclass(frozen=True)
class AffineField(VectorField):
    """F(x) = A (x - p): linear flow anchored at p, in dimension 1 or 2."""

    A: tuple
    anchor: tuple

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        p = np.atleast_1d(np.asarray(self.anchor, dtype=float))
        if A.shape not in ((1, 1), (2, 2)) or p.shape[0] != A.shape[0]:
            raise ValueError("affine field needs a 1x1 or 2x2 matrix and a matching anchor")
        object.__setattr__(self, "A", tuple(map(tuple, A)))
        object.__setattr__(self, "anchor", tuple(p))

    @property
    def dim(self):
        return len(self.anchor)

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.A, dtype=float)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return (x - np.asarray(self.anchor)) @ self.matrix.T

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape).copy()

    def divergence(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(np.trace(self.matrix)))

    def config(self):
        return {"family": "affine", "A": [list(r) for r in self.A], "anchor": list(self.anchor)}


_CIRCLE_PROFILES = ("sine", "cosine_speed")


@dataclass(frozen=True)
class Circle1DField(VectorField):
    """Scalar fields on the circle from a small named-profile catalog.

    ``sine``:         f(x) = a sin(2 pi x)        (equilibria at 0 and 1/2)
    ``cosine_speed``: f(x) = a + b cos(2 pi x)    (no equilibria when |a| > |b|)
    """

    profile: str
    params: tuple

    dim = 1

    def __post_init__(self):
        if self.profile not in _CIRCLE_PROFILES:
            raise ValueError(f"unknown circle profile {self.profile!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in np.atleast_1d(self.params)))

    def _f_df(self, x):
        t = TWO_PI * x[..., 0]
        if self.profile == "sine":
            (a,) = self.params
            return a * np.sin(t), a * TWO_PI * np.cos(t)
        a, b = self.params
        return a + b * np.cos(t), -b * TWO_PI * np.sin(t)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        f, _ = self._f_df(x)
        return f[..., None]

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        _, df = self._f_df(x)
        return df[..., None, None]

    def divergence(self, x):
        x = np.asarray(x, dtype=float)
        _, df = self._f_df(x)
        return df

    def config(self):
        return {"family": "circle1d", "profile": self.profile, "params": list(self.params)}


def _smoothstep(t):
    """C-infinity step: 0 for t<=0, 1 for t>=1, exp(-1/t) blend between."""
    t = np.asarray(t, dtype=float)
    lo = t <= 0.0
    hi = t >= 1.0
    mid = ~(lo | hi)
    out = np.where(hi, 1.0, 0.0)
    if np.any(mid):
        tm = t[mid]
        with np.errstate(over="ignore"):
            a = np.exp(-1.0 / tm)
            b = np.exp(-1.0 / (1.0 - tm))
        out[mid] = a / (a + b)
    return out


def _smoothstep_deriv(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    mid = (t > 0.0) & (t < 1.0)
    if np.any(mid):
        tm = t[mid]
        a = np.exp(-1.0 / tm)
        b = np.exp(-1.0 / (1.0 - tm))
        da = a / tm**2
        db = -b / (1.0 - tm) ** 2
        out[mid] = (da * b - a * db) / (a + b) ** 2
    return out


@dataclass(frozen=True)
class ContractorExpanderCircleField(VectorField):
    """Circle field whose time-1 map is a diffeomorphism with derivative
    exactly ``1/alpha`` at the fixed point 0 and ``exp(slope) > 1`` at 1/2.

    The field is f(x) = -ln(alpha) * x exactly on [-delta, delta] (signed
    distance to 0) and slope * (x - 1/2) exactly near 1/2, blended on
    [delta, 1/2 - delta] with a C-infinity smoothstep and odd-reflected about
    1/2, so 0 and 1/2 are the only equilibria.
    """

    alpha: float
    delta: float = 0.1
    slope: float = None

    dim = 1

    def __post_init__(self):
        if self.alpha <= 1.0:
            raise ValueError("alpha must exceed 1")
        if not 0.0 < self.delta < 0.25:
            raise ValueError("delta must lie in (0, 0.25)")
        if self.slope is None:
            object.__setattr__(self, "slope", float(np.log(self.alpha)))
        elif self.slope <= 0.0:
            raise ValueError("slope at the expanding fixed point must be positive")

    def _f_df_half(self, u):
        """f and f' on u in [0, 1/2]."""
        la = np.log(self.alpha)
        c = self.slope
        span = 0.5 - 2.0 * self.delta
        t = (u - self.delta) / span
        w = _smoothstep(t)
        dw = _smoothstep_deriv(t) / span
        f = -(la * u * (1.0 - w) + c * (0.5 - u) * w)
        df = -(la * (1.0 - w) - la * u * dw - c * w + c * (0.5 - u) * dw)
        return f, df

    def _f_df(self, x):
        u = np.mod(np.asarray(x, dtype=float), 1.0)
        left = u <= 0.5
        uh = np.where(left, u, 1.0 - u)
        f, df = self._f_df_half(uh)
        # odd reflection about 1/2: f(1-u) = -f(u), so f'(1-u) = f'(u)
        f = np.where(left, f, -f)
        return f, df

    def value(self, x):
        x = np.asarray(x, dtype=float)
        f, _ = self._f_df(x[..., 0])
        return f[..., None]

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        _, df = self._f_df(x[..., 0])
        return df[..., None, None]

    def divergence(self, x):
        x = np.asarray(x, dtype=float)
        _, df = self._f_df(x[..., 0])
        return df

    def config(self):
        return {
            "family": "contractor_expander",
            "alpha": self.alpha,
            "delta": self.delta,
            "slope": self.slope,
        }


_FAMILIES = {
    "constant": lambda c: ConstantField(v=c["v"]),
    "shear_sin": lambda c: ShearSinField(speed=float(c["speed"]), amplitude=float(c["amplitude"])),
    "affine": lambda c: AffineField(A=c["A"], anchor=c["anchor"]),
    "circle1d": lambda c: Circle1DField(profile=c["profile"], params=c["params"]),
    "contractor_expander": lambda c: ContractorExpanderCircleField(
        alpha=float(c["alpha"]),
        delta=float(c.get("delta", 0.1)),
        slope=(float(c["slope"]) if c.get("slope") is not None else None),
    ),
}


def field_from_config(cfg: dict) -> VectorField:
    """Rebuild a catalog field from its ``config()`` dict."""
    family = cfg.get("family")
    if family not in _FAMILIES:
        raise ValueError(f"unknown field family {family!r}")
    return _FAMILIES[family](cfg)
