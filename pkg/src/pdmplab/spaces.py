"""Flat compact state spaces: circles, 2-tori and trapping boxes.

Points are plain numpy arrays of shape ``(d,)`` (or ``(..., d)`` batched);
torus coordinates are kept reduced to ``[0, 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Space", "torus1", "torus2", "box"]


@dataclass(frozen=True)
class Space:
    """A flat compact state space.

    kind
        ``"torus1"`` (circle, d=1), ``"torus2"`` (flat 2-torus) or ``"box"``
        (axis-aligned trapping region with strictly inward fields).
    lo, hi
        Corner coordinates; for torus kinds these are fixed to [0, 1)^d.
    """

    kind: str
    lo: tuple = field(default=None)
    hi: tuple = field(default=None)

    def __post_init__(self):
        if self.kind not in ("torus1", "torus2", "box"):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.kind == "box":
            lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
            hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
            if lo.shape != hi.shape or lo.ndim != 1 or lo.size not in (1, 2):
                raise ValueError("box corners must be 1- or 2-vectors of equal shape")
            if not np.all(hi > lo):
                raise ValueError("box upper corner must exceed lower corner")
            object.__setattr__(self, "lo", tuple(lo))
            object.__setattr__(self, "hi", tuple(hi))

    @property
    def dim(self) -> int:
        if self.kind == "torus1":
            return 1
        if self.kind == "torus2":
            return 2
        return len(self.lo)

    @property
    def periodic(self) -> bool:
        return self.kind != "box"

    @property
    def lower(self) -> np.ndarray:
        if self.periodic:
            return np.zeros(self.dim)
        return np.asarray(self.lo, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        if self.periodic:
            return np.ones(self.dim)
        return np.asarray(self.hi, dtype=float)

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Reduce coordinates: mod 1 on tori, identity on boxes."""
        x = np.asarray(x, dtype=float)
        if self.periodic:
            return np.mod(x, 1.0)
        return x

    def contains(self, x: np.ndarray, atol: float = 0.0) -> np.ndarray:
        """Elementwise membership over the leading axes of ``x``."""
        x = np.asarray(x, dtype=float)
        if self.periodic:
            return np.ones(x.shape[:-1], dtype=bool)
        lo = self.lower - atol
        hi = self.upper + atol
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Shortest displacement b - a (wrap-aware on tori)."""
        d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.periodic:
            d = (d + 0.5) % 1.0 - 0.5
        return d

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.displacement(a, b), axis=-1)

    def boundary_grid(self, n: int = 1000):
        """Boundary sample points with outward unit normals (box only)."""
        if self.periodic:
            raise ValueError("tori have no boundary")
        lo, hi = self.lower, self.upper
        d = self.dim
        if d == 1:
            pts = np.array([[lo[0]], [hi[0]]])
            normals = np.array([[-1.0], [1.0]])
            return pts, normals
        per_side = max(2, n // 4)
        pts, normals = [], []
        ts = np.linspace(0.0, 1.0, per_side)
        for axis in range(2):
            other = 1 - axis
            for val, sign in ((lo[axis], -1.0), (hi[axis], 1.0)):
                p = np.empty((per_side, 2))
                p[:, axis] = val
                p[:, other] = lo[other] + ts * (hi[other] - lo[other])
                nrm = np.zeros((per_side, 2))
                nrm[:, axis] = sign
                pts.append(p)
                normals.append(nrm)
        return np.concatenate(pts), np.concatenate(normals)

    def uniform_grid(self, res: int) -> np.ndarray:
        """Cell-center grid, shape (res**d, d); on tori the cells are {j/res}."""
        lo, w = self.lower, self.widths
        axes = [lo[k] + (np.arange(res) + 0.5) * w[k] / res for k in range(self.dim)]
        if self.dim == 1:
            return axes[0][:, None]
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=-1)

    def bin_index(self, x: np.ndarray, res: int) -> tuple:
        """Histogram bin index arrays for positions ``x`` at resolution ``res``."""
        x = np.asarray(x, dtype=float)
        u = (x - self.lower) / self.widths
        idx = np.floor(u * res).astype(np.int64)
        if self.periodic:
            idx %= res
        else:
            np.clip(idx, 0, res - 1, out=idx)
        return tuple(idx[..., k] for k in range(self.dim))


def torus1() -> Space:
    return Space("torus1")


def torus2() -> Space:
    return Space("torus2")


def box(lo, hi) -> Space:
    return Space("box", tuple(np.atleast_1d(lo)), tuple(np.atleast_1d(hi)))
