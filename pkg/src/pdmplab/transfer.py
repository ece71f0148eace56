"""Discretized transfer (push-forward-of-density) operators for circle maps
and 1D flow-time maps, grid C^k seminorms, spectral-radius estimation, the
exponential-time-averaged flow operator, and the finite Neumann-series
invariant.

Densities live on uniform grids (``GridFunction``); interpolation is cubic
(periodic spline on the circle), since linear interpolation degrades C^k
seminorm estimates for k >= 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import BranchInversionFailure, NotSubstochastic, ProbeUnderflow
from .flows import DEFAULT_OPTS, flow_many

__all__ = [
    "GridFunction",
    "CircleMapModel",
    "SpectralEstimate",
    "ck_seminorm",
    "build_circle_model",
    "apply_transfer",
    "apply_transfer_flow",
    "transfer_exp_average",
    "spectral_radius",
    "neumann_invariant",
]

# central finite-difference stencils, offset-symmetric, order j
_STENCILS = {
    1: np.array([-0.5, 0.0, 0.5]),
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
}


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class GridFunction:
    """A real function sampled on a uniform grid.

    Periodic grids sample at {j/N} on the circle; box grids sample at cell
    centers of ``domain``. N must be a power of two >= 16 so dyadic
    refinements compare cleanly.
    """

    values: np.ndarray
    domain: tuple = (0.0, 1.0)
    periodic: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        if self.values.ndim != 1:
            raise ValueError("GridFunction holds 1D samples")
        if not _is_pow2(self.N) or self.N < 16:
            raise ValueError("resolution must be a power of two >= 16")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> float:
        return self.domain[1] - self.domain[0]

    @property
    def h(self) -> float:
        return self.width / self.N

    def grid(self) -> np.ndarray:
        lo = self.domain[0]
        if self.periodic:
            return lo + np.arange(self.N) * self.h
        return lo + (np.arange(self.N) + 0.5) * self.h

    def integral(self) -> float:
        return float(np.mean(self.values) * self.width)

    def copy(self) -> "GridFunction":
        return GridFunction(self.values.copy(), self.domain, self.periodic)

    @classmethod
    def from_callable(cls, f, N, domain=(0.0, 1.0), periodic=True) -> "GridFunction":
        g = cls(np.zeros(N), domain, periodic)
        g.values = np.asarray(f(g.grid()), dtype=float)
        return g

    def interpolator(self):
        """Cubic interpolant of the samples (periodic spline on the circle)."""
        x = self.grid()
        if self.periodic:
            xs = np.append(x, self.domain[0] + self.width)
            ys = np.append(self.values, self.values[0])
            return CubicSpline(xs, ys, bc_type="periodic")
        return CubicSpline(x, self.values, bc_type="natural")


def ck_seminorm(rho: GridFunction, k: int) -> float:
    """Grid C^k norm: sum over j <= k of the sup of |j-th central finite
    difference| / h^j (the j = 0 term is sup |rho|)."""
    if k < 0 or k > 4:
        raise ValueError("k must lie in 0..4")
    if rho.N < 2 ** (k + 4):
        raise ValueError(f"need N >= {2 ** (k + 4)} for k = {k}")
    vals = rho.values
    total = float(np.max(np.abs(vals)))
    h = rho.h
    for j in range(1, k + 1):
        st = _STENCILS[j]
        half = len(st) // 2
        if rho.periodic:
            acc = np.zeros_like(vals)
            for off, c in zip(range(-half, half + 1), st):
                if c != 0.0:
                    acc += c * np.roll(vals, -off)
            diff = acc
        else:
            diff = np.convolve(vals, st[::-1], mode="valid")
        total += float(np.max(np.abs(diff))) / h**j
    return total


@dataclass
class CircleMapModel:
    """A circle map with precomputed monotone branch-inverse tables.

    ``psi[b, j]`` is the b-th preimage of grid node j and ``dpsi_abs[b, j]``
    the absolute branch derivative there, which equals 1/J at the preimage.
    """

    map_handle: object
    N: int
    degree: int
    psi: np.ndarray
    dpsi_abs: np.ndarray

    def grid_function(self, values) -> GridFunction:
        return GridFunction(values)


def build_circle_model(map_handle, N: int, validate=True) -> CircleMapModel:
    """Tabulate branch inverses of a circle map on the grid {j/N}.

    Works for lift-based maps of any degree (monotone-lift inversion with
    Newton refinement) and for time-t flow maps (degree 1, inverse by
    backward flow). Raises BranchInversionFailure when a branch inverse does
    not land back on its grid node to 1e-10.
    """
    y = np.arange(N) / N
    if hasattr(map_handle, "lift"):
        deg = map_handle.degree
        # dense monotone lift table for bracketing + Newton polish
        fine = np.linspace(0.0, 1.0, 64 * N + 1)
        lift_tab = np.asarray(map_handle.lift(fine), dtype=float)
        if np.any(np.diff(lift_tab) <= 0):
            raise BranchInversionFailure("lift is not strictly increasing")
        l0 = lift_tab[0]
        psi = np.empty((deg, N))
        for b in range(deg):
            target = y + np.ceil(l0 - y) + b
            u = np.interp(target, lift_tab, fine)
            for _ in range(60):
                r = np.asarray(map_handle.lift(u), dtype=float) - target
                du = r / np.asarray(map_handle.dlift(u), dtype=float)
                u = np.clip(u - du, 0.0, 1.0)
                if np.max(np.abs(r)) < 1e-13:
                    break
            psi[b] = np.mod(u, 1.0)
        dpsi_abs = 1.0 / np.abs(
            np.stack([np.asarray(map_handle.dlift(psi[b]), dtype=float) for b in range(deg)])
        )
    else:
        # invertible flow-time map: single branch by backward flow
        space = map_handle.space
        ends, tans, _ = flow_many(space, map_handle.field, y[:, None], -map_handle.t,
                                  map_handle.opts)
        deg = 1
        psi = ends[:, 0][None, :]
        dpsi_abs = np.abs(tans[:, 0, 0])[None, :]

    if validate:
        for b in range(deg):
            fwd = map_handle.apply_many(psi[b][:, None])[:, 0]
            gap = np.abs((fwd - y + 0.5) % 1.0 - 0.5)
            if np.max(gap) > 1e-10:
                raise BranchInversionFailure(
                    f"branch {b} round-trip error {np.max(gap):.2e} exceeds 1e-10"
                )
    return CircleMapModel(map_handle=map_handle, N=N, degree=deg, psi=psi, dpsi_abs=dpsi_abs)


def apply_transfer(model: CircleMapModel, rho: GridFunction) -> GridFunction:
    """Push a density through the map: sum over branches of
    rho(psi_b(y)) |psi_b'(y)|."""
    if rho.N != model.N or not rho.periodic:
        raise ValueError("density resolution must match the model grid")
    spline = rho.interpolator()
    out = np.zeros(model.N)
    for b in range(model.degree):
        out += spline(model.psi[b]) * model.dpsi_abs[b]
    return GridFunction(out)


def _rk4_xq(field, x, q, dt, sign):
    """RK4 step of (position, divergence integral), sign flips time."""

    def fx(p):
        return sign * field.value(p)

    def dv(p):
        return sign * field.divergence(p)

    half = 0.5 * dt
    k1x, k1q = fx(x), dv(x)
    x2 = x + half * k1x
    k2x, k2q = fx(x2), dv(x2)
    x3 = x + half * k2x
    k3x, k3q = fx(x3), dv(x3)
    x4 = x + dt * k3x
    k4x, k4q = fx(x4), dv(x4)
    x_new = x + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    q_new = q + (dt[..., 0] / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
    return x_new, q_new


def _backward_transport(space, field, pts, checkpoints, h):
    """Integrate the backward flow with its divergence integral, yielding
    (positions, div integrals, alive mask) at each checkpoint time.

    On boxes, lanes whose backward trajectory leaves the box are frozen and
    flagged dead: the forward map has no preimage there.
    """
    x = pts.copy()
    q = np.zeros(x.shape[0])
    alive = np.ones(x.shape[0], dtype=bool)
    t_now = 0.0
    for t_target in checkpoints:
        while t_now < t_target - 1e-15:
            dt_scalar = min(h, t_target - t_now)
            dt = np.where(alive, dt_scalar, 0.0)[:, None]
            x_new, q_new = _rk4_xq(field, x, q, dt, -1.0)
            x_new = space.wrap(x_new)
            if not space.periodic:
                stay = space.contains(x_new, atol=1e-12)
                newly_dead = alive & ~stay
                if np.any(newly_dead):
                    alive = alive & stay
            keep = alive[:, None]
            x = np.where(keep, x_new, x)
            q = np.where(alive, q_new, q)
            t_now += dt_scalar
        yield x.copy(), q.copy(), alive.copy()


def apply_transfer_flow(space, field, t, rho: GridFunction, opts=DEFAULT_OPTS) -> GridFunction:
    """Transfer operator of the time-t flow map on a 1D space:
    rho(backward endpoint) * exp(-integral of the divergence along the
    backward trajectory); zero where a box preimage does not exist."""
    if space.dim != 1:
        raise ValueError("flow transfer operators are 1D only")
    if t < 0:
        raise ValueError("t must be >= 0")
    pts = rho.grid()[:, None]
    spline = rho.interpolator()
    out = np.zeros(rho.N)
    if t == 0.0:
        return rho.copy()
    for x_back, q, alive in _backward_transport(space, field, pts, [t], opts.step):
        vals = np.where(alive, spline(x_back[:, 0]) * np.exp(q), 0.0)
        out = vals
    return GridFunction(out, rho.domain, rho.periodic)


def transfer_exp_average(space, field, alpha, rho: GridFunction, quad_nodes=64,
                         opts=DEFAULT_OPTS) -> GridFunction:
    """Exponential-time average of flow transfer operators:
    integral of alpha e^{-alpha t} (transfer at time t) dt, by Gauss-Laguerre
    quadrature truncated at t = 40/alpha (tail mass ~ 4e-18)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    u, w = np.polynomial.laguerre.laggauss(int(quad_nodes))
    keep = u <= 40.0
    u, w = u[keep], w[keep]
    order = np.argsort(u)
    u, w = u[order], w[order]
    ts = u / alpha
    pts = rho.grid()[:, None]
    spline = rho.interpolator()
    out = np.zeros(rho.N)
    for wi, (x_back, q, alive) in zip(w, _backward_transport(space, field, pts, ts, opts.step)):
        out += wi * np.where(alive, spline(x_back[:, 0]) * np.exp(q), 0.0)
    return GridFunction(out, rho.domain, rho.periodic)


@dataclass
class SpectralEstimate:
    """Power-iteration estimate of a transfer-operator spectral radius on C^k."""

    k: int
    growth: np.ndarray  # per-iteration C^k norm ratios of the winning probe
    radius: float
    window: tuple  # (start, end) iterations of the geometric-mean window
    probe: str = "?"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.window[1] - self.window[0] < 5:
            raise ValueError("tail window must span at least 5 iterations")


def _probe_set(N, n_probes, seed):
    x = np.arange(N) / N
    probes = [
        ("const", np.ones(N)),
        ("sin", np.sin(2 * np.pi * x)),
        ("cos", np.cos(2 * np.pi * x)),
    ]
    rng = np.random.default_rng(seed)
    idx = 0
    while len(probes) < n_probes:
        coeff = rng.standard_normal((2, 8))
        vals = np.zeros(N)
        for m in range(1, 9):
            vals += coeff[0, m - 1] * np.cos(2 * np.pi * m * x)
            vals += coeff[1, m - 1] * np.sin(2 * np.pi * m * x)
        probes.append((f"rand{idx}", vals))
        idx += 1
    return probes[:max(n_probes, 3)]


def spectral_radius(model: CircleMapModel, k, n_iter=40, n_probes=6, seed=0,
                    window=8) -> SpectralEstimate:
    """Estimate the C^k spectral radius of the transfer operator by probe
    iteration with C^k-seminorm renormalization.

    The radius is the best sliding-window geometric mean of the per-iteration
    norm ratios, maximized over probes; the winning window is reported. The
    probe set always contains the constant, sin and cos functions plus
    seeded band-limited random functions.
    """
    if n_iter < 20:
        raise ValueError("n_iter must be >= 20")
    if n_probes < 3:
        raise ValueError("n_probes must be >= 3")
    window = max(5, min(window, n_iter))
    best = None
    for name, vals in _probe_set(model.N, n_probes, seed):
        rho = GridFunction(vals)
        norm = ck_seminorm(rho, k)
        if norm < 1e-300:
            raise ProbeUnderflow(f"probe {name} starts below 1e-300")
        rho.values /= norm
        ratios = []
        for _ in range(n_iter):
            rho = apply_transfer(model, rho)
            norm = ck_seminorm(rho, k)
            if norm < 1e-300:
                raise ProbeUnderflow(f"probe {name} collapsed below 1e-300")
            ratios.append(norm)
            rho.values /= norm
        ratios = np.asarray(ratios)
        logs = np.log(ratios)
        csum = np.concatenate([[0.0], np.cumsum(logs)])
        means = (csum[window:] - csum[:-window]) / window
        j = int(np.argmax(means))
        cand = (float(np.exp(means[j])), (j, j + window), name, ratios)
        if best is None or cand[0] > best[0]:
            best = cand
    radius, win, name, ratios = best
    return SpectralEstimate(k=k, growth=ratios, radius=radius, window=win, probe=name)


def neumann_invariant(P, pi, delta, tol=1e-14, max_terms=200_000) -> np.ndarray:
    """Invariant probability vector of P = ones * pi^T + Delta via the
    geometric series pi (I + Delta + Delta^2 + ...), summed until the
    increment's L1 norm falls below ``tol``."""
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    delta = np.asarray(delta, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n) or delta.shape != (n, n) or pi.shape != (n,):
        raise ValueError("shape mismatch")
    if np.any(delta < -1e-15) or np.any(pi < -1e-15):
        raise ValueError("pi and Delta must be nonnegative")
    row_sums = delta.sum(axis=1)
    if np.max(row_sums) >= 1.0:
        raise NotSubstochastic(f"Delta has a row sum {np.max(row_sums):.6f} >= 1")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-10:
        raise ValueError("P must be row-stochastic")
    if np.max(np.abs(P - (np.outer(np.ones(n), pi) + delta))) > 1e-10:
        raise ValueError("P does not decompose as ones*pi^T + Delta")
    v = pi.copy()
    term = pi.copy()
    for _ in range(max_terms):
        term = term @ delta
        v += term
        if np.sum(np.abs(term)) < tol:
            return v
    raise NotSubstochastic("Neumann series did not converge within max_terms")
