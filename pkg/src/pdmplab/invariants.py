"""Expansion and volume-growth rates, Lyapunov spectra, periodic orbits.

The subadditive rate estimators evaluate the cocycle at every point of a
uniform grid and report the whole per-iterate sequence; no extrapolation is
applied. Orbit detection is seed-based: results are reported "over detected
orbits" and completeness of a seed list is never certified.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DegenerateTangent, NoSectionCrossing
from .flows import DEFAULT_OPTS, flow, flow_many, rk4_positions

__all__ = [
    "RateEstimate",
    "LyapunovSpectrum",
    "OrbitRecord",
    "expansion_constant",
    "expansion_rate",
    "expansion_volume_rate",
    "lyapunov_spectrum",
    "find_periodic_orbits",
    "ergplan_check",
]

_SINGULAR_FLOOR = 1e-300


@dataclass
class RateEstimate:
    """Finite-horizon estimate of a subadditive growth rate.

    ``per_n_values[n-1]`` is the (1/n)-normalized grid minimum at iterate n;
    ``value`` is the largest-n entry and ``fekete_min`` the running minimum,
    which upper-bounds the limit for subadditive sequences.
    """

    value: float
    n_used: int
    per_n_values: list
    grid_resolution: int

    @property
    def fekete_min(self) -> float:
        return float(np.min(self.per_n_values))


@dataclass
class LyapunovSpectrum:
    exponents: np.ndarray  # sorted ascending
    n_iterates: int
    start: np.ndarray
    log_accumulators: np.ndarray
    nonconvergence: bool = False

    @property
    def total(self) -> float:
        """Sum of exponents = asymptotic log-volume rate along the orbit."""
        return float(np.sum(self.exponents))


@dataclass
class OrbitRecord:
    """A detected equilibrium or periodic orbit with per-unit-time exponents."""

    kind: str  # "equilibrium" | "periodic"
    anchor: np.ndarray
    period: float  # 0 for equilibria
    floquet: tuple  # sorted ascending, one entry per dimension
    # Linear stability flag as used for orbit selection: smallest exponent
    # negative. For flow orbits the flow direction contributes the 0 exponent.
    stable: bool = dc_field(init=False)

    def __post_init__(self):
        self.floquet = tuple(sorted(float(f) for f in self.floquet))
        self.stable = self.floquet[0] < 0.0


def _smallest_singular(mat):
    """Smallest singular values of a batch of 1x1 or 2x2 matrices."""
    d = mat.shape[-1]
    if d == 1:
        return np.abs(mat[..., 0, 0])
    a = np.sum(mat**2, axis=(-2, -1))  # Frobenius^2 = s1^2 + s2^2
    det = mat[..., 0, 0] * mat[..., 1, 1] - mat[..., 0, 1] * mat[..., 1, 0]
    inner = np.maximum(a**2 - 4.0 * det**2, 0.0)
    smax2 = 0.5 * (a + np.sqrt(inner))
    smax = np.sqrt(smax2)
    # s_min = |det| / s_max is stable when the matrix is far from zero
    return np.where(smax > 0, np.abs(det) / np.maximum(smax, _SINGULAR_FLOOR), 0.0)


def expansion_constant(map_handle, x) -> float:
    """Smallest singular value of the tangent map at x."""
    tan = map_handle.tangent_many(np.asarray(x, dtype=float)[None, :])
    return float(_smallest_singular(tan)[0])


def _map_grid(map_handle, grid_res):
    space = map_handle.space
    return space.uniform_grid(grid_res)


def _cocycle_rates(map_handle, grid_res, n_max, k=None):
    """Per-iterate grid minima of (1/n) log-quantities along the cocycle.

    With k None: minimizes log E(phi^n, x). Otherwise minimizes
    log J(phi^n, x) + k log E(phi^n, x).
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    x = _map_grid(map_handle, grid_res)
    n_pts, d = x.shape
    cocycle = np.broadcast_to(np.eye(d), (n_pts, d, d)).copy()
    log_det = np.zeros(n_pts)
    per_n = []
    for n in range(1, n_max + 1):
        x_next, tan, logj = map_handle.full_many(x)
        cocycle = np.einsum("nij,njk->nik", tan, cocycle)
        log_det += logj
        smin = _smallest_singular(cocycle)
        if np.any(smin < _SINGULAR_FLOOR):
            raise DegenerateTangent(f"tangent cocycle singular at iterate {n}")
        log_e = np.log(smin)
        if k is None:
            vals = log_e
        else:
            vals = log_det + k * log_e
        per_n.append(float(np.min(vals)) / n)
        x = x_next
    return per_n


def expansion_rate(map_handle, grid_res=None, n_max=30) -> RateEstimate:
    """Asymptotic worst-case rate at which the map stretches vectors.

    (1/n) log min over the grid of the smallest singular value of the n-fold
    tangent cocycle, reported for every n up to n_max.
    """
    grid_res = _default_grid_res(map_handle, grid_res)
    per_n = _cocycle_rates(map_handle, grid_res, n_max, k=None)
    return RateEstimate(value=per_n[-1], n_used=n_max, per_n_values=per_n, grid_resolution=grid_res)


def expansion_volume_rate(map_handle, k, grid_res=None, n_max=30) -> RateEstimate:
    """Worst-case rate of log-volume growth plus k times the expansion rate."""
    if k < 0:
        raise ValueError("k must be >= 0")
    grid_res = _default_grid_res(map_handle, grid_res)
    per_n = _cocycle_rates(map_handle, grid_res, n_max, k=k)
    return RateEstimate(value=per_n[-1], n_used=n_max, per_n_values=per_n, grid_resolution=grid_res)


def _default_grid_res(map_handle, grid_res):
    if grid_res is None:
        grid_res = 512 if map_handle.dim == 1 else 128
    if grid_res < 8:
        raise ValueError("grid_res must be >= 8 per dimension")
    return int(grid_res)


def lyapunov_spectrum(map_handle, x0, n, burn_in=0, conv_threshold=1e-2) -> LyapunovSpectrum:
    """QR-renormalized tangent iteration along the orbit of x0.

    The nonconvergence flag is set when the averages over the two halves of
    the accumulation window differ by more than ``conv_threshold``; it is
    diagnostic, not an error.
    """
    if n < 100:
        raise ValueError("n must be >= 100")
    x = np.asarray(x0, dtype=float)[None, :].copy()
    d = x.shape[1]
    for _ in range(burn_in):
        x = map_handle.apply_many(x)
    q = np.eye(d)
    acc = np.zeros(d)
    acc_first = np.zeros(d)
    half = n // 2
    for i in range(n):
        x_next, tan, _ = map_handle.full_many(x)
        m = tan[0] @ q
        x = x_next
        q, r = np.linalg.qr(m)
        diag = np.abs(np.diag(r))
        if np.any(diag < _SINGULAR_FLOOR):
            raise DegenerateTangent("tangent iteration became singular")
        acc += np.log(diag)
        if i == half - 1:
            acc_first = acc.copy()
    exps = np.sort(acc / n)
    first = acc_first / half
    second = (acc - acc_first) / (n - half)
    nonconv = bool(np.max(np.abs(np.sort(first) - np.sort(second))) > conv_threshold)
    return LyapunovSpectrum(
        exponents=exps,
        n_iterates=n,
        start=np.asarray(x0, dtype=float),
        log_accumulators=acc,
        nonconvergence=nonconv,
    )


def _newton_equilibrium(space, field, x0, tol=1e-12, max_iter=60):
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        f = field.value(x[None, :])[0]
        if np.linalg.norm(f) < tol:
            return space.wrap(x)
        jac = field.jacobian(x[None, :])[0]
        try:
            step = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            return None
        x = space.wrap(x - step)
        if not np.all(space.contains(x[None, :], atol=1e-9)):
            return None
    f = field.value(x[None, :])[0]
    return space.wrap(x) if np.linalg.norm(f) < tol else None


def _section_crossing_times(space, field, anchor, normal, t_start, t_horizon, march, opts):
    """First forward time > t_start where the orbit re-crosses the section
    through ``anchor`` with positive velocity component, refined by bisection
    to 1e-10 in time. Returns (time, crossing point) or None."""

    def gval(p):
        return float(np.dot(space.displacement(anchor, p), normal))

    t = t_start
    x = flow_many(space, field, anchor[None, :], t, opts, want_tangent=False)[0][0]
    g_prev = gval(x)
    while t < t_horizon:
        t_next = min(t + march, t_horizon)
        x_next = flow_many(space, field, x[None, :], t_next - t, opts, want_tangent=False)[0][0]
        g_next = gval(x_next)
        v_next = float(np.dot(field.value(x_next[None, :])[0], normal))
        if g_prev < 0.0 <= g_next and v_next > 0.0:
            lo, hi = t, t_next
            x_lo = x
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                x_mid = flow_many(
                    space, field, x_lo[None, :], mid - lo, opts, want_tangent=False
                )[0][0]
                if gval(x_mid) >= 0.0:
                    hi = mid
                else:
                    lo, x_lo = mid, x_mid
                if hi - lo < 1e-10:
                    break
            x_hit = flow_many(space, field, x_lo[None, :], hi - lo, opts, want_tangent=False)[0][0]
            return 0.5 * (lo + hi), x_hit
        t, x, g_prev = t_next, x_next, g_next
    return None


def find_periodic_orbits(
    space,
    field,
    candidates,
    t_horizon=60.0,
    t_min=1e-3,
    opts=DEFAULT_OPTS,
    equilibrium_tol=1e-12,
):
    """Detect equilibria and periodic orbits seeded at the candidate points.

    Equilibria: Newton refinement of each candidate, accepted when |F| falls
    below ``equilibrium_tol``; exponents are the real parts of the Jacobian
    eigenvalues. Periodic orbits: Poincare return to the section through the
    (converged) anchor normal to the flow, period refined by bisection to
    1e-10 in time, Floquet pair from the monodromy matrix eigenvalues,
    normalized per unit time. Candidates that neither converge to an
    equilibrium nor to a closed orbit are dropped.
    """
    records = []

    def duplicate(rec):
        for other in records:
            if other.kind != rec.kind:
                continue
            if other.kind == "equilibrium":
                if space.distance(other.anchor, rec.anchor) < 1e-8:
                    return True
            else:
                ts = np.linspace(0.0, other.period, 64, endpoint=False)
                pts = np.stack(
                    [
                        flow_many(space, field, other.anchor[None, :], t, opts, False)[0][0]
                        for t in ts
                    ]
                )
                if np.min(space.distance(pts, rec.anchor)) < 1e-5:
                    return True
        return False

    for cand in np.atleast_2d(np.asarray(candidates, dtype=float)):
        eq = _newton_equilibrium(space, field, cand, tol=equilibrium_tol)
        if eq is not None:
            eig = np.linalg.eigvals(field.jacobian(eq[None, :])[0])
            rec = OrbitRecord(
                kind="equilibrium", anchor=eq, period=0.0, floquet=tuple(np.real(eig))
            )
            if not duplicate(rec):
                records.append(rec)
            continue
        orbit = _converge_periodic(space, field, cand, t_horizon, t_min, opts)
        if orbit is None:
            continue
        anchor, period = orbit
        _, mono, _ = flow_many(space, field, anchor[None, :], period, opts)
        eig = np.linalg.eigvals(mono[0])
        floq = tuple(np.log(np.maximum(np.abs(eig), _SINGULAR_FLOOR)) / period)
        rec = OrbitRecord(kind="periodic", anchor=anchor, period=period, floquet=floq)
        if not duplicate(rec):
            records.append(rec)
    return records


def _converge_periodic(space, field, seed, t_horizon, t_min, opts, max_returns=48):
    """Iterate the Poincare return map until the anchor is fixed to 1e-12."""
    anchor = space.wrap(np.asarray(seed, dtype=float).copy())
    period = None
    gap = np.inf
    march = max(10 * opts.step, 1e-2)
    for _ in range(max_returns):
        f = field.value(anchor[None, :])[0]
        speed = np.linalg.norm(f)
        if speed < 1e-9:
            return None
        normal = f / speed
        hit = _section_crossing_times(space, field, anchor, normal, t_min, t_horizon, march, opts)
        if hit is None:
            raise NoSectionCrossing(
                f"candidate {seed} did not return to its section within t={t_horizon}"
            )
        period, x_hit = hit
        gap = float(space.distance(anchor, x_hit))
        anchor = x_hit
        if gap < 1e-12:
            return anchor, period
    # accept a small residual drift: stable orbits converge geometrically
    if period is not None and gap < 1e-7:
        return anchor, period
    return None


def ergplan_check(space, field, orbit: OrbitRecord, opts=DEFAULT_OPTS) -> dict:
    """Compare the per-unit-time log volume Jacobian along an orbit with the
    sum of its exponents; for equilibria the time-1 Jacobian is used, whose
    log equals the trace of the field Jacobian."""
    t = orbit.period if orbit.kind == "periodic" else 1.0
    res = flow(space, field, orbit.anchor, t, opts)
    logj_rate = res.log_jacobian / t
    floq_sum = float(sum(orbit.floquet))
    return {
        "log_jacobian_rate": logj_rate,
        "exponent_sum": floq_sum,
        "difference": abs(logj_rate - floq_sum),
        "kind": orbit.kind,
        "period": orbit.period,
    }
