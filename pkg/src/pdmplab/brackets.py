"""Lie-bracket families, spanning-rank checks, and grid reachability.

The accessible set of the switched system is approximated by a grid fixed
point of single-step mode flows; intersecting the per-seed reachable masks
approximates the common accessible core. The grid mask is a bracketing
approximation of the exact closure; comparisons elsewhere dilate by one
cell to absorb discretization.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import qr
from scipy.ndimage import label

from .flows import rk4_positions

__all__ = [
    "BracketField",
    "ReachableMask",
    "lie_bracket",
    "bracket_family",
    "weak_bracket_rank",
    "weak_bracket_rank_grid",
    "reachable_set",
    "gamma_estimate",
    "dilate_mask",
]

_FD_STEP = 1e-5
_RANK_TOL = 1e-8


@dataclass
class BracketField:
    """A generated vector field with provenance; Jacobians by central
    differences when no closed form is available."""

    value_fn: object
    jacobian_fn: object  # None -> finite differences
    provenance: str
    generation: int

    def value(self, x):
        return self.value_fn(x)

    def jacobian(self, x):
        if self.jacobian_fn is not None:
            return self.jacobian_fn(x)
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        jac = np.empty(x.shape[:-1] + (d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = _FD_STEP
            jac[..., :, j] = (self.value_fn(x + e) - self.value_fn(x - e)) / (2 * _FD_STEP)
        return jac


def _wrap_catalog(fld, generation=0, provenance=None):
    if isinstance(fld, BracketField):
        return fld
    return BracketField(
        value_fn=fld.value,
        jacobian_fn=fld.jacobian,
        provenance=provenance or f"mode:{fld.config()['family']}",
        generation=generation,
    )


def lie_bracket(f, g, x) -> np.ndarray:
    """[F, G](x) = DG(x) F(x) - DF(x) G(x)."""
    fb, gb = _wrap_catalog(f), _wrap_catalog(g)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    fv = fb.value(xb)
    gv = gb.value(xb)
    out = np.einsum("...ij,...j->...i", gb.jacobian(xb), fv) - np.einsum(
        "...ij,...j->...i", fb.jacobian(xb), gv
    )
    return out[0] if single else out


def _bracket_of(fb: BracketField, gb: BracketField, generation: int) -> BracketField:
    def val(x, _f=fb, _g=gb):
        return np.einsum("...ij,...j->...i", _g.jacobian(x), _f.value(x)) - np.einsum(
            "...ij,...j->...i", _f.jacobian(x), _g.value(x)
        )

    return BracketField(
        value_fn=val,
        jacobian_fn=None,
        provenance=f"[{fb.provenance}, {gb.provenance}]",
        generation=generation,
    )


def bracket_family(fields, n: int) -> list:
    """Generation-n bracket family: generation 0 is the mode fields; each
    later generation adds brackets of a generation-0 field with every
    previous-generation element. Capped at n <= 3 (finite-difference noise
    compounds and the family grows geometrically)."""
    if n < 0 or n > 3:
        raise ValueError("bracket generation capped at 0 <= n <= 3")
    base = [_wrap_catalog(f) for f in fields]
    family = list(base)
    prev = list(base)
    for gen in range(1, n + 1):
        new = [_bracket_of(f0, g, gen) for f0 in base for g in prev]
        family.extend(new)
        prev = new
    return family


def weak_bracket_rank(fields, n: int, x) -> tuple:
    """Rank of the generation-n bracket family evaluated at x, with a witness
    subset of indices achieving it (QR column pivoting)."""
    fam = bracket_family(fields, n)
    x = np.asarray(x, dtype=float)
    cols = np.stack([fb.value(x[None, :])[0] for fb in fam], axis=1)
    sv = np.linalg.svd(cols, compute_uv=False)
    rank = int(np.sum(sv > _RANK_TOL * max(1.0, sv[0])))
    if rank == 0:
        return 0, []
    _, _, piv = qr(cols, pivoting=True)
    return rank, list(piv[:rank])


def weak_bracket_rank_grid(fields, n: int, space, grid_res: int) -> np.ndarray:
    """Vectorized rank of the bracket family at every grid cell center."""
    fam = bracket_family(fields, n)
    pts = space.uniform_grid(grid_res)
    cols = np.stack([fb.value(pts) for fb in fam], axis=-1)  # (npts, d, nfam)
    sv = np.linalg.svd(cols, compute_uv=False)
    tol = _RANK_TOL * np.maximum(1.0, sv[..., 0])
    return np.sum(sv > tol[..., None], axis=-1)


@dataclass
class ReachableMask:
    """Boolean grid of cells reachable by switched single-step flows."""

    space: object
    grid_res: int
    mask: np.ndarray
    iterations: int
    converged: bool
    seed_point: np.ndarray = None
    empty: bool = dc_field(init=False)

    def __post_init__(self):
        self.empty = not bool(np.any(self.mask))

    def connected(self) -> bool:
        """Connectivity of the mask (period-aware on tori)."""
        if self.empty:
            return False
        lab, ncomp = label(self.mask)
        if ncomp <= 1:
            return True
        if not self.space.periodic:
            return False
        # merge components that touch across periodic edges
        parent = list(range(ncomp + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb

        if self.space.dim == 1:
            pairs = [(lab[0], lab[-1])]
        else:
            pairs = list(zip(lab[0, :], lab[-1, :])) + list(zip(lab[:, 0], lab[:, -1]))
        for a, b in pairs:
            if a and b:
                union(int(a), int(b))
        roots = {find(int(v)) for v in np.unique(lab) if v}
        return len(roots) == 1


def dilate_mask(mask: np.ndarray, space) -> np.ndarray:
    """One-cell dilation (wrap-aware on tori)."""
    out = mask.copy()
    for axis in range(mask.ndim):
        for off in (-1, 1):
            if space.periodic:
                out |= np.roll(mask, off, axis=axis)
            else:
                shifted = np.zeros_like(mask)
                src = [slice(None)] * mask.ndim
                dst = [slice(None)] * mask.ndim
                if off == 1:
                    src[axis] = slice(0, -1)
                    dst[axis] = slice(1, None)
                else:
                    src[axis] = slice(1, None)
                    dst[axis] = slice(0, -1)
                shifted[tuple(dst)] = mask[tuple(src)]
                out |= shifted
    return out


def reachable_set(ch, x0, grid_res=64, dt=0.05, max_iter=400) -> ReachableMask:
    """Grid fixed point of one-step reachability: a cell becomes reachable
    when some mode's time-dt flow from a reachable cell center lands in it.
    Monotone nondecreasing by construction; stops at fixation or the
    iteration cap (reported, not raised)."""
    if dt > 0.1:
        raise ValueError("dt must be <= 0.1")
    space = ch.space
    x0 = np.asarray(x0, dtype=float)
    shape = (grid_res,) * space.dim
    mask = np.zeros(shape, dtype=bool)
    seed_idx = tuple(i[0] for i in space.bin_index(x0[None, :], grid_res))
    mask[seed_idx] = True
    centers = space.uniform_grid(grid_res).reshape(shape + (space.dim,))
    n_sub = max(1, int(np.ceil(dt / ch.integrator.step)))
    h_sub = dt / n_sub
    converged = False
    it = 0
    frontier = mask.copy()
    while it < max_iter:
        it += 1
        pts = centers[frontier].reshape(-1, space.dim)
        new = np.zeros_like(mask)
        for fld in ch.modes:
            x = pts.copy()
            for _ in range(n_sub):
                x = space.wrap(rk4_positions(fld, x, np.full((x.shape[0], 1), h_sub)))
            idx = space.bin_index(x, grid_res)
            new[idx] = True
        grown = new & ~mask
        mask |= new
        if not np.any(grown):
            converged = True
            break
        frontier = grown
    return ReachableMask(
        space=space, grid_res=grid_res, mask=mask, iterations=it,
        converged=converged, seed_point=x0,
    )


def gamma_estimate(ch, seeds, grid_res=64, dt=0.05, max_iter=400) -> ReachableMask:
    """Intersection of per-seed reachable masks: the grid approximation of
    the set approachable from everywhere. May legitimately be empty."""
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.shape[0] < 4:
        raise ValueError("need at least 4 seeds spread over the space")
    inter = None
    iterations = 0
    converged = True
    for s in seeds:
        r = reachable_set(ch, s, grid_res=grid_res, dt=dt, max_iter=max_iter)
        iterations = max(iterations, r.iterations)
        converged &= r.converged
        inter = r.mask if inter is None else (inter & r.mask)
    return ReachableMask(
        space=ch.space, grid_res=grid_res, mask=inter, iterations=iterations,
        converged=converged, seed_point=None,
    )
