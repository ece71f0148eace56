"""Invariant-density diagnostics from occupation histograms.

Smoothness is judged statistically: the sup of normalized k-th finite
differences over a region is tracked across a dyadic resolution ladder built
from one fixed sample set, and the verdict follows the growth ratios between
consecutive resolutions. ``Inconclusive`` is a first-class outcome: no
finite-sample test can certify membership in a smoothness class.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import EmptyAccumulator, RegionEmpty
from .pdmp import OccupationAccumulator

__all__ = [
    "EmpiricalDensity",
    "SmoothnessReport",
    "BlowupReport",
    "SupportEstimate",
    "estimate_density",
    "smoothness_probe",
    "blowup_at",
    "support_estimate",
    "predicted_divergence_order",
]

# growth-ratio thresholds for the refinement verdicts
DIVERGING_RATIO = 2.0
BOUNDED_BAND = (0.5, 1.5)
BLOWUP_RATIO = 1.5

_STENCILS = {
    0: np.array([1.0]),
    1: np.array([-0.5, 0.0, 0.5]),
    2: np.array([1.0, -2.0, 1.0]),
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
}


@dataclass
class EmpiricalDensity:
    """Per-mode joint densities on a dyadic resolution ladder.

    ``densities[N]`` has shape (modes, N, ...) and integrates (over space and
    modes together) to 1; every ladder level is a block-sum coarsening of the
    finest level, so all levels share the same samples.
    """

    space: object
    ladder: tuple
    densities: dict
    mode_weights: np.ndarray
    total_weight: float
    scenario_id: str = ""

    @property
    def n_modes(self) -> int:
        return len(self.mode_weights)

    def cell_volume(self, res: int) -> float:
        return self.space.volume / res**self.space.dim


def _pool(arr: np.ndarray, factor: int, dim: int) -> np.ndarray:
    """Block-sum coarsening of per-mode histograms by ``factor``."""
    m = arr.shape[0]
    if dim == 1:
        n = arr.shape[1] // factor
        return arr.reshape(m, n, factor).sum(axis=2)
    n = arr.shape[1] // factor
    return arr.reshape(m, n, factor, n, factor).sum(axis=(2, 4))


def estimate_density(acc: OccupationAccumulator, ladder=None, scenario_id="") -> EmpiricalDensity:
    """Normalized histograms on a dyadic ladder ending at the accumulator's
    resolution; the same sample mass backs every level."""
    if acc.total_weight <= 0:
        raise EmptyAccumulator("cannot estimate a density from zero mass")
    if ladder is None:
        base = acc.grid_res // 4
        ladder = (base, base * 2, base * 4)
    ladder = tuple(int(n) for n in ladder)
    if sorted(ladder) != list(ladder) or len(ladder) < 2:
        raise ValueError("ladder must be increasing with at least two levels")
    for lo_res, hi_res in zip(ladder[:-1], ladder[1:]):
        if hi_res % lo_res != 0:
            raise ValueError("ladder levels must divide each other")
    if ladder[-1] != acc.grid_res:
        raise ValueError("finest ladder level must equal the accumulator resolution")
    mass = acc.mass_fractions()
    dim = acc.space.dim
    dens = {}
    for res in ladder:
        pooled = _pool(mass, acc.grid_res // res, dim) if res != acc.grid_res else mass
        cell = acc.space.volume / res**dim
        dens[res] = pooled / cell
    return EmpiricalDensity(
        space=acc.space,
        ladder=ladder,
        densities=dens,
        mode_weights=acc.mode_weights.copy(),
        total_weight=acc.total_weight,
        scenario_id=scenario_id,
    )


def _region_mask(space, res: int, region) -> np.ndarray:
    """Boolean mask of cells whose centers lie in the per-axis intervals of
    ``region`` (wrap-aware on tori: an interval with lo > hi wraps)."""
    dim = space.dim
    shape = (res,) * dim
    if region is None:
        return np.ones(shape, dtype=bool)
    lo, w = space.lower, space.widths
    axis_masks = []
    for k in range(dim):
        centers = lo[k] + (np.arange(res) + 0.5) * w[k] / res
        a, b = region[k]
        if space.periodic:
            span = (b - a) % 1.0
            if span == 0.0:
                span = 1.0
            m = np.mod(centers - a, 1.0) <= span
        else:
            m = (centers >= a) & (centers <= b)
        axis_masks.append(m)
    if dim == 1:
        return axis_masks[0]
    return axis_masks[0][:, None] & axis_masks[1][None, :]


def _diff_sup(space, values: np.ndarray, k: int, mask: np.ndarray) -> float:
    """Sup over in-region stencil centers of |k-th central difference|/h^k,
    maximized over modes and axes (per-axis cell width h)."""
    st = _STENCILS[k]
    half = len(st) // 2
    dim = space.dim
    res = values.shape[1]
    best = 0.0
    for axis in range(dim):
        ax = axis + 1  # mode axis first
        h = space.widths[axis] / res
        acc = np.zeros_like(values)
        for off, c in zip(range(-half, half + 1), st):
            if c != 0.0:
                acc += c * np.roll(values, -off, axis=ax)
        if not space.periodic and half > 0:
            sl = [slice(None)] * values.ndim
            sl[ax] = slice(0, half)
            acc[tuple(sl)] = 0.0
            sl[ax] = slice(-half, None)
            acc[tuple(sl)] = 0.0
        sel = np.abs(acc[:, mask])
        if sel.size:
            best = max(best, float(np.max(sel)) / h**k)
    return best


@dataclass
class SmoothnessReport:
    """Refinement behaviour of the k-th finite-difference sup over a region.

    Diverging requires every refinement ratio above DIVERGING_RATIO;
    BoundedStable requires every ratio inside BOUNDED_BAND; anything else is
    Inconclusive.
    """

    order: int
    resolutions: tuple
    stats: tuple
    ratios: tuple
    verdict: str = dc_field(init=False)

    def __post_init__(self):
        r = np.asarray(self.ratios)
        if np.all(r > DIVERGING_RATIO):
            self.verdict = "Diverging"
        elif np.all((r >= BOUNDED_BAND[0]) & (r <= BOUNDED_BAND[1])):
            self.verdict = "BoundedStable"
        else:
            self.verdict = "Inconclusive"


def smoothness_probe(d: EmpiricalDensity, k: int, region=None) -> SmoothnessReport:
    """Track the normalized k-th finite-difference sup across the ladder."""
    if not 0 <= k <= 3:
        raise ValueError("k must lie in 0..3")
    stats = []
    for res in d.ladder:
        mask = _region_mask(d.space, res, region)
        if not np.any(mask):
            raise RegionEmpty(f"region selects no cells at resolution {res}")
        stats.append(_diff_sup(d.space, d.densities[res], k, mask))
    stats = tuple(stats)
    floor = 1e-300
    ratios = tuple(
        stats[i + 1] / max(stats[i], floor) for i in range(len(stats) - 1)
    )
    return SmoothnessReport(order=k, resolutions=d.ladder, stats=stats, ratios=ratios)


@dataclass
class BlowupReport:
    point: np.ndarray
    mode: int
    resolutions: tuple
    values: tuple  # density of the bin containing the point, per ladder level
    growth_exponent: float  # mean log2 ratio per refinement
    flagged: bool


def blowup_at(d: EmpiricalDensity, p, mode: int) -> BlowupReport:
    """Density of the bin containing ``p`` across the ladder; flags blow-up
    when the value grows by at least BLOWUP_RATIO per refinement step."""
    p = np.asarray(p, dtype=float)
    if not bool(d.space.contains(p[None, :])[0]):
        raise ValueError("point lies outside the space")
    vals = []
    for res in d.ladder:
        idx = d.space.bin_index(p[None, :], res)
        vals.append(float(d.densities[res][(mode,) + tuple(i[0] for i in idx)]))
    vals = tuple(vals)
    floor = 1e-300
    ratios = np.array([vals[i + 1] / max(vals[i], floor) for i in range(len(vals) - 1)])
    growth = float(np.mean(np.log2(np.maximum(ratios, floor))))
    flagged = bool(np.all(ratios >= BLOWUP_RATIO))
    return BlowupReport(
        point=p, mode=mode, resolutions=d.ladder, values=vals,
        growth_exponent=growth, flagged=flagged,
    )


@dataclass
class SupportEstimate:
    resolution: int
    masks: np.ndarray  # (modes, ...) bool
    threshold: float
    sym_diff_fraction: float  # worst pairwise symmetric difference / union

    @property
    def union(self) -> np.ndarray:
        return np.any(self.masks, axis=0)


def support_estimate(d: EmpiricalDensity, threshold: float, res=None) -> SupportEstimate:
    """Mask of bins carrying more than ``threshold`` of each mode's own mass
    (so thresholds are comparable across modes of unequal weight), plus the
    worst pairwise symmetric-difference fraction between mode supports."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if res is None:
        res = d.ladder[-1]
    dens = d.densities[res]
    cell = d.cell_volume(res)
    mode_mass = d.mode_weights / d.total_weight
    masks = np.zeros(dens.shape, dtype=bool)
    for i in range(d.n_modes):
        if mode_mass[i] > 0:
            masks[i] = dens[i] * cell / mode_mass[i] > threshold
    worst = 0.0
    for i in range(d.n_modes):
        for j in range(i + 1, d.n_modes):
            union = np.sum(masks[i] | masks[j])
            if union:
                worst = max(worst, float(np.sum(masks[i] ^ masks[j]) / union))
    return SupportEstimate(resolution=res, masks=masks, threshold=threshold,
                           sym_diff_fraction=worst)


def predicted_divergence_order(exponent: float, k_max: int = 3) -> int | None:
    """Smallest probe order the refinement rule flags as Diverging for a
    density behaving like |x - z|^exponent near a point z.

    The normalized k-th difference sup there grows by 2^(k - exponent) per
    refinement once k exceeds the exponent (and is flat otherwise), so the
    rule fires exactly when k > exponent + log2(DIVERGING_RATIO). Returns
    None when no order up to ``k_max`` qualifies.
    """
    for k in range(0, k_max + 1):
        if k > exponent and 2.0 ** (k - exponent) > DIVERGING_RATIO:
            return k
    return None
