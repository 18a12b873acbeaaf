"""
Measures on [0, 1] with atoms and piecewise-constant densities, finite interval
partitions, partition projections, and the refinement tables through which the
infinite-type entropies and path rates are approximated.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, NamedTuple, Sequence

import numpy as np
from scipy import special

from wflab.core.exceptions import DimensionMismatchError, InvalidStateError
from wflab.ldp.action import PathGrid, action_neutral
from wflab.ldp.simplex import ModelParams, SimplexPoint

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Partition:
    """Cells [0, t_1], (t_1, t_2], ..., (t_k, 1]"""

    breakpoints: np.ndarray

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float).reshape(-1)
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise InvalidStateError("partition breakpoints must lie strictly inside (0, 1)")
        if np.any(np.diff(b) <= 0.0):
            raise InvalidStateError("partition breakpoints must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)

    @classmethod
    def trivial(cls) -> "Partition":
        return cls(np.empty(0))

    @property
    def cells(self) -> int:
        return self.breakpoints.size + 1

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([[0.0], self.breakpoints, [1.0]])

    def refines(self, other: "Partition") -> bool:
        """True iff self is finer than other"""
        return bool(np.all(np.isin(other.breakpoints, self.breakpoints)))

    def __eq__(self, other) -> bool:
        return isinstance(other, Partition) and np.array_equal(self.breakpoints, other.breakpoints)

    def __hash__(self) -> int:
        return hash(self.breakpoints.tobytes())

    def __repr__(self) -> str:
        return f"Partition({self.breakpoints.tolist()})"


@dataclass(frozen=True, eq=False)
class MeasureOnUnitInterval:
    """Probability measure on [0, 1]: point masses plus a piecewise-constant density.

    `edges` is the sorted density mesh and `heights[i]` the density on
    (edges[i], edges[i+1]); gaps between literal pieces carry height 0.
    """

    atom_locations: np.ndarray
    atom_masses: np.ndarray
    edges: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        locs = np.array(self.atom_locations, dtype=float).reshape(-1)
        masses = np.array(self.atom_masses, dtype=float).reshape(-1)
        edges = np.array(self.edges, dtype=float).reshape(-1)
        heights = np.array(self.heights, dtype=float).reshape(-1)
        if locs.shape != masses.shape:
            raise InvalidStateError("atom locations and masses differ in length")
        if np.any(locs < 0.0) or np.any(locs > 1.0):
            raise InvalidStateError("atom locations must lie in [0, 1]")
        if np.any(masses <= 0.0):
            raise InvalidStateError("atom masses must be positive")
        if np.unique(locs).size != locs.size:
            raise InvalidStateError("atom locations must be distinct")
        if heights.size and edges.size != heights.size + 1:
            raise InvalidStateError("density mesh needs one more edge than heights")
        if edges.size and (edges[0] < 0.0 or edges[-1] > 1.0 or np.any(np.diff(edges) <= 0.0)):
            raise InvalidStateError("density mesh must be strictly increasing inside [0, 1]")
        if np.any(heights < 0.0) or not np.all(np.isfinite(heights)):
            raise InvalidStateError("density heights must be finite and non-negative")
        order = np.argsort(locs)
        locs, masses = locs[order], masses[order]
        total = masses.sum() + float(np.sum(heights * np.diff(edges))) if heights.size else masses.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidStateError(f"measure has total mass {total!r}, expected 1")
        for name, arr in (("atom_locations", locs), ("atom_masses", masses), ("edges", edges), ("heights", heights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_literal(cls, atoms: Sequence[Sequence[float]] = (),
                     density: Sequence[Sequence[float]] = ()) -> "MeasureOnUnitInterval":
        """Build from [(loc, mass), ...] and non-overlapping [(left, right, height), ...]"""
        atoms = np.asarray(atoms, dtype=float).reshape(-1, 2)
        pieces = np.asarray(density, dtype=float).reshape(-1, 3)
        pieces = pieces[np.argsort(pieces[:, 0])]
        if np.any(pieces[:, 0] >= pieces[:, 1]):
            raise InvalidStateError("density pieces need left < right")
        if np.any(pieces[1:, 0] < pieces[:-1, 1]):
            raise InvalidStateError("density pieces overlap")
        edges, heights = [], []
        for left, right, height in pieces:
            if edges and edges[-1] < left:
                heights.append(0.0)
                edges.append(left)
            if not edges:
                edges.append(left)
            heights.append(height)
            edges.append(right)
        return cls(atoms[:, 0], atoms[:, 1], np.array(edges), np.array(heights))

    @classmethod
    def lebesgue(cls) -> "MeasureOnUnitInterval":
        return cls(np.empty(0), np.empty(0), np.array([0.0, 1.0]), np.array([1.0]))

    @classmethod
    def atom(cls, location: float) -> "MeasureOnUnitInterval":
        return cls(np.array([location]), np.array([1.0]), np.empty(0), np.empty(0))

    @classmethod
    def from_cdf(cls, cdf: Callable[[np.ndarray], np.ndarray], cells: int) -> "MeasureOnUnitInterval":
        """Piecewise-constant density on `cells` uniform cells carrying the exact cell masses of `cdf`"""
        edges = np.linspace(0.0, 1.0, cells + 1)
        masses = np.diff(cdf(edges))
        masses = masses / masses.sum()
        return cls(np.empty(0), np.empty(0), edges, masses / np.diff(edges))

    def to_literal(self) -> dict:
        return {
            "atoms": [[float(l), float(m)] for l, m in zip(self.atom_locations, self.atom_masses)],
            "density": [[float(a), float(b), float(h)]
                        for a, b, h in zip(self.edges[:-1], self.edges[1:], self.heights) if h > 0.0],
        }

    def mass_up_to(self, t: np.ndarray) -> np.ndarray:
        """mu([0, t]) for an array of t"""
        t = np.asarray(t, dtype=float)
        atoms = np.searchsorted(self.atom_locations, t, side="right")
        atom_cum = np.concatenate([[0.0], np.cumsum(self.atom_masses)])[atoms]
        if not self.heights.size:
            return atom_cum
        cum = np.concatenate([[0.0], np.cumsum(self.heights * np.diff(self.edges))])
        return atom_cum + np.interp(t, self.edges, cum)

    def density_at(self, t: np.ndarray) -> np.ndarray:
        """Density height at points t; 0 outside the mesh"""
        t = np.asarray(t, dtype=float)
        if not self.heights.size:
            return np.zeros_like(t)
        idx = np.searchsorted(self.edges, t, side="right") - 1
        inside = (idx >= 0) & (idx < self.heights.size)
        return np.where(inside, self.heights[np.clip(idx, 0, self.heights.size - 1)], 0.0)


class EntropyRow(NamedTuple):
    level: int
    cells: int
    value: float
    closed_form: float


class RateRow(NamedTuple):
    level: int
    cells: int
    rate: float


def structural_breakpoints(*measures: MeasureOnUnitInterval) -> np.ndarray:
    """Atom locations and density edges of every measure, inside (0, 1)"""
    points = [m.atom_locations for m in measures] + [m.edges for m in measures]
    merged = np.unique(np.concatenate(points)) if points else np.empty(0)
    return merged[(merged > 0.0) & (merged < 1.0)]


def dyadic_partition(level: int, extra: Iterable[float] = ()) -> Partition:
    """Breakpoints j / 2^level, merged with `extra`"""
    if level < 0:
        raise InvalidStateError(f"level must be >= 0, got {level}")
    grid = np.arange(1, 2 ** level) / 2.0 ** level
    extra = np.asarray(list(extra), dtype=float)
    merged = np.union1d(grid, extra[(extra > 0.0) & (extra < 1.0)])
    return Partition(merged)


def refine(a: Partition, b: Partition) -> Partition:
    """Coarsest common refinement: the union of breakpoints"""
    return Partition(np.union1d(a.breakpoints, b.breakpoints))


def project(measure: MeasureOnUnitInterval, part: Partition) -> np.ndarray:
    """Cell masses (mu(B_1), ..., mu(B_r)); summing exactly to 1 after normalization.

    Returned as a plain vector because the trivial partition yields a single
    cell; wrap in SimplexPoint when part has at least two cells.
    """
    cum = measure.mass_up_to(part.breakpoints)
    total = float(measure.mass_up_to(np.array([1.0]))[0])
    masses = np.diff(np.concatenate([[0.0], cum, [total]]))
    masses = np.maximum(masses, 0.0)
    return masses / masses.sum()


def aggregate(vector: np.ndarray, fine: Partition, coarse: Partition) -> np.ndarray:
    """Sum a per-cell vector on `fine` into the cells of the coarser `coarse`"""
    vector = np.asarray(vector, dtype=float)
    if vector.size != fine.cells:
        raise DimensionMismatchError(fine.cells, vector.size, "cell vector")
    if not fine.refines(coarse):
        raise InvalidStateError("aggregate needs `fine` to refine `coarse`")
    right_ends = fine.edges[1:]
    idx = np.searchsorted(coarse.breakpoints, right_ends, side="left")
    return np.bincount(idx, weights=vector, minlength=coarse.cells)


def _entropy(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(special.rel_entr(p, q)))


def projected_entropy(mu: MeasureOnUnitInterval, nu: MeasureOnUnitInterval, part: Partition) -> float:
    """H(pi mu | pi nu) on the cells of `part`"""
    return _entropy(project(mu, part), project(nu, part))


def closed_form_entropy(mu: MeasureOnUnitInterval, nu: MeasureOnUnitInterval) -> float:
    """H(mu|nu) = int log(dmu/dnu) dmu for atom + piecewise-constant pairs; +inf unless mu << nu"""
    value = 0.0
    for loc, mass in zip(mu.atom_locations, mu.atom_masses):
        match = np.flatnonzero(nu.atom_locations == loc)
        if not match.size:
            return math.inf
        value += float(special.rel_entr(mass, nu.atom_masses[match[0]]))
    if mu.heights.size:
        mesh = np.union1d(mu.edges, nu.edges)
        mids = 0.5 * (mesh[:-1] + mesh[1:])
        lengths = np.diff(mesh)
        h_mu, h_nu = mu.density_at(mids), nu.density_at(mids)
        terms = special.rel_entr(h_mu, h_nu) * lengths
        if np.any(np.isinf(terms)):
            return math.inf
        value += float(terms.sum())
    return value


def _levels(max_level: int, extra: np.ndarray) -> List[Partition]:
    return [dyadic_partition(k, extra) for k in range(max_level + 1)]


def entropy_by_refinement(mu: MeasureOnUnitInterval, nu: MeasureOnUnitInterval, max_level: int,
                          include_structural: bool = True) -> List[EntropyRow]:
    """H(pi_k mu | pi_k nu) on dyadic levels k = 0..max_level, beside the closed form.

    With `include_structural` every level also carries both measures'
    breakpoints, so the table reaches the closed form at a finite level.
    """
    extra = structural_breakpoints(mu, nu) if include_structural else np.empty(0)
    exact = closed_form_entropy(mu, nu)
    rows = []
    for k, part in enumerate(_levels(max_level, extra)):
        rows.append(EntropyRow(k, part.cells, projected_entropy(mu, nu, part), exact))
    logger.debug(f"entropy table to level {max_level}: last={rows[-1].value:.6g}, closed form={exact:.6g}")
    return rows


def projected_equilibrium_params(theta: float, nu0: MeasureOnUnitInterval, part: Partition,
                                 gamma: float) -> ModelParams:
    """Finite-type model whose Dirichlet law is the projection of the [0, 1] equilibrium"""
    if part.cells < 2:
        raise InvalidStateError("projected model needs a partition with at least two cells")
    return ModelParams(theta, SimplexPoint(project(nu0, part)), gamma)


def projected_equilibrium_rate(theta: float, nu0: MeasureOnUnitInterval, mu: MeasureOnUnitInterval,
                               part: Partition) -> float:
    """theta H(pi nu0 | pi mu); +inf when pi mu charges a cell that pi nu0 does not"""
    p, x = project(nu0, part), project(mu, part)
    if np.any((x > 0.0) & (p == 0.0)):
        return math.inf
    return theta * _entropy(p, x)


def equilibrium_rate_by_refinement(theta: float, nu0: MeasureOnUnitInterval, mu: MeasureOnUnitInterval,
                                   max_level: int, include_structural: bool = True) -> List[EntropyRow]:
    """projected_equilibrium_rate on dyadic levels, beside theta H(nu0|mu)"""
    extra = structural_breakpoints(nu0, mu) if include_structural else np.empty(0)
    exact = theta * closed_form_entropy(nu0, mu)
    return [EntropyRow(k, part.cells, projected_equilibrium_rate(theta, nu0, mu, part), exact)
            for k, part in enumerate(_levels(max_level, extra))]


def projected_path_rate(theta: float, nu0: MeasureOnUnitInterval, path: Sequence[MeasureOnUnitInterval],
                        times: Sequence[float], part: Partition) -> float:
    """Neutral midpoint action of the projected path, with p the projection of nu0.

    +inf as soon as a projected knot has an empty cell.
    """
    if len(path) != len(times):
        raise DimensionMismatchError(len(times), len(path), "path measures")
    p = project(nu0, part)
    knots = np.stack([project(m, part) for m in path])
    if part.cells < 2:
        return 0.0
    if np.any(p == 0.0) or np.any(knots == 0.0):
        return math.inf
    params = ModelParams(theta, SimplexPoint(p), 1.0)
    return action_neutral(params, PathGrid(np.asarray(times, dtype=float), knots))


def path_rate_by_refinement(theta: float, nu0: MeasureOnUnitInterval, path: Sequence[MeasureOnUnitInterval],
                            times: Sequence[float], max_level: int,
                            include_structural: bool = True) -> List[RateRow]:
    """projected_path_rate on dyadic levels; the last row is the reported supremum estimate"""
    extra = structural_breakpoints(nu0, *path) if include_structural else np.empty(0)
    return [RateRow(k, part.cells, projected_path_rate(theta, nu0, path, times, part))
            for k, part in enumerate(_levels(max_level, extra))]
