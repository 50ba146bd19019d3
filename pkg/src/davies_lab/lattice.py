"""Hypercubic lattices, site regions and the multi-level overlapping coarse-graining."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import ndimage

from ._kernels import UNREACHED, grid_distance
from .errors import ConfigError, DomainError

Site = tuple[int, ...]
METRICS = ("chebyshev", "taxicab")


def point_distance(x: Sequence[int], y: Sequence[int], metric: str = "chebyshev") -> int:
    diff = np.abs(np.asarray(x) - np.asarray(y))
    return int(diff.max() if metric == "chebyshev" else diff.sum())


def pairwise_distances(a: np.ndarray, b: np.ndarray, metric: str = "chebyshev") -> np.ndarray:
    diff = np.abs(a[:, None, :] - b[None, :, :])
    return diff.max(axis=2) if metric == "chebyshev" else diff.sum(axis=2)


def diameter(sites: Iterable[Sequence[int]], metric: str = "chebyshev") -> int:
    pts = np.array(list(sites), dtype=np.int64)
    if len(pts) <= 1:
        return 0
    return int(pairwise_distances(pts, pts, metric).max())


@dataclass(frozen=True)
class Lattice:
    """The box [-L, L]^D of Z^D with lexicographically ordered sites."""

    D: int
    L: int
    metric: str = "chebyshev"

    def __post_init__(self):
        if self.D < 1:
            raise ConfigError(f"lattice dimension must be positive, got D={self.D}")
        if self.L < 0:
            raise ConfigError(f"half side must be non-negative, got L={self.L}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")

    @property
    def side(self) -> int:
        return 2 * self.L + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.D

    @property
    def n_sites(self) -> int:
        return self.side**self.D

    @cached_property
    def coords(self) -> np.ndarray:
        grids = np.meshgrid(*([np.arange(-self.L, self.L + 1)] * self.D), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)

    @cached_property
    def sites(self) -> tuple[Site, ...]:
        return tuple(tuple(int(v) for v in row) for row in self.coords)

    def contains(self, site: Sequence[int]) -> bool:
        return len(site) == self.D and all(-self.L <= v <= self.L for v in site)

    def index(self, site: Sequence[int]) -> int:
        if not self.contains(site):
            raise DomainError(f"site {tuple(site)} is not in the lattice")
        return int(np.ravel_multi_index(tuple(v + self.L for v in site), self.shape))

    def region(self, sites: Iterable[Sequence[int]] = ()) -> "Region":
        return Region(self, frozenset(tuple(int(v) for v in s) for s in sites))

    def full(self) -> "Region":
        return Region(self, frozenset(self.sites))

    def mask(self, region: "Region | Iterable[Sequence[int]]") -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        sites = region.sites if isinstance(region, Region) else region
        pts = np.array(list(sites), dtype=np.int64).reshape(-1, self.D)
        if len(pts):
            out[tuple((pts + self.L).T)] = True
        return out

    def region_from_mask(self, mask: np.ndarray) -> "Region":
        pts = np.argwhere(mask) - self.L
        return Region(self, frozenset(map(tuple, pts.tolist())))

    def padded_for(self, ell: int) -> "Lattice":
        """Smallest enclosing box whose side is a multiple of ``ell``."""
        L = self.L
        while (2 * L + 1) % ell:
            L += 1
        return Lattice(self.D, L, self.metric)


@dataclass(frozen=True)
class Region:
    """A set of sites of a lattice."""

    lattice: Lattice
    sites: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        bad = [s for s in self.sites if not self.lattice.contains(s)]
        if bad:
            raise DomainError(f"sites {sorted(bad)[:3]} are outside the lattice")

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self) -> Iterator[Site]:
        return iter(sorted(self.sites))

    def __contains__(self, site) -> bool:
        return tuple(site) in self.sites

    def _other(self, other) -> frozenset:
        if isinstance(other, Region):
            if other.lattice != self.lattice:
                raise DomainError("regions live on different lattices")
            return other.sites
        return frozenset(tuple(s) for s in other)

    def __or__(self, other) -> "Region":
        return Region(self.lattice, self.sites | self._other(other))

    def __and__(self, other) -> "Region":
        return Region(self.lattice, self.sites & self._other(other))

    def __sub__(self, other) -> "Region":
        return Region(self.lattice, self.sites - self._other(other))

    def __le__(self, other) -> bool:
        return self.sites <= self._other(other)

    def complement(self) -> "Region":
        return self.lattice.full() - self

    def is_empty(self) -> bool:
        return not self.sites

    def array(self) -> np.ndarray:
        return np.array(sorted(self.sites), dtype=np.int64).reshape(-1, self.lattice.D)

    def diameter(self) -> int:
        return diameter(self.sites, self.lattice.metric)


def distance(region_a: Region, region_b: Region, metric: str | None = None) -> int:
    """Minimum metric distance between two non-empty regions."""
    if region_a.is_empty() or region_b.is_empty():
        raise DomainError("distance needs two non-empty regions")
    metric = metric or region_a.lattice.metric
    a, b = region_a.array(), region_b.array()
    if len(a) * len(b) <= 2_000_000:
        return int(pairwise_distances(a, b, metric).min())
    lat = region_a.lattice
    dist = grid_distance(lat.mask(region_a), metric)
    return int(dist[lat.mask(region_b)].min())


def boundary(region: Region, r: int = 1, interaction=None) -> Region:
    """Sites outside ``region`` coupled to it.

    With an interaction (anything exposing ``supports``), these are the sites
    of terms that touch the region; otherwise the metric ball of radius ``r``.
    """
    lat = region.lattice
    if region.is_empty():
        return lat.region()
    if interaction is not None:
        touched = set()
        for support in interaction.supports:
            if support & region.sites:
                touched |= support
        return Region(lat, frozenset(s for s in touched if lat.contains(s))) - region
    dist = grid_distance(lat.mask(region), lat.metric, max_depth=r)
    return lat.region_from_mask((dist > 0) & (dist <= r))


def closure(region: Region, r: int = 1, interaction=None) -> Region:
    return region | boundary(region, r, interaction)


# -- coarse-graining ---------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    level: int
    index: int
    extended: Region
    core: Region
    inner: Region
    thin_axes: tuple[int, ...]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.extended.array()
        return pts.min(axis=0), pts.max(axis=0)


def _crop(box, margin: int, shape) -> tuple[slice, ...]:
    """Slices of the bounding box ``box`` grown by ``margin`` and clipped to the grid."""
    return tuple(slice(max(s.start - margin, 0), min(s.stop + margin, n))
                 for s, n in zip(box, shape))


def _label_cells(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Face-connected components, numbered by their lexicographically first site."""
    labels, n = ndimage.label(mask)
    if n == 0:
        return labels, 0
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    order = np.argsort(first[keep], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[ids[keep][order]] = np.arange(1, n + 1)
    return remap[labels], n


@dataclass(frozen=True)
class CoarseGraining:
    """Leveled overlapping cover of a (possibly padded) lattice.

    ``extended_labels[a]``, ``core_labels[a]`` and ``inner_labels[a]`` are
    integer grids holding ``i + 1`` on the sites of the ``i``-th cell of level
    ``a`` and 0 elsewhere. ``skeletons[a]`` is the boolean grid of the level-a
    skeleton, with ``skeletons[D]`` the whole box.
    """

    base: Lattice
    lattice: Lattice
    k: int
    c: int
    ell: int
    extended_labels: tuple[np.ndarray, ...]
    core_labels: tuple[np.ndarray, ...]
    inner_labels: tuple[np.ndarray, ...]
    skeletons: tuple[np.ndarray, ...]
    thin_axes: tuple[tuple[tuple[int, ...], ...], ...]

    @property
    def D(self) -> int:
        return self.lattice.D

    def n_cells(self, level: int) -> int:
        return len(self.thin_axes[level])

    @cached_property
    def padded_sites(self) -> Region:
        inner = np.zeros(self.lattice.shape, dtype=bool)
        shift = self.lattice.L - self.base.L
        inner[tuple(slice(shift, shift + self.base.side) for _ in range(self.D))] = True
        return self.lattice.region_from_mask(~inner)

    def _regions(self, labels: np.ndarray, n: int) -> list[Region]:
        flat = labels.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=n + 1)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        coords = self.lattice.coords
        out = []
        for i in range(1, n + 1):
            idx = order[bounds[i]:bounds[i + 1]]
            out.append(Region(self.lattice, frozenset(map(tuple, coords[idx].tolist()))))
        return out

    @cached_property
    def levels(self) -> tuple[tuple[Cell, ...], ...]:
        levels = []
        for a in range(self.D + 1):
            n = self.n_cells(a)
            ext = self._regions(self.extended_labels[a], n)
            core = self._regions(self.core_labels[a], n)
            inner = self._regions(self.inner_labels[a], n)
            levels.append(tuple(Cell(a, i, ext[i], core[i], inner[i], self.thin_axes[a][i])
                                for i in range(n)))
        return tuple(levels)

    def cells(self) -> list[Cell]:
        return [cell for level in self.levels for cell in level]

    def skeleton(self, level: int) -> Region:
        return self.lattice.region_from_mask(self.skeletons[level])

    def partition(self, level: int) -> tuple[Region, Region, Region, Region]:
        """(W, X, Y, Z) at a level in 1..D: outside, inner, collar and rest of the skeleton."""
        if not 1 <= level <= self.D:
            raise DomainError(f"partition views exist for levels 1..{self.D}")
        sk = self.skeletons[level]
        core = self.core_labels[level] > 0
        inner = self.inner_labels[level] > 0
        lat = self.lattice
        return (lat.region_from_mask(~sk), lat.region_from_mask(inner),
                lat.region_from_mask(core & ~inner), lat.region_from_mask(sk & ~core))

    def multiplicity(self) -> np.ndarray:
        return sum((lab > 0).astype(np.int64) for lab in self.core_labels)

    def to_json(self) -> str:
        def pts(region: Region) -> list:
            return [list(s) for s in region]

        doc = {
            "D": self.D, "L": self.base.L, "L_padded": self.lattice.L,
            "k": self.k, "c": self.c, "ell": self.ell, "metric": self.lattice.metric,
            "levels": [
                {"level": a, "cells": [
                    {"index": cell.index, "thin_axes": list(cell.thin_axes),
                     "extended": pts(cell.extended), "core": pts(cell.core),
                     "inner": pts(cell.inner)} for cell in level]}
                for a, level in enumerate(self.levels)],
        }
        return json.dumps(doc, sort_keys=True)

    def site_rows(self) -> list[tuple]:
        """Rows (site..., padded, level, cell, role) for every site-cell incidence."""
        padded = self.lattice.mask(self.padded_sites).ravel()
        rows = []
        coords = self.lattice.coords
        for a in range(self.D + 1):
            ext = self.extended_labels[a].ravel()
            core = self.core_labels[a].ravel()
            inner = self.inner_labels[a].ravel()
            for j in np.flatnonzero(ext):
                role = "interior" if inner[j] else ("collar" if core[j] else "buffer")
                rows.append((*coords[j].tolist(), int(padded[j]), a, int(ext[j]) - 1, role))
        return rows


def validate_parameters(lattice: Lattice, k: int, c: int, ell: int, r: int = 1) -> None:
    D = lattice.D
    checks = [
        (k >= 1 and c >= 1, f"k, c positive (k={k}, c={c})"),
        (k >= r, f"k >= r (k={k}, r={r})"),
        (c >= r, f"c >= r (c={c}, r={r})"),
        (ell % 2 == 1, f"ell odd (ell={ell})"),
        (ell > 2 * D * (k + c), f"ell > 2D(k+c) (ell={ell}, 2D(k+c)={2 * D * (k + c)})"),
        (ell <= lattice.side, f"ell <= 2L+1 (ell={ell}, 2L+1={lattice.side})"),
    ]
    for ok, text in checks:
        if not ok:
            raise ConfigError(f"coarse-graining parameter gate violated: {text}")


def build_coarse_graining(lattice: Lattice, k: int, c: int, ell: int, r: int = 1) -> CoarseGraining:
    """Construct the leveled cover, padding the box when ``ell`` does not divide its side."""
    validate_parameters(lattice, k, c, ell, r)
    lat = lattice.padded_for(ell)
    D, metric, shape = lat.D, lat.metric, lat.shape
    depth = k + c
    full = np.ones(shape, dtype=bool)

    ext_l: list = [None] * (D + 1)
    core_l: list = [None] * (D + 1)
    inner_l: list = [None] * (D + 1)
    thin: list = [None] * (D + 1)
    skel: list = [None] * (D + 1)

    def trim(cell_labels: np.ndarray, n: int, host: np.ndarray):
        """Core and inner parts of every cell relative to the host skeleton."""
        core = np.zeros(shape, dtype=np.int64)
        inner = np.zeros(shape, dtype=np.int64)
        objects = ndimage.find_objects(cell_labels)
        for i, box in enumerate(objects, start=1):
            sl = _crop(box, depth, shape)
            sub = cell_labels[sl] == i
            dist = grid_distance(host[sl] & ~sub, metric, max_depth=depth)
            core[sl][sub & (dist > k)] = i
            inner[sl][sub & (dist > depth)] = i
        return core, inner

    # top level: hypercubes of side ell
    blocks = lat.side // ell
    block_idx = np.indices(shape) // ell
    top = np.ravel_multi_index(tuple(block_idx), (blocks,) * D) + 1
    ext_l[D] = top
    core_l[D], inner_l[D] = trim(top, blocks**D, full)
    thin[D] = tuple(() for _ in range(blocks**D))
    skel[D] = full

    host = full & ~(inner_l[D] > 0)
    for a in range(D - 1, 0, -1):
        skel[a] = host
        outside = ~host
        hits = []
        for b in range(D):
            hits.append(np.broadcast_to(outside.any(axis=b, keepdims=True), shape))
        # corner sites hit along fewer than D - a axes belong to lower-level cells
        n_hits = np.sum(hits, axis=0)
        joint = host & (n_hits >= D - a)
        labels, n = _label_cells(joint)
        ext_l[a] = labels
        core_l[a], inner_l[a] = trim(labels, n, host)
        hit_sets = [set(np.unique(labels[hits[b] & joint]).tolist()) for b in range(D)]
        thin[a] = tuple(tuple(b for b in range(D) if i in hit_sets[b]) for i in range(1, n + 1))
        host = host & ~(inner_l[a] > 0)

    skel[0] = host
    labels, n = _label_cells(host)
    ext_l[0] = core_l[0] = inner_l[0] = labels
    thin[0] = tuple(tuple(range(D)) for _ in range(n))

    return CoarseGraining(lattice, lat, k, c, ell, tuple(ext_l), tuple(core_l),
                          tuple(inner_l), tuple(skel), tuple(thin))


# -- property verification ---------------------------------------------------

@dataclass(frozen=True)
class CoarseGrainingReport:
    """Outcome of the exhaustive structural checks on one coarse-graining."""

    disjoint: bool
    sizes_ordered: bool
    max_cell_size: int
    tight_size_bounds: tuple[int, ...]
    zero_cells_in_box: bool
    zero_cell_separation: int | None
    covers: bool
    max_multiplicity: int
    collar_gap: tuple[int | None, ...]
    core_separation: tuple[int | None, ...]
    partition_exact: bool
    skeleton_identity: bool
    params: tuple[int, int, int, int, int] = (0, 0, 0, 0, 0)

    @property
    def property_flags(self) -> dict[str, bool]:
        D, L, k, c, ell = self.params
        sep0 = self.zero_cell_separation
        return {
            "1_disjoint_and_sizes": self.disjoint and self.sizes_ordered and self.max_cell_size <= ell**D,
            "2_zero_cells": self.zero_cells_in_box and (sep0 is None or sep0 >= ell - 2 * D * (k + c)),
            "3_cover": self.covers and self.max_multiplicity <= D + 1,
            "4_collar_gap": all(g is None or g >= c for g in self.collar_gap) and self.skeleton_identity,
            "5_core_separation": all(s is None or s >= 2 * k for s in self.core_separation[1:]),
            "partition": self.partition_exact,
        }

    @property
    def passed(self) -> bool:
        return all(self.property_flags.values())


def _min_label_separation(labels: np.ndarray, margin: int, metric: str) -> int | None:
    """Smallest distance between two differently labelled sets, or None if above ``margin``."""
    best = None
    objects = ndimage.find_objects(labels)
    for i, box in enumerate(objects, start=1):
        if box is None:
            continue
        sl = _crop(box, margin, labels.shape)
        sub = labels[sl]
        dist = grid_distance(sub == i, metric, max_depth=margin)
        others = (sub > 0) & (sub != i)
        if np.any(others):
            d = int(dist[others].min())
            if d != UNREACHED and (best is None or d < best):
                best = d
    return best


def verify_coarse_graining(cg: CoarseGraining) -> CoarseGrainingReport:
    D, k, c, ell = cg.D, cg.k, cg.c, cg.ell
    metric = cg.lattice.metric
    shape = cg.lattice.shape

    disjoint = True
    sizes_ordered = True
    max_size = 0
    tight = []
    for a in range(D + 1):
        n = cg.n_cells(a)
        ext, core, inner = cg.extended_labels[a], cg.core_labels[a], cg.inner_labels[a]
        # a label grid cannot hold overlapping cells; containment is what can fail
        disjoint &= bool(np.all((core == 0) | (core == ext)) and np.all((inner == 0) | (inner == ext)))
        disjoint &= bool(np.all((inner == 0) | (core > 0)))
        if n:
            se = np.bincount(ext.ravel(), minlength=n + 1)[1:]
            sc = np.bincount(core.ravel(), minlength=n + 1)[1:]
            si = np.bincount(inner.ravel(), minlength=n + 1)[1:]
            sizes_ordered &= bool(np.all(si <= sc) and np.all(sc <= se))
            max_size = max(max_size, int(se.max()))
        w = 2 * (D - a) * (k + c)
        tight.append(w ** (D - a) * max(ell - w, 0) ** a)

    in_box = True
    for box in ndimage.find_objects(cg.extended_labels[0]):
        if box is not None:
            in_box &= all(s.stop - s.start <= 2 * D * (k + c) for s in box)
    sep0 = _min_label_separation(cg.extended_labels[0], max(ell - 2 * D * (k + c), 0) + 1, metric)

    mult = cg.multiplicity()
    covers = bool(np.all(mult >= 1))

    collar_gap = []
    skeleton_identity = True
    partition_exact = True
    for a in range(1, D + 1):
        sk = cg.skeletons[a]
        core = cg.core_labels[a] > 0
        inner = cg.inner_labels[a] > 0
        rest = sk & ~core
        if rest.any() and inner.any():
            dist = grid_distance(inner, metric)
            collar_gap.append(int(dist[rest].min()))
        else:
            collar_gap.append(None)
        skeleton_identity &= bool(np.array_equal(sk & ~cg.skeletons[a - 1], inner))
        parts = [~sk, inner, core & ~inner, sk & ~core]
        total = np.sum(parts, axis=0)
        partition_exact &= bool(np.all(total == 1))

    core_sep = [_min_label_separation(cg.core_labels[a], 2 * k + 1, metric)
                for a in range(D + 1)]

    return CoarseGrainingReport(
        disjoint=bool(disjoint), sizes_ordered=bool(sizes_ordered), max_cell_size=max_size,
        tight_size_bounds=tuple(tight), zero_cells_in_box=bool(in_box),
        zero_cell_separation=sep0, covers=covers, max_multiplicity=int(mult.max()),
        collar_gap=tuple(collar_gap), core_separation=tuple(core_sep),
        partition_exact=partition_exact, skeleton_identity=skeleton_identity,
        params=(D, cg.base.L, k, c, ell),
    )


def valid_parameter_grid(dims: Iterable[int] = (1, 2, 3), max_side: int = 45,
                         kc: Iterable[tuple[int, int]] = ((1, 1), (1, 2), (2, 1), (2, 2))):
    """All (D, L, k, c, ell) with odd ell passing the gate and 2L+1 <= max_side."""
    for D, (k, c) in itertools.product(dims, kc):
        for side in range(1, max_side + 1, 2):
            for ell in range(2 * D * (k + c) + 1, side + 1):
                if ell % 2 == 1:
                    yield D, (side - 1) // 2, k, c, ell
