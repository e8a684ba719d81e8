"""Exact lattice geometry: half-open cubes, dyadic children, dilations,
the 3^n shifted dyadic grids and the ring partition around a cube.

Every coordinate is an integer. A cube at ``level`` L with ``third == 0``
has corner and side measured in units of 2**-L; with ``third == 1`` the unit
is 2**-L / 3, which is what the one-third shifted grids need.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import LevelMismatchError, MisalignmentError, ResolutionFloorError, ScaleRangeError

MAX_LEVEL = 40
# grid scales are 2**j lattice units, 0 <= j <= MAX_SCALE
MAX_SCALE = 48
DEFAULT_LEVEL = {1: 10, 2: 6}


@dataclass(frozen=True)
class Cube:
    corner: tuple[int, ...]
    side: int
    level: int = DEFAULT_LEVEL[1]
    third: int = 0

    def __post_init__(self):
        corner = tuple(int(c) for c in np.atleast_1d(self.corner))
        object.__setattr__(self, "corner", corner)
        if int(self.side) != self.side or self.side < 1:
            raise ValueError(f"cube side must be a positive integer, got {self.side!r}")
        object.__setattr__(self, "side", int(self.side))
        if self.third not in (0, 1):
            raise ValueError("third must be 0 or 1")
        if not 0 <= self.level <= MAX_LEVEL:
            raise ValueError(f"level {self.level} outside [0, {MAX_LEVEL}]")

    @classmethod
    def from_real(cls, lo: Sequence[float] | float, side: float, level: int) -> "Cube":
        """Build a lattice cube from real coordinates that are exact multiples of 2**-level."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        scale = 2.0**level
        corner = lo * scale
        s = side * scale
        if np.any(corner != np.round(corner)) or s != round(s):
            raise MisalignmentError(f"[{lo}, +{side}) is not aligned with the 2^-{level} lattice")
        return cls(tuple(int(c) for c in corner), int(round(s)), level)

    @property
    def n(self) -> int:
        return len(self.corner)

    @property
    def hi(self) -> tuple[int, ...]:
        return tuple(c + self.side for c in self.corner)

    @property
    def unit(self) -> Fraction:
        return Fraction(1, 2**self.level * 3**self.third)

    def measure(self) -> Fraction:
        return (self.side * self.unit) ** self.n

    def real_lo(self) -> np.ndarray:
        return np.array([float(c * self.unit) for c in self.corner])

    def real_side(self) -> float:
        return float(self.side * self.unit)

    def center(self) -> tuple[Fraction, ...]:
        return tuple((c + Fraction(self.side, 2)) * self.unit for c in self.corner)

    @property
    def is_lattice(self) -> bool:
        return self.third == 0

    def in_thirds(self) -> "Cube":
        if self.third:
            return self
        return Cube(tuple(3 * c for c in self.corner), 3 * self.side, self.level, 1)

    def normalized(self) -> "Cube":
        if self.third and self.side % 3 == 0 and all(c % 3 == 0 for c in self.corner):
            return Cube(tuple(c // 3 for c in self.corner), self.side // 3, self.level, 0)
        return self

    def at_level(self, level: int) -> "Cube":
        """Re-express on a finer lattice (same set)."""
        if level < self.level:
            raise ValueError("can only refine")
        k = 2 ** (level - self.level)
        return Cube(tuple(c * k for c in self.corner), self.side * k, level, self.third)

    def _common(self, other: "Cube") -> tuple["Cube", "Cube"]:
        if self.level != other.level:
            raise LevelMismatchError(f"levels {self.level} and {other.level} differ")
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        if self.third == other.third:
            return self, other
        return self.in_thirds(), other.in_thirds()

    def contains(self, other: "Cube") -> bool:
        a, b = self._common(other)
        return all(ac <= bc and bc + b.side <= ac + a.side for ac, bc in zip(a.corner, b.corner))

    def intersects(self, other: "Cube") -> bool:
        a, b = self._common(other)
        return all(ac < bc + b.side and bc < ac + a.side for ac, bc in zip(a.corner, b.corner))

    def contains_cells(self, cells: np.ndarray) -> np.ndarray:
        """Mask of lattice cells (rows of integer corners) lying inside the cube."""
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.n)
        k = 3 if self.third else 1
        lo = np.asarray(self.corner, dtype=np.int64)
        return np.all((k * cells >= lo) & (k * cells + k <= lo + self.side), axis=1)

    def cell_count(self) -> int:
        if self.third:
            raise MisalignmentError("cube is not lattice-aligned")
        return self.side**self.n

    def cells(self) -> np.ndarray:
        """Lattice cells of the cube as an (side**n, n) integer array, C order."""
        if self.third:
            raise MisalignmentError("cube is not lattice-aligned")
        axes = [np.arange(c, c + self.side, dtype=np.int64) for c in self.corner]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def lattice_hull(self) -> "Cube":
        """Smallest lattice-aligned cube containing this one (padded on the high side)."""
        if not self.third:
            return self
        lo = [c // 3 for c in self.corner]
        hi = [-((-(c + self.side)) // 3) for c in self.corner]
        side = max(h - l for l, h in zip(lo, hi))
        return Cube(tuple(lo), side, self.level, 0)

    def __str__(self) -> str:
        u = "/3" if self.third else ""
        if self.n == 1:
            return f"[{self.corner[0]}, {self.corner[0] + self.side}){u}@L{self.level}"
        return f"{self.corner}+{self.side}{u}@L{self.level}"


def cube(lo: int | Sequence[int], side: int, level: int = DEFAULT_LEVEL[1]) -> Cube:
    """Convenience constructor in lattice units."""
    if isinstance(lo, (int, np.integer)):
        lo = (int(lo),)
    return Cube(tuple(lo), side, level)


def children(q: Cube) -> list[Cube]:
    """The 2^n congruent half-side subcubes, in lexicographic corner order.

    Odd-side cubes are first re-expressed one level finer.
    """
    if q.side % 2:
        if q.level >= MAX_LEVEL:
            raise ResolutionFloorError(f"{q} has odd side at the maximum level {MAX_LEVEL}")
        q = q.at_level(q.level + 1)
    half = q.side // 2
    out = []
    for offs in itertools.product((0, half), repeat=q.n):
        out.append(Cube(tuple(c + o for c, o in zip(q.corner, offs)), half, q.level, q.third))
    return out


def dilate(q: Cube, factor: int = 3) -> Cube:
    """Concentric cube with ``factor`` times the side; factor must be odd."""
    if factor < 1 or factor % 2 == 0:
        raise ValueError(f"dilation factor must be an odd positive integer, got {factor}")
    shift = (factor - 1) // 2 * q.side
    return Cube(tuple(c - shift for c in q.corner), q.side * factor, q.level, q.third)


def dyadic_descendants(q0: Cube, min_side: int = 1) -> Iterable[Cube]:
    """All cubes of D(q0) down to side ``min_side`` without changing level (breadth first)."""
    layer = [q0]
    while layer:
        yield from layer
        if layer[0].side % 2 or layer[0].side // 2 < min_side:
            return
        layer = [c for p in layer for c in children(p)]


@dataclass(frozen=True)
class DyadicGrid:
    """One of the 3^n one-third shifted dyadic grids.

    Its cubes at real scale 2**-k are 2**-k * ([0,1)^n + m + (-1)^k t/3), m in Z^n.
    """

    ident: int
    shifts: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.shifts)

    @property
    def shift(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(t, 3) for t in self.shifts)

    def _offsets(self, j: int, level: int) -> list[int]:
        sign = 1 if (level - j) % 2 == 0 else -1
        return [sign * t * 2**j for t in self.shifts]

    def cube_at(self, point_thirds: Sequence[int], j: int, level: int) -> Cube:
        """Grid cube of side 2**j lattice units containing a point given in thirds units."""
        if not 0 <= j <= MAX_SCALE:
            raise ScaleRangeError(f"scale 2^{j} outside supported range")
        step = 3 * 2**j
        corner = []
        for p, off in zip(point_thirds, self._offsets(j, level)):
            m = (p - off) // step
            corner.append(m * step + off)
        return Cube(tuple(corner), step, level, 1).normalized()

    def cube_containing(self, q: Cube, j: int) -> Cube | None:
        cand = self.cube_at(q.in_thirds().corner, j, q.level)
        return cand if cand.contains(q) else None

    def enclosing(self, q: Cube, max_ratio: int = 6) -> Cube | None:
        """Smallest cube of this grid containing q with side <= max_ratio * side(q)."""
        qt = q.in_thirds()
        lattice_side = Fraction(qt.side, 3)
        j = max(0, int(np.ceil(np.log2(float(lattice_side)))) - 1)
        while 2**j < lattice_side:
            j += 1
        while 2**j <= max_ratio * lattice_side:
            if j > MAX_SCALE:
                raise ScaleRangeError(f"{q} exceeds the supported scale range")
            c = self.cube_containing(q, j)
            if c is not None:
                return c
            j += 1
        return None

    def lattice_cubes_containing(self, cells: np.ndarray, j: int, level: int) -> np.ndarray:
        """Vectorised: corners (thirds units) of the scale-j cubes containing each cell centre."""
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.n)
        # the centre in thirds units, doubled to stay integral: 6c + 3
        step = 3 * 2**j
        offs = np.asarray(self._offsets(j, level), dtype=np.int64)
        m = np.floor_divide(6 * cells + 3 - 2 * offs, 2 * step)
        return m * step + offs


def shifted_grids(n: int) -> list[DyadicGrid]:
    """The 3^n grids with shifts t/3, t in {0,1,2}^n, identified in product order."""
    if n not in (1, 2):
        raise ValueError("shifted grids are provided for n in {1, 2}")
    return [DyadicGrid(i, tuple(t)) for i, t in enumerate(itertools.product(range(3), repeat=n))]


def best_enclosing(q: Cube, max_ratio: int = 6, grids: Sequence[DyadicGrid] | None = None) -> tuple[DyadicGrid, Cube]:
    """First grid (by identifier) holding a cube Q' >= q with side(Q') <= max_ratio*side(q)."""
    grids = shifted_grids(q.n) if grids is None else grids
    for g in grids:
        c = g.enclosing(q, max_ratio)
        if c is not None:
            return g, c
    raise ScaleRangeError(f"no shifted grid encloses {q} within factor {max_ratio}")


def cover_partition(q0: Cube, rings: int) -> list[Cube]:
    """Q0 followed by, for k = 1..rings, the 3^n - 1 congruent cubes tiling 3^k Q0 minus 3^(k-1) Q0."""
    if rings < 0:
        raise ValueError("rings must be >= 0")
    out = [q0]
    centre = (1,) * q0.n
    for k in range(1, rings + 1):
        big = dilate(q0, 3**k)
        s = q0.side * 3 ** (k - 1)
        for idx in itertools.product(range(3), repeat=q0.n):
            if idx == centre:
                continue
            out.append(Cube(tuple(c + i * s for c, i in zip(big.corner, idx)), s, q0.level, q0.third))
    return out


# -- lattice cell sets ------------------------------------------------------

def as_cells(cells, n: int) -> np.ndarray:
    """Sorted unique (k, n) int64 array of lattice cells."""
    arr = np.asarray(cells, dtype=np.int64).reshape(-1, n)
    if len(arr) == 0:
        return arr
    return np.unique(arr, axis=0)


def cells_disjoint(sets: Sequence[np.ndarray]) -> bool:
    if not sets:
        return True
    allc = np.concatenate([np.asarray(s).reshape(len(s), -1) for s in sets if len(s)] or [np.zeros((0, 1))])
    if len(allc) == 0:
        return True
    return len(np.unique(allc, axis=0)) == len(allc)


def encode_runs(cells: np.ndarray) -> str:
    """Sorted cells as runs along the last axis: 'a:b' in 1-D, 'i,a:b' in 2-D; ';'-separated."""
    cells = np.asarray(cells, dtype=np.int64)
    if cells.size == 0:
        return "-"
    cells = np.unique(cells, axis=0)
    out = []
    start = prev = None
    head = None
    for row in cells:
        h, last = tuple(row[:-1]), int(row[-1])
        if head == h and last == prev + 1:
            prev = last
            continue
        if head is not None:
            out.append(_run(head, start, prev))
        head, start, prev = h, last, last
    out.append(_run(head, start, prev))
    return ";".join(out)


def _run(head: tuple, a: int, b: int) -> str:
    pre = "".join(f"{int(x)}," for x in head)
    return f"{pre}{a}:{b + 1}"


def decode_runs(text: str, n: int) -> np.ndarray:
    text = text.strip()
    if text == "-" or not text:
        return np.zeros((0, n), dtype=np.int64)
    rows = []
    for tok in text.split(";"):
        parts = tok.split(",")
        if len(parts) != n:
            raise ValueError(f"bad run {tok!r} for dimension {n}")
        a, b = (int(v) for v in parts[-1].split(":"))
        head = [int(v) for v in parts[:-1]]
        for x in range(a, b):
            rows.append(head + [x])
    return np.asarray(rows, dtype=np.int64).reshape(-1, n)
