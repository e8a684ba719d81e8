"""Sparse families with explicit witness sets, the sparse averaging operators
A_{r,S}, exact sparseness checks and the reduction to the 3^n shifted grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import LevelMismatchError, NegativityError
from .function import GridFunction
from .grid import Cube, as_cells, best_enclosing, decode_runs, encode_runs, shifted_grids


@dataclass(frozen=True, eq=False)
class SparseEntry:
    cube: Cube
    witness: np.ndarray  # (k, n) int64 lattice cells, sorted and unique

    def __post_init__(self):
        w = as_cells(self.witness, self.cube.n)
        w.setflags(write=False)
        object.__setattr__(self, "witness", w)

    def ratio(self) -> Fraction:
        """|E_Q| / |Q| as an exact fraction."""
        cell = Fraction(1, 2**self.cube.level) ** self.cube.n
        return len(self.witness) * cell / self.cube.measure()


@dataclass(frozen=True, eq=False)
class SparseFamily:
    entries: tuple[SparseEntry, ...]
    eta: Fraction
    grid_tag: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "eta", Fraction(self.eta))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def cubes(self) -> list[Cube]:
        return [e.cube for e in self.entries]

    @classmethod
    def from_pairs(cls, pairs, eta, grid_tag=None) -> "SparseFamily":
        return cls(tuple(SparseEntry(q, w) for q, w in pairs), Fraction(eta), grid_tag)

    def same_as(self, other: "SparseFamily") -> bool:
        if self.eta != other.eta or self.grid_tag != other.grid_tag or len(self) != len(other):
            return False
        return all(a.cube == b.cube and np.array_equal(a.witness, b.witness)
                   for a, b in zip(self.entries, other.entries))


@dataclass
class SparseReport:
    ok: bool
    worst_ratio: Fraction | None
    violating_cubes: list[tuple[int, Cube, str]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def verify_sparse(S: SparseFamily) -> SparseReport:
    """Exact check of containment, pairwise disjointness and |E_Q| >= eta |Q|."""
    bad: list[tuple[int, Cube, str]] = []
    worst: Fraction | None = None
    owners = []
    for i, e in enumerate(S.entries):
        w = e.witness
        if len(w) and not e.cube.contains_cells(w).all():
            bad.append((i, e.cube, "witness not contained in cube"))
        ratio = e.ratio()
        worst = ratio if worst is None else min(worst, ratio)
        if ratio < S.eta:
            bad.append((i, e.cube, f"|E_Q|/|Q| = {ratio} < eta = {S.eta}"))
        owners.append(np.full(len(w), i, dtype=np.int64))
    if S.entries:
        allc = np.concatenate([e.witness for e in S.entries])
        own = np.concatenate(owners)
        if len(allc):
            _, inv, counts = np.unique(allc, axis=0, return_inverse=True, return_counts=True)
            shared = counts[inv.ravel()] > 1
            for i in sorted(set(own[shared].tolist())):
                bad.append((i, S.entries[i].cube, "witness overlaps another witness"))
    bad.sort(key=lambda t: t[0])
    return SparseReport(not bad, worst, bad)


def _cell_range(q: Cube, axis: int) -> tuple[int, int]:
    """Half-open range of lattice cells whose centres lie in q along one axis."""
    lo = q.corner[axis]
    if not q.third:
        return lo, lo + q.side
    hi = lo + q.side
    # centre 3c + 3/2 in thirds units lies in [lo, hi)  <=>  2lo <= 6c + 3 < 2hi
    return -((3 - 2 * lo) // 6), -((3 - 2 * hi) // 6)


def apply_sparse(S: SparseFamily, f: GridFunction, r: float = 1.0, window: Cube | None = None) -> GridFunction:
    """Sum over Q in S of the r-average of f over Q times the indicator of Q.

    Evaluated on ``window`` (default: f's window); f is zero outside its own
    window. Cubes from the one-third grids cover the cells whose centres they contain.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if np.any(f.values < 0):
        raise NegativityError("apply_sparse needs f >= 0; pass |f|")
    window = f.window if window is None else window
    if window.level != f.level:
        raise LevelMismatchError("window and function levels differ")
    n = f.n
    out = np.zeros((window.side,) * n)
    for e in S.entries:
        q = e.cube
        if q.level != f.level:
            raise LevelMismatchError(f"{q} is not at level {f.level}")
        val = f.integral(q, power=r) / float(q.measure())
        if val == 0.0:
            continue
        if r != 1.0:
            val = val ** (1.0 / r)
        sl = []
        for ax in range(n):
            a, b = _cell_range(q, ax)
            a, b = max(a - window.corner[ax], 0), min(b - window.corner[ax], window.side)
            if b <= a:
                break
            sl.append(slice(a, b))
        else:
            out[tuple(sl)] += val
    return GridFunction(window, out)


# -- reduction to the shifted grids -------------------------------------------

@dataclass
class GridDecomposition:
    families: list[SparseFamily]
    constant: float  # max over entries of (|P|/|Q|)^(1/r)
    assignment: list[tuple[int, Cube]]  # per source entry: (grid id, enlarged cube)
    n: int
    r: float

    @property
    def target(self) -> float:
        return 6.0 ** (self.n / self.r)


def three_grid_decompose(S: SparseFamily, r: float = 1.0, n: int | None = None) -> GridDecomposition:
    """Replace each cube by its smallest enclosing cube in the first shifted grid
    that offers one of side at most 6 times larger.

    The witness of Q is kept for the enlarged cube; cubes landing in the same
    grid keep separate entries, so witnesses stay pairwise disjoint and each
    new family is (eta / 6^n)-sparse.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if n is None:
        n = S.entries[0].cube.n if S.entries else 1
    grids = shifted_grids(n)
    buckets: list[list[SparseEntry]] = [[] for _ in grids]
    assignment = []
    worst = Fraction(1) if S.entries else Fraction(0)
    for e in S.entries:
        g, p = best_enclosing(e.cube, 6, grids)
        buckets[g.ident].append(SparseEntry(p, e.witness))
        assignment.append((g.ident, p))
        worst = max(worst, p.measure() / e.cube.measure())
    eta = S.eta / 6**n
    fams = [SparseFamily(tuple(b), eta, g.ident) for g, b in zip(grids, buckets)]
    return GridDecomposition(fams, float(worst) ** (1.0 / r), assignment, n, r)


def decomposition_excess(S: SparseFamily, dec: GridDecomposition, f: GridFunction, r: float = 1.0,
                         window: Cube | None = None) -> float:
    """max over cells of A_{r,S} f - c * sum_j A_{r,S_j} f (<= 0 when the bound holds)."""
    lhs = apply_sparse(S, f, r, window).values
    rhs = sum((apply_sparse(s, f, r, window).values for s in dec.families), np.zeros_like(lhs))
    return float(np.max(lhs - dec.constant * rhs)) if lhs.size else 0.0


# -- text format --------------------------------------------------------------

_HEADER = "sparsefamily v1"


def family_to_text(S: SparseFamily, n: int | None = None, level: int | None = None) -> str:
    if S.entries:
        n = S.entries[0].cube.n
        level = S.entries[0].cube.level
    n = 1 if n is None else n
    level = 0 if level is None else level
    lines = [_HEADER, f"n {n}", f"level {level}", f"eta {S.eta}",
             f"grid {'-' if S.grid_tag is None else S.grid_tag}", f"entries {len(S.entries)}"]
    for e in S.entries:
        q = e.cube
        lines.append(f"{','.join(map(str, q.corner))} {q.side} {q.third} {encode_runs(e.witness)}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def family_from_text(text: str) -> SparseFamily:
    lines = text.splitlines()
    if not lines or lines[0] != _HEADER:
        raise ValueError("not a sparsefamily v1 block")
    try:
        head = dict(line.split(" ", 1) for line in lines[1:6])
        n = int(head["n"])
        level = int(head["level"])
        eta = Fraction(head["eta"])
        grid = None if head["grid"] == "-" else int(head["grid"])
        count = int(head["entries"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad sparsefamily header: {exc}") from exc
    body = lines[6:6 + count]
    if len(body) != count or len(lines) < 7 + count or lines[6 + count] != "end":
        raise ValueError("sparsefamily block is truncated")
    entries = []
    for line in body:
        corner, side, third, runs = line.split(" ")
        q = Cube(tuple(int(c) for c in corner.split(",")), int(side), level, int(third))
        if q.n != n:
            raise ValueError(f"entry {line!r} has the wrong dimension")
        entries.append(SparseEntry(q, decode_runs(runs, n)))
    return SparseFamily(tuple(entries), eta, grid)


def random_family(window: Cube, count: int, seed: int, eta: Fraction = Fraction(1, 4),
                  max_side: int | None = None) -> SparseFamily:
    """Random family of lattice cubes inside ``window`` with disjoint witnesses.

    Cubes are drawn one at a time; each keeps the still-free cells of the cube as
    witness candidates and claims ceil(eta * |Q|) of them. Draws that cannot meet
    the quota are discarded.
    """
    rng = np.random.default_rng(seed)
    n = window.n
    free = np.ones((window.side,) * n, dtype=bool)
    max_side = window.side if max_side is None else max_side
    entries = []
    tries = 0
    while len(entries) < count and tries < 50 * count:
        tries += 1
        side = int(rng.integers(1, max_side + 1))
        lo = rng.integers(0, window.side - side + 1, size=n)
        sl = tuple(slice(int(a), int(a) + side) for a in lo)
        local = np.argwhere(free[sl])
        need = -(-eta.numerator * side**n // eta.denominator)
        if len(local) < need:
            continue
        pick = local[np.sort(rng.choice(len(local), size=need, replace=False))] + lo
        free[tuple(pick.T)] = False
        q = Cube(tuple(int(a) + c for a, c in zip(lo, window.corner)), side, window.level)
        entries.append(SparseEntry(q, pick + np.asarray(window.corner)))
    return SparseFamily(tuple(entries), eta)


__all__ = [
    "SparseEntry", "SparseFamily", "SparseReport", "verify_sparse", "apply_sparse",
    "GridDecomposition", "three_grid_decompose", "decomposition_excess",
    "family_to_text", "family_from_text", "random_family",
]
