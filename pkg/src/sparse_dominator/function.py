"""Piecewise-constant functions on the cell lattice of a window cube."""

from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import LevelMismatchError, MisalignmentError, NegativityError, NonPositiveWeightError
from .grid import Cube


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Cell values on ``window``; cells outside the window read as 0.

    ``values`` has shape (side,)*n in C order, axis i running along coordinate i.
    """

    window: Cube
    values: np.ndarray

    def __post_init__(self):
        if not self.window.is_lattice:
            raise MisalignmentError("window must be lattice-aligned")
        v = np.array(self.values, dtype=float)
        shape = (self.window.side,) * self.window.n
        if v.size != self.window.side**self.window.n:
            raise ValueError(f"expected {shape} values, got {v.shape}")
        v = v.reshape(shape)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.window.n

    @property
    def level(self) -> int:
        return self.window.level

    @property
    def resolution(self) -> int:
        return self.window.side

    @property
    def h(self) -> float:
        return 2.0**-self.level

    @property
    def cell_measure(self) -> float:
        return self.h**self.n

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.window, values)

    def abs(self) -> "GridFunction":
        return self.with_values(np.abs(self.values))

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_window(self, other)
        return self.with_values(self.values + other.values)

    def __mul__(self, c: float) -> "GridFunction":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def cells(self) -> np.ndarray:
        return self.window.cells()

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def value_at(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.n)
        idx = cells - np.asarray(self.window.corner)
        inside = np.all((idx >= 0) & (idx < self.window.side), axis=1)
        out = np.zeros(len(cells))
        if inside.any():
            out[inside] = self.values[tuple(idx[inside].T)]
        return out

    def support_box(self) -> Cube | None:
        """Smallest lattice cube (padded high) holding every nonzero cell, or None."""
        nz = np.argwhere(self.values != 0)
        if len(nz) == 0:
            return None
        lo = nz.min(axis=0)
        hi = nz.max(axis=0) + 1
        side = int((hi - lo).max())
        return Cube(tuple(int(c) for c in lo + np.asarray(self.window.corner)), side, self.level)

    def _slices(self, q: Cube) -> tuple[tuple[slice, ...], bool]:
        if q.level != self.level:
            raise LevelMismatchError(f"cube level {q.level} != function level {self.level}")
        if not q.is_lattice:
            raise MisalignmentError(f"{q} is not lattice-aligned")
        sl = []
        empty = False
        for c, w in zip(q.corner, self.window.corner):
            a = max(c - w, 0)
            b = min(c + q.side - w, self.window.side)
            if b <= a:
                empty = True
                a = b = 0
            sl.append(slice(a, b))
        return tuple(sl), empty

    @cached_property
    def _refined(self) -> np.ndarray:
        v = self.values
        for ax in range(self.n):
            v = np.repeat(v, 3, axis=ax)
        return v

    def integral(self, q: Cube, power: float = 1.0) -> float:
        """Exact finite sum of (cell value)**power times cell measure over q."""
        if q.third:
            if q.level != self.level:
                raise LevelMismatchError("level mismatch")
            sl = []
            for c, w in zip(q.corner, self.window.corner):
                a = max(c - 3 * w, 0)
                b = min(c + q.side - 3 * w, 3 * self.window.side)
                if b <= a:
                    return 0.0
                sl.append(slice(a, b))
            part = self._refined[tuple(sl)]
            vals = part if power == 1.0 else part**power
            return float(vals.sum()) * self.cell_measure / 3**self.n
        sl, empty = self._slices(q)
        if empty:
            return 0.0
        part = self.values[sl]
        vals = part if power == 1.0 else part**power
        return float(vals.sum()) * self.cell_measure

    def mask(self, cubes: Iterable[Cube]) -> np.ndarray:
        """Boolean window mask of the union of lattice cubes."""
        m = np.zeros(self.values.shape, dtype=bool)
        for q in cubes:
            sl, empty = self._slices(q)
            if not empty:
                m[sl] = True
        return m

    def restricted(self, mask: np.ndarray) -> "GridFunction":
        return self.with_values(np.where(mask, self.values, 0.0))

    def extended(self, window: Cube) -> "GridFunction":
        """Same function re-expressed on a larger lattice window."""
        if window.level != self.level:
            raise LevelMismatchError("level mismatch")
        out = np.zeros((window.side,) * self.n)
        off = np.asarray(self.window.corner) - np.asarray(window.corner)
        sl_dst, sl_src = [], []
        for o in off:
            a, b = max(o, 0), min(o + self.window.side, window.side)
            if b <= a:
                return GridFunction(window, out)
            sl_dst.append(slice(a, b))
            sl_src.append(slice(a - o, b - o))
        out[tuple(sl_dst)] = self.values[tuple(sl_src)]
        return GridFunction(window, out)


def _check_same_window(f: GridFunction, g: GridFunction) -> None:
    if f.window != g.window:
        raise ValueError(f"windows differ: {f.window} vs {g.window}")


def average(f: GridFunction, q: Cube) -> float:
    """(1/|Q|) * integral of f over Q; cells outside the window count as 0."""
    return f.integral(q) / float(q.measure())


def r_average(f: GridFunction, q: Cube, r: float = 1.0) -> float:
    """((1/|Q|) * integral of f**r over Q) ** (1/r) for f >= 0 on Q."""
    if r < 1:
        raise ValueError("r must be >= 1")
    sl, empty = f._slices(q.lattice_hull()) if q.third else f._slices(q)
    if not empty and np.any(f.values[sl] < 0):
        raise NegativityError(f"f takes negative values on {q}")
    if r == 1.0:
        return average(f, q)
    return (f.integral(q, power=r) / float(q.measure())) ** (1.0 / r)


def truncate(f: GridFunction, cubes: Iterable[Cube], mode: str = "keep") -> GridFunction:
    """f times the indicator of the union of cubes (keep) or of its complement in the window (drop)."""
    m = f.mask(cubes)
    if mode == "keep":
        return f.restricted(m)
    if mode == "drop":
        return f.restricted(~m)
    raise ValueError(f"mode must be 'keep' or 'drop', not {mode!r}")


def lp_norm(f: GridFunction, p: float = 2.0, w: GridFunction | None = None) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    a = np.abs(f.values) ** p
    if w is not None:
        _check_same_window(f, w)
        if np.any(w.values <= 0):
            raise NonPositiveWeightError("weight must be strictly positive")
        a = a * w.values
    return float(a.sum() * f.cell_measure) ** (1.0 / p)


# -- named test functions ---------------------------------------------------

def constant(window: Cube, c: float = 1.0) -> GridFunction:
    return GridFunction(window, np.full((window.side,) * window.n, float(c)))


def indicator(window: Cube, q: Cube, height: float = 1.0) -> GridFunction:
    return truncate(constant(window, height), [q], "keep")


def spike(window: Cube, cell: Sequence[int] | int, height: float = 1.0) -> GridFunction:
    v = np.zeros((window.side,) * window.n)
    idx = np.atleast_1d(np.asarray(cell)) - np.asarray(window.corner)
    v[tuple(idx)] = height
    return GridFunction(window, v)


def random_step(window: Cube, seed: int, pieces: int = 16, coarse_level: int | None = None) -> GridFunction:
    """Nonnegative step function with ``pieces`` constant blocks per axis.

    Heights are uniform on [0, 1) from ``numpy.random.default_rng(seed)`` (PCG64).
    Breakpoints sit on the 2**-coarse_level lattice, so the same seed gives the
    same function at every finer resolution.
    """
    rng = np.random.default_rng(seed)
    n = window.n
    coarse = window.level if coarse_level is None else coarse_level
    k = 2 ** (window.level - coarse)
    cells_coarse = window.side // k
    if cells_coarse * k != window.side:
        raise MisalignmentError("window is not aligned with the coarse lattice")
    cuts = [np.sort(rng.choice(np.arange(1, cells_coarse), size=min(pieces - 1, cells_coarse - 1), replace=False))
            for _ in range(n)]
    heights = rng.random((len(cuts[0]) + 1,) * n)
    labels = [np.searchsorted(c, np.arange(cells_coarse), side="right") for c in cuts]
    coarse_vals = heights[np.ix_(*labels)]
    v = coarse_vals
    for ax in range(n):
        v = np.repeat(v, k, axis=ax)
    return GridFunction(window, v)


def bump(window: Cube, centre: Sequence[float] | float | None = None, radius: float | None = None) -> GridFunction:
    """Smooth compactly supported bump exp(-1/(1-|x-c|^2/rho^2)) sampled at cell centres."""
    n = window.n
    lo = window.real_lo()
    side = window.real_side()
    c = lo + side / 2 if centre is None else np.atleast_1d(np.asarray(centre, dtype=float))
    rho = side / 2 if radius is None else radius
    pts = (window.cells() + 0.5) * 2.0**-window.level
    s = np.sum((pts - c) ** 2, axis=1) / rho**2
    v = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1 - s, 1.0)), 0.0)
    return GridFunction(window, v.reshape((window.side,) * n))


# -- text formats -----------------------------------------------------------

def to_csv(f: GridFunction) -> str:
    buf = io.StringIO()
    buf.write("cell_index,value\n")
    for i, v in enumerate(f.flat()):
        buf.write(f"{i},{float(v)!r}\n")
    return buf.getvalue()


def from_csv(text: str, window: Cube) -> GridFunction:
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != "cell_index,value":
        raise ValueError("missing CSV header 'cell_index,value'")
    v = np.zeros(window.side**window.n)
    for line in lines[1:]:
        i, val = line.split(",")
        v[int(i)] = float(val)
    return GridFunction(window, v)


def to_text(f: GridFunction) -> str:
    head = ["gridfunction v1",
            f"window corner={','.join(map(str, f.window.corner))} side={f.window.side} level={f.level}",
            f"resolution {f.resolution}",
            "values"]
    return "\n".join(head + [repr(float(v)) for v in f.flat()]) + "\n"


def from_text(text: str) -> GridFunction:
    lines = text.strip().splitlines()
    if len(lines) < 4 or lines[0] != "gridfunction v1" or lines[3] != "values":
        raise ValueError("not a gridfunction v1 text block")
    fields = dict(tok.split("=") for tok in lines[1].split()[1:])
    window = Cube(tuple(int(c) for c in fields["corner"].split(",")), int(fields["side"]), int(fields["level"]))
    if int(lines[2].split()[1]) != window.side:
        raise ValueError("resolution does not match window side")
    vals = np.array([float(x) for x in lines[4:]])
    return GridFunction(window, vals)
