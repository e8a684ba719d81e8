"""Discrete singular integrals and maximal operators on the cell lattice.

All operators use cell-centre quadrature: T(f chi_E)(x) is the sum over
source cells y in E, y != x, of K(x_c, y_c) f_y h^n. The diagonal cell is
dropped (principal-value convention).

Admissible cube families for M, M_T and M_{T,Q0}:

* ``"shifted"``  - lattice hulls of the cubes of the 3^n shifted grids (default)
* ``"dyadic"``   - the standard dyadic grid, or D(Q0) when a scope is given
* ``"exhaustive"`` - every lattice cube (small resolutions only)

Every family also holds the sub-cell cube at x, whose tripling stays inside
the cell of x; its truncation therefore removes nothing but the diagonal.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import ConvergenceError, ScopeError
from ..function import GridFunction
from ..grid import Cube, dilate, shifted_grids
from .kernels import KernelSpec

FAMILIES = ("shifted", "dyadic", "exhaustive")
_CHUNK = 1 << 22  # kernel entries evaluated per block


def centres(cells: np.ndarray, level: int) -> np.ndarray:
    return (np.asarray(cells, dtype=float) + 0.5) * 2.0**-level


def kernel_block(T: KernelSpec, targets: np.ndarray, sources: np.ndarray, level: int) -> np.ndarray:
    """Matrix K(x_c, y_c) h^n for target rows and source columns, zero on the diagonal."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1, T.n)
    sources = np.asarray(sources, dtype=np.int64).reshape(-1, T.n)
    out = np.zeros((len(targets), len(sources)))
    if T.is_zero or len(targets) == 0 or len(sources) == 0:
        return out
    hn = 2.0 ** (-level * T.n)
    ys = centres(sources, level)[None, :, :]
    step = max(1, _CHUNK // max(len(sources), 1))
    for a in range(0, len(targets), step):
        tc = targets[a:a + step]
        xs = centres(tc, level)[:, None, :]
        diag = np.all(tc[:, None, :] == sources[None, :, :], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = T.evaluate(xs, ys)
        k = np.where(diag, 0.0, k)
        out[a:a + step] = k * hn
    return out


def _as_cells(x, n: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.int64)
    single = arr.ndim == 0 or (arr.ndim == 1 and n > 1 and arr.shape[0] == n)
    return arr.reshape(-1, n), single


def _region_mask(f: GridFunction, region) -> np.ndarray:
    if region is None:
        return np.ones(f.values.shape, dtype=bool)
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return region.reshape(f.values.shape)
    if isinstance(region, Cube):
        region = [region]
    return f.mask(list(region))


def _sources(f: GridFunction, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    m = f.values != 0
    if mask is not None:
        m &= mask
    idx = np.argwhere(m)
    return idx + np.asarray(f.window.corner), f.values[m]


def apply_truncated(T: KernelSpec, f: GridFunction, region=None, x=None):
    """Discrete T(f chi_E)(x). ``region`` is None (whole window), a Cube, cubes or a window mask.

    ``x`` defaults to every cell of the window; a single cell returns a float.
    """
    cells, single = (f.cells(), False) if x is None else _as_cells(x, f.n)
    src, vals = _sources(f, _region_mask(f, region))
    out = kernel_block(T, cells, src, f.level) @ vals if len(vals) else np.zeros(len(cells))
    return float(out[0]) if single else out


# -- box sums ---------------------------------------------------------------

class _BoxSums:
    """Summed-area table of |f| (or f**p) for O(1) integrals over lattice boxes."""

    def __init__(self, f: GridFunction, power: float = 1.0):
        v = np.abs(f.values) ** power if power != 1.0 else np.abs(f.values)
        s = v
        for ax in range(f.n):
            s = np.cumsum(s, axis=ax)
        self.table = np.pad(s, [(1, 0)] * f.n)
        self.lo = np.asarray(f.window.corner, dtype=np.int64)
        self.side = f.window.side
        self.n = f.n
        self.cell = f.cell_measure

    def integral(self, lo: np.ndarray, side: np.ndarray) -> np.ndarray:
        lo = np.asarray(lo, dtype=np.int64).reshape(-1, self.n)
        side = np.asarray(side, dtype=np.int64).reshape(-1, 1)
        a = np.clip(lo - self.lo, 0, self.side)
        b = np.clip(lo + side - self.lo, 0, self.side)
        total = np.zeros(len(lo))
        for corner in itertools.product((0, 1), repeat=self.n):
            idx = tuple(np.where(c, b[:, i], a[:, i]) for i, c in enumerate(corner))
            sign = (-1) ** (self.n - sum(corner))
            total += sign * self.table[idx]
        return total * self.cell


# -- admissible cubes -------------------------------------------------------

def _scale_cap(points_lo: np.ndarray, points_hi: np.ndarray) -> int:
    span = int(np.max(points_hi - points_lo))
    return max(0, int(np.ceil(np.log2(max(span, 1)))) + 2)


def _family_cubes(cells: np.ndarray, level: int, family: str, cap: int,
                  scope: Cube | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per (grid, scale): lattice-hull corners and sides of the cube holding each cell.

    Returns a list of (corners (m, n), sides (m,)) aligned with ``cells``; a side
    of 0 marks "no admissible cube at this scale".
    """
    n = cells.shape[1]
    out = []
    if scope is not None and family == "dyadic":
        s = scope.side
        lo = np.asarray(scope.corner, dtype=np.int64)
        while True:
            corner = lo + ((cells - lo) // s) * s
            out.append((corner, np.full(len(cells), s, dtype=np.int64)))
            if s % 2 or s == 1:
                break
            s //= 2
        return out
    grids = shifted_grids(n) if family == "shifted" else shifted_grids(n)[:1]
    for g in grids:
        for j in range(cap + 1):
            ct = g.lattice_cubes_containing(cells, j, level)
            step = 3 * 2**j
            lo = np.floor_divide(ct, 3)
            hi = -np.floor_divide(-(ct + step), 3)
            side = (hi - lo).max(axis=1)
            if scope is not None:
                slo = np.asarray(scope.corner, dtype=np.int64)
                inside = np.all((lo >= slo) & (lo + side[:, None] <= slo + scope.side), axis=1)
                side = np.where(inside, side, 0)
                if not inside.any() and 2**j > scope.side:
                    break
            out.append((lo, side))
    return out


# -- Hardy-Littlewood -------------------------------------------------------

def hardy_littlewood(f: GridFunction, x=None, family: str = "shifted"):
    """Discrete M f(x): sup over admissible lattice cubes Q containing x of avg(|f|, Q)."""
    cells, single = (f.cells(), False) if x is None else _as_cells(x, f.n)
    box = _BoxSums(f)
    supp = f.support_box()
    if supp is None:
        out = np.zeros(len(cells))
        return float(out[0]) if single else out
    slo = np.asarray(supp.corner)
    shi = slo + supp.side
    if family == "exhaustive":
        out = np.zeros(len(cells))
        for i, c in enumerate(cells):
            if f.n == 1:
                xi = int(c[0])
                a = np.arange(min(xi, slo[0]), xi + 1)
                b = np.arange(xi + 1, max(xi + 1, shi[0]) + 1)
                A, B = np.meshgrid(a, b, indexing="ij")
                vals = box.integral(A.reshape(-1, 1), (B - A).ravel()) / ((B - A).ravel() * f.h)
                out[i] = vals.max()
            else:
                out[i] = _exhaustive_point_nd(box, c, slo, shi, f)
        return float(out[0]) if single else out
    allc = np.vstack([cells, slo[None], (shi - 1)[None]])
    cap = _scale_cap(allc.min(axis=0), allc.max(axis=0) + 1)
    out = np.zeros(len(cells))
    for lo, side in _family_cubes(cells, f.level, family, cap):
        vals = box.integral(lo, side) / (side.astype(float) * f.h) ** f.n
        out = np.maximum(out, vals)
    return float(out[0]) if single else out


def _exhaustive_point_nd(box: _BoxSums, c, slo, shi, f) -> float:
    best = 0.0
    lo_b = np.minimum(c, slo)
    hi_b = np.maximum(c + 1, shi)
    smax = int((hi_b - lo_b).max())
    for s in range(1, smax + 1):
        ranges = [np.arange(max(ci - s + 1, lb - s), ci + 1) for ci, lb in zip(c, lo_b)]
        corners = np.stack([g.ravel() for g in np.meshgrid(*ranges, indexing="ij")], axis=1)
        vals = box.integral(corners, np.full(len(corners), s)) / (s * f.h) ** f.n
        best = max(best, float(vals.max()))
    return best


# -- truncated maximal T* ---------------------------------------------------

def truncated_maximal(T: KernelSpec, f: GridFunction, x=None):
    """Discrete T* f(x): max over the distinct cell-centre radii eps of |sum_{|y-x|>eps} K f h^n|."""
    cells, single = (f.cells(), False) if x is None else _as_cells(x, f.n)
    src, vals = _sources(f)
    out = np.zeros(len(cells))
    if len(vals) == 0 or T.is_zero:
        return float(out[0]) if single else out
    step = max(1, _CHUNK // len(src))
    for a in range(0, len(cells), step):
        tc = cells[a:a + step]
        contrib = kernel_block(T, tc, src, f.level) * vals
        d2 = np.sum((tc[:, None, :] - src[None, :, :]) ** 2, axis=-1)
        order = np.argsort(-d2, axis=1, kind="stable")
        d_sorted = np.take_along_axis(d2, order, axis=1)
        cs = np.cumsum(np.take_along_axis(contrib, order, axis=1), axis=1)
        # a prefix is a valid truncation when the next source is strictly closer
        valid = np.ones_like(d_sorted, dtype=bool)
        valid[:, :-1] = d_sorted[:, 1:] < d_sorted[:, :-1]
        out[a:a + step] = np.max(np.where(valid, np.abs(cs), 0.0), axis=1)
    return float(out[0]) if single else out


# -- grand maximal truncated operator --------------------------------------

class _LineTable:
    """1-D prefix sums S[i, k] = sum_{j<k} K(x_i, y_j) f_j h over a target range and source range."""

    def __init__(self, T: KernelSpec, f: GridFunction, t0: int, t1: int, source_mask: np.ndarray | None = None):
        self.t0, self.t1 = t0, t1
        self.s0 = f.window.corner[0]
        self.ns = f.window.side
        vals = f.values if source_mask is None else np.where(source_mask, f.values, 0.0)
        nz = np.flatnonzero(vals)
        if len(nz):
            self.s0 += int(nz[0])
            vals = vals[nz[0]:nz[-1] + 1]
            self.ns = len(vals)
        else:
            vals = vals[:0]
            self.ns = 0
        rows = np.arange(t0, t1, dtype=np.int64)[:, None]
        cols = np.arange(self.s0, self.s0 + self.ns, dtype=np.int64)[:, None]
        table = kernel_block(T, rows, cols, f.level)
        table *= vals
        np.cumsum(table, axis=1, out=table)
        self.table = np.pad(table, [(0, 0), (1, 0)])
        self.total = self.table[:, -1]

    def interval(self, rows: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """sum over sources in [a, b) for target rows (absolute cell coordinates)."""
        ia = np.clip(a - self.s0, 0, self.ns)
        ib = np.clip(b - self.s0, 0, self.ns)
        r = rows - self.t0
        return self.table[r, ib] - self.table[r, ia]


def _segment_max(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    return np.maximum.reduceat(values, starts) if len(values) else values


def _cube_values_1d(table: _LineTable, lo: np.ndarray, side: np.ndarray) -> np.ndarray:
    """max over xi in [lo, lo+side) of |total(xi) - sum over 3Q|, per cube."""
    lengths = side
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    rows = np.repeat(lo - starts, lengths) + np.arange(int(lengths.sum()))
    qlo = np.repeat(lo, lengths)
    qs = np.repeat(side, lengths)
    inner = table.interval(rows, qlo - qs, qlo + 2 * qs)
    vals = np.abs(table.total[rows - table.t0] - inner)
    return _segment_max(vals, starts)


def _cube_values_generic(T: KernelSpec, f: GridFunction, cubes: Sequence[Cube], base_mask: np.ndarray | None) -> np.ndarray:
    out = np.zeros(len(cubes))
    for i, q in enumerate(cubes):
        m = ~f.mask([dilate(q, 3)])
        if base_mask is not None:
            m &= base_mask
        src, vals = _sources(f, m)
        if len(vals):
            out[i] = np.max(np.abs(kernel_block(T, q.cells(), src, f.level) @ vals))
    return out


def grand_maximal(T: KernelSpec, f: GridFunction, x=None, scope: Cube | None = None,
                  family: str = "shifted", engine: str = "auto"):
    """Discrete M_T f(x), or M_{T,Q0} f(x) when ``scope`` = Q0.

    M_T: max over admissible Q containing x of max_{xi in Q} |T(f chi_{R^n minus 3Q})(xi)|.
    M_{T,Q0}: cubes Q inside Q0 and truncation set 3Q0 minus 3Q.
    ``engine`` selects the 1-D prefix-sum path ("line"), the per-cube direct path
    ("direct"), or picks automatically.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    if x is None:
        cells, single = ((scope.cells(), False) if scope is not None else (f.cells(), False))
    else:
        cells, single = _as_cells(x, f.n)
    if scope is not None and not np.all(scope.contains_cells(cells)):
        raise ScopeError(f"evaluation cells outside the scope cube {scope}")
    out = np.zeros(len(cells))
    supp = f.support_box()
    if T.is_zero or supp is None:
        return float(out[0]) if single else out
    base_mask = f.mask([dilate(scope, 3)]) if scope is not None else None
    if family == "exhaustive":
        if f.n != 1:
            raise NotImplementedError("the exhaustive grand maximal family is 1-D only")
        out = _grand_maximal_exhaustive_1d(T, f, cells, supp, scope, base_mask)
        return float(out[0]) if single else out
    if engine == "auto":
        engine = "line" if f.n == 1 else "direct"

    if engine == "line":
        if f.n != 1 or family == "exhaustive":
            raise ValueError("the line engine handles 1-D shifted/dyadic families")
        layers = _layers(cells, f, supp, scope, family)
        t0, t1 = int(cells.min()), int(cells.max()) + 1
        for lo, side, keep in layers:
            if keep.any():
                t0 = min(t0, int(lo[keep, 0].min()))
                t1 = max(t1, int((lo[keep, 0] + side[keep]).max()))
        table = _LineTable(T, f, t0, t1, base_mask)
        out = np.abs(table.total[cells[:, 0] - t0])
        for lo, side, keep in layers:
            idx = np.flatnonzero(keep)
            if len(idx) == 0:
                continue
            pairs = np.stack([lo[idx, 0], side[idx]], axis=1)
            uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
            vals = _cube_values_1d(table, uniq[:, 0], uniq[:, 1])
            out[idx] = np.maximum(out[idx], vals[inv.ravel()])
        return float(out[0]) if single else out

    cubes_by_cell = _admissible(cells, f, supp, scope, family)
    uniq = sorted({q for qs in cubes_by_cell for q in qs}, key=lambda q: (q.side, q.corner))
    index = {q: i for i, q in enumerate(uniq)}
    cube_vals = _cube_values_generic(T, f, uniq, base_mask)
    src, vals = _sources(f, base_mask)
    sub = np.abs(kernel_block(T, cells, src, f.level) @ vals) if len(vals) else np.zeros(len(cells))
    for i, qs in enumerate(cubes_by_cell):
        best = sub[i]
        for q in qs:
            best = max(best, cube_vals[index[q]])
        out[i] = best
    return float(out[0]) if single else out


def _layers(cells: np.ndarray, f: GridFunction, supp: Cube, scope: Cube | None,
            family: str) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(corners, sides, keep) per grid and scale for the shifted/dyadic families."""
    if scope is not None:
        slo_ = np.asarray(scope.corner)
        layers = _family_cubes(cells, f.level, family, _scale_cap(slo_, slo_ + scope.side), scope)
    else:
        allc = np.vstack([cells, np.asarray(supp.corner)[None], np.asarray(supp.corner)[None] + supp.side - 1])
        layers = _family_cubes(cells, f.level, family, _scale_cap(allc.min(axis=0), allc.max(axis=0) + 1))
    slo = np.asarray(supp.corner)
    shi = slo + supp.side
    out = []
    for lo, side in layers:
        keep = side > 0
        if scope is not None:
            # Q0 itself: empty truncation set
            keep &= side < scope.side
        else:
            # tripled cube containing the whole support contributes nothing
            keep &= ~np.all((lo - side[:, None] <= slo) & (lo + 2 * side[:, None] >= shi), axis=1)
        out.append((lo, side, keep))
    return out


def _admissible(cells: np.ndarray, f: GridFunction, supp: Cube, scope: Cube | None, family: str) -> list[list[Cube]]:
    """Distinct admissible lattice cubes containing each cell (sub-cell cube excluded)."""
    level = f.level
    out: list[set] = [set() for _ in range(len(cells))]
    for lo, side, keep in _layers(cells, f, supp, scope, family):
        for i in np.flatnonzero(keep):
            out[i].add(Cube(tuple(int(v) for v in lo[i]), int(side[i]), level))
    return [sorted(o, key=lambda q: (q.side, q.corner)) for o in out]


def _grand_maximal_exhaustive_1d(T: KernelSpec, f: GridFunction, cells: np.ndarray, supp: Cube,
                                 scope: Cube | None, base_mask: np.ndarray | None) -> np.ndarray:
    """Every lattice interval Q containing x (inside Q0 when scoped), swept one side length at a time."""
    x = cells[:, 0]
    xmin, xmax = int(x.min()), int(x.max())
    s0, s1 = supp.corner[0], supp.corner[0] + supp.side
    if scope is not None:
        q_lo, q_hi = scope.corner[0], scope.corner[0] + scope.side
        sides = range(1, scope.side)
    else:
        span = max(xmax + 1, s1) - min(xmin, s0)
        sides = range(1, 2 * span + 2)
    t0 = xmin - (max(sides) if len(sides) else 0)
    t1 = xmax + (max(sides) if len(sides) else 0) + 1
    if scope is not None:
        t0, t1 = q_lo, q_hi
    table = _LineTable(T, f, t0, t1, base_mask)
    best = np.abs(table.total[x - t0])
    for s in sides:
        a_lo = xmin - s + 1
        a_hi = xmax
        if scope is not None:
            a_lo, a_hi = max(a_lo, q_lo), min(a_hi, q_hi - s)
        if a_hi < a_lo:
            continue
        a = np.arange(a_lo, a_hi + 1, dtype=np.int64)
        rows = a[:, None] + np.arange(s)[None, :]
        inner = table.interval(rows, (a - s)[:, None], (a + 2 * s)[:, None])
        v = np.abs(table.total[rows - t0] - inner).max(axis=1)
        # interval [a, a+s) contains x iff x-s < a <= x
        padded = np.concatenate([np.zeros(s - 1), v, np.zeros(s - 1)])
        windows = np.lib.stride_tricks.sliding_window_view(padded, s).max(axis=1)
        # windows[k] covers a in [a_lo + k - s + 1, a_lo + k]
        k = x - a_lo
        ok = (k >= 0) & (k < len(windows))
        best[ok] = np.maximum(best[ok], windows[k[ok]])
    return best


def local_grand_maximal(T: KernelSpec, f: GridFunction, q0: Cube) -> np.ndarray:
    """M_{T,Q0} f on every cell of Q0 over D(Q0); fast path used by the domination recursion."""
    cells = q0.cells()
    if T.is_zero or f.support_box() is None:
        return np.zeros(len(cells))
    if f.n != 1:
        return grand_maximal(T, f, cells, scope=q0, family="dyadic", engine="direct")
    base = f.mask([dilate(q0, 3)])
    a, s = q0.corner[0], q0.side
    table = _LineTable(T, f, a, a + s, base)
    rows = np.arange(a, a + s, dtype=np.int64)
    total = table.total
    best = np.abs(total)
    p = s
    while True:
        if p < s:  # Q0 itself has an empty truncation set
            qlo = a + ((rows - a) // p) * p
            vals = np.abs(total - table.interval(rows, qlo - p, qlo + 2 * p))
            best = np.maximum(best, np.repeat(vals.reshape(-1, p).max(axis=1), p))
        if p % 2 or p == 1:
            break
        p //= 2
    return best


# -- L2 norm ----------------------------------------------------------------

@dataclass(frozen=True)
class OperatorConstants:
    l2_norm: float
    c_k: float
    dini: float

    @property
    def c_t(self) -> float:
        return self.l2_norm + self.c_k + self.dini


def full_matrix(T: KernelSpec, window: Cube) -> np.ndarray:
    cells = window.cells()
    return kernel_block(T, cells, cells, window.level)


def estimate_l2_norm(T: KernelSpec, window: Cube, tol: float = 1e-4, max_iter: int = 20000, seed: int = 0) -> float:
    """Largest singular value of the full-truncation matrix by power iteration on A^t A.

    The estimates increase monotonically; the remaining error is extrapolated
    from the ratio of successive increments and the loop stops once that
    geometric-tail bound drops below tol relative.
    """
    if T.is_zero:
        return 0.0
    A = full_matrix(T, window)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=A.shape[1])
    v /= np.linalg.norm(v)
    est, prev_step = 0.0, None
    for _ in range(max_iter):
        w = A @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = A.T @ w
        v /= np.linalg.norm(v)
        step = abs(new - est)
        if prev_step:
            rho = step / prev_step
            if rho < 1 and step * rho / (1 - rho) <= 0.25 * tol * new:
                return new
        if step <= 1e-15 * new:
            return new
        est, prev_step = new, step
    raise ConvergenceError(f"power iteration did not reach rtol {tol} in {max_iter} steps")


@lru_cache(maxsize=32)
def _constants_cached(T: KernelSpec, window: Cube) -> OperatorConstants:
    l2 = estimate_l2_norm(T, window)
    return OperatorConstants(l2, 0.0 if T.is_zero else T.size_constant, 0.0 if T.is_zero else T.dini())


def operator_constants(T: KernelSpec, window: Cube) -> OperatorConstants:
    """C_T = ||T||_{L2->L2} + C_K + ||omega||_Dini, norm estimated on ``window``."""
    return _constants_cached(T, window)


# -- pointwise comparison of M_T with M and T* -------------------------------

@dataclass
class MaximalComparison:
    cells: np.ndarray
    m_t: np.ndarray
    m: np.ndarray
    t_star: np.ndarray
    residual: np.ndarray  # (M_T - T*)_+ / ((||omega||_Dini + C_K) M), 0 where both vanish

    @property
    def kappa(self) -> float:
        return float(self.residual.max()) if self.residual.size else 0.0


def compare_maximal(T: KernelSpec, f: GridFunction, cells: np.ndarray, family: str = "shifted") -> MaximalComparison:
    """M_T f, M f and T* f on the given cells, with the normalised excess of M_T over T*."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, f.n)
    if T.is_zero:
        z = np.zeros(len(cells))
        return MaximalComparison(cells, z, hardy_littlewood(f, cells, family), z, z.copy())
    mt = grand_maximal(T, f, cells, family=family)
    m = hardy_littlewood(f, cells, family)
    ts = truncated_maximal(T, f, cells)
    num = np.maximum(mt - ts, 0.0)
    den = (T.dini() + T.size_constant) * m
    with np.errstate(divide="ignore", invalid="ignore"):
        res = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
    return MaximalComparison(cells, mt, m, ts, res)
