"""Muckenhoupt weights, weighted norms of sparse operators and the per-cube
testing-quantity chain that bounds them by a power of the A_{p/r} characteristic."""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyWitnessError, MisalignmentError, NonPositiveWeightError, PreconditionError
from .function import GridFunction
from .grid import Cube, dilate, shifted_grids

FAMILIES = ("shifted", "dyadic", "exhaustive")
EXHAUSTIVE_MAX_CELLS = 1 << 13


@dataclass(frozen=True, eq=False)
class WeightProfile:
    """A weight w > 0 with exponents 1 <= r < p; sigma = w^(-1/(p-1)), nu = w^(-r/(p-r))."""

    w: GridFunction
    p: float
    r: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not 1 <= self.r < self.p:
            raise ValueError(f"need 1 <= r < p, got r={self.r}, p={self.p}")
        if np.any(self.w.values <= 0) or not np.all(np.isfinite(self.w.values)):
            raise NonPositiveWeightError("weight must be finite and strictly positive")

    @property
    def window(self) -> Cube:
        return self.w.window

    @property
    def p_dual(self) -> float:
        return self.p / (self.p - 1)

    @property
    def sigma(self) -> GridFunction:
        return self.w.with_values(self.w.values ** (-1.0 / (self.p - 1)))

    @property
    def nu(self) -> GridFunction:
        return self.w.with_values(self.w.values ** (-self.r / (self.p - self.r)))

    def identity_error(self) -> float:
        """max relative deviation of sigma^(p-1) w and nu^((p-r)/r) w from 1."""
        w = self.w.values
        e1 = np.abs(self.sigma.values ** (self.p - 1) * w - 1).max()
        e2 = np.abs(self.nu.values ** ((self.p - self.r) / self.r) * w - 1).max()
        return float(max(e1, e2))


def power_weight(window: Cube, alpha: float, centre: Sequence[float] | float | None = None) -> GridFunction:
    """|x - x_c|^alpha at cell centres; x_c must be a lattice point (default: window centre)."""
    n = window.n
    scale = 2.0**window.level
    if centre is None:
        c = np.array([float(v) for v in window.center()])
    else:
        c = np.atleast_1d(np.asarray(centre, dtype=float))
    if np.any(c * scale != np.round(c * scale)):
        raise MisalignmentError(f"weight centre {c} is not a lattice point at level {window.level}")
    pts = (window.cells() + 0.5) / scale
    d = np.sqrt(np.sum((pts - c) ** 2, axis=1))
    return GridFunction(window, (d**alpha).reshape((window.side,) * n))


# -- box sums over the 3x refined lattice -------------------------------------

class _Boxes:
    """Integrals over boxes given in thirds units, via a summed-area table of the refined values."""

    def __init__(self, f: GridFunction):
        v = f.values
        for ax in range(f.n):
            v = np.repeat(v, 3, axis=ax)
        s = v
        for ax in range(f.n):
            s = np.cumsum(s, axis=ax)
        self.table = np.pad(s, [(1, 0)] * f.n)
        self.origin = np.asarray(f.window.corner, dtype=np.int64) * 3
        self.n = f.n
        self.unit = f.cell_measure / 3**f.n

    def integral(self, lo: np.ndarray, side: np.ndarray) -> np.ndarray:
        lo = np.asarray(lo, dtype=np.int64).reshape(-1, self.n) - self.origin
        side = np.asarray(side, dtype=np.int64).reshape(-1)
        total = np.zeros(len(lo))
        for corner in itertools.product((0, 1), repeat=self.n):
            idx = tuple(lo[:, ax] + corner[ax] * side for ax in range(self.n))
            sign = (-1) ** (self.n - sum(corner))
            total += sign * self.table[idx]
        return total * self.unit


def family_boxes(window: Cube, family: str = "shifted") -> tuple[np.ndarray, np.ndarray]:
    """Corners and sides (thirds units) of the cubes of a family lying inside the window."""
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    n, N = window.n, window.side
    w_lo = np.asarray(window.corner, dtype=np.int64) * 3
    w_hi = w_lo + 3 * N
    los, sides = [], []
    if family == "exhaustive":
        if N**n > EXHAUSTIVE_MAX_CELLS:
            raise ValueError(f"exhaustive family limited to {EXHAUSTIVE_MAX_CELLS} cells")
        for s in range(1, N + 1):
            axes = [np.arange(0, N - s + 1, dtype=np.int64) for _ in range(n)]
            grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
            los.append(3 * grid + w_lo)
            sides.append(np.full(len(grid), 3 * s, dtype=np.int64))
        return np.concatenate(los), np.concatenate(sides)
    grids = shifted_grids(n)[:1] if family == "dyadic" else shifted_grids(n)
    j = 0
    while 2**j <= N:
        step = 3 * 2**j
        for g in grids:
            per_axis = []
            for ax, off in enumerate(g._offsets(j, window.level)):
                first = off + ((w_lo[ax] - off + step - 1) // step) * step
                per_axis.append(np.arange(first, w_hi[ax] - step + 1, step, dtype=np.int64))
            if any(len(a) == 0 for a in per_axis):
                continue
            grid = np.stack([x.ravel() for x in np.meshgrid(*per_axis, indexing="ij")], axis=1)
            los.append(grid)
            sides.append(np.full(len(grid), step, dtype=np.int64))
        j += 1
    if not los:
        return np.zeros((0, n), dtype=np.int64), np.zeros(0, dtype=np.int64)
    lo, side = np.concatenate(los), np.concatenate(sides)
    key = np.concatenate([lo, side[:, None]], axis=1)
    _, keep = np.unique(key, axis=0, return_index=True)
    keep.sort()
    return lo[keep], side[keep]


def _ap_values(w: GridFunction, p: float, lo: np.ndarray, side: np.ndarray) -> np.ndarray:
    if np.any(w.values <= 0):
        raise NonPositiveWeightError("weight must be strictly positive")
    vol = (side.astype(float) / 3 * 2.0**-w.level) ** w.n
    aw = _Boxes(w).integral(lo, side) / vol
    sig = w.with_values(w.values ** (-1.0 / (p - 1)))
    asig = _Boxes(sig).integral(lo, side) / vol
    return aw * asig ** (p - 1)


def ap_characteristic(w: GridFunction, p: float, family: str = "shifted", extra: Sequence[Cube] = ()) -> float:
    """max over the family (plus ``extra`` cubes inside the window) of avg(w) avg(w^(-1/(p-1)))^(p-1)."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    lo, side = family_boxes(w.window, family)
    if extra:
        ex = [q.in_thirds() for q in extra]
        lo = np.concatenate([lo, np.array([q.corner for q in ex], dtype=np.int64).reshape(-1, w.n)])
        side = np.concatenate([side, np.array([q.side for q in ex], dtype=np.int64)])
    if len(side) == 0:
        return 1.0
    return float(np.max(_ap_values(w, p, lo, side)))


def cube_ap_quantity(w: GridFunction, p: float, q: Cube) -> float:
    qt = q.in_thirds()
    return float(_ap_values(w, p, np.array([qt.corner]), np.array([qt.side]))[0])


# -- testing quantity ---------------------------------------------------------

def _mass(g: GridFunction, cells: np.ndarray) -> float:
    return float(g.value_at(cells).sum()) * g.cell_measure


def _cube_mass(g: GridFunction, q: Cube) -> float:
    if not g.window.contains(q):
        raise PreconditionError(f"{q} is not inside the weight window {g.window}")
    return g.integral(q)


def testing_quantity(wp: WeightProfile, q: Cube, witness: np.ndarray) -> float:
    """[w(3Q) / w(E)^(1/p')] [nu(3Q)^(1/r) / nu(E)^(1/p)] |Q|^(-1/r)."""
    witness = np.asarray(witness, dtype=np.int64).reshape(-1, q.n)
    if len(witness) == 0:
        raise EmptyWitnessError(f"empty witness for {q}")
    if not q.contains_cells(witness).all():
        raise PreconditionError("witness is not contained in the cube")
    p, r = wp.p, wp.r
    big = dilate(q, 3)
    nu = wp.nu
    w3, wE = _cube_mass(wp.w, big), _mass(wp.w, witness)
    n3, nE = _cube_mass(nu, big), _mass(nu, witness)
    return (w3 / wE ** (1 / wp.p_dual)) * (n3 ** (1 / r) / nE ** (1 / p)) * float(q.measure()) ** (-1 / r)


# -- the sparse operator as a matrix ------------------------------------------

class _SparseOperator:
    """A_{r,S} on the cells of a window: f -> B^T (D B f^r)^(1/r) with B the cube indicators."""

    def __init__(self, S, window: Cube, r: float = 1.0):
        n, N = window.n, window.side
        rows, cols = [], []
        counts = []
        for i, e in enumerate(S.entries):
            q = e.cube
            if q.third:
                raise MisalignmentError("weighted norms need lattice-aligned cubes")
            if not window.contains(q):
                raise PreconditionError(f"{q} is not inside the window {window}")
            axes = [np.arange(c - w, c - w + q.side) for c, w in zip(q.corner, window.corner)]
            idx = np.ravel_multi_index(np.meshgrid(*axes, indexing="ij"), (N,) * n).ravel()
            rows.append(np.full(len(idx), i))
            cols.append(idx)
            counts.append(len(idx))
        m = len(S.entries)
        size = N**n
        if m:
            self.B = sp.csr_matrix((np.ones(sum(counts)), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(m, size))
        else:
            self.B = sp.csr_matrix((0, size))
        self.inv = 1.0 / np.asarray(counts, dtype=float)
        self.r = r
        self.size = size

    def averages(self, f: np.ndarray) -> np.ndarray:
        a = self.inv * (self.B @ (f if self.r == 1 else f**self.r))
        return a if self.r == 1 else a ** (1 / self.r)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return self.B.T @ self.averages(f)

    def gradient(self, f: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
        """Gradient in f of sum w (A_{r,S} f)^p / p; for r = 1 it is A^t(w (Af)^(p-1))."""
        a = self.averages(f)
        dual = self.B @ (w * (self.B.T @ a) ** (p - 1))
        if self.r == 1:
            return self.B.T @ (self.inv * dual)
        with np.errstate(divide="ignore"):
            scale = np.where(a > 0, a ** (1 - self.r), 0.0)
        return f ** (self.r - 1) * (self.B.T @ (self.inv * scale * dual))


def _lp(f: np.ndarray, w: np.ndarray, p: float) -> float:
    return float(np.sum(np.abs(f) ** p * w)) ** (1 / p)


@dataclass
class NormEstimate:
    value: float
    trial: str
    trials: int
    best: np.ndarray = field(repr=False, default=None)


def _trial_functions(S, wp: WeightProfile, rng: np.random.Generator, count: int):
    win = wp.window
    cells = win.cells()
    w = wp.w.flat()
    sig = wp.sigma.flat()
    yield "constant", np.ones(len(w))
    yield "sigma", sig.copy()
    # the weight's extreme cells: singular or vanishing point of a power weight
    for name, arr in (("argmin w", w), ("argmax w", -w)):
        k = int(np.argmin(arr))
        c = cells[k]
        for rad in (1, 2, 4, 16, 64):
            box = np.all(np.abs(cells - c) < rad, axis=1)
            yield f"sigma near {name} r={rad}", np.where(box, sig, 0.0)
    picks = S.entries if len(S.entries) <= count else [S.entries[i] for i in
                                                      np.sort(rng.choice(len(S.entries), count, replace=False))]
    for e in picks:
        inside = e.cube.contains_cells(cells)
        yield f"chi {e.cube}", inside.astype(float)
        yield f"sigma chi {e.cube}", np.where(inside, sig, 0.0)
    for beta in (-0.9, -0.5, 0.5, 1.0):
        yield f"sigma^{beta}", sig**beta * np.ones(len(w))


def sparse_weighted_norm(S, wp: WeightProfile, trials: int = 32, seed: int = 0,
                         window: Cube | None = None, iterations: int = 300) -> NormEstimate:
    """Lower bound for ||A_{r,S}||_{L^p(w)} by maximising ||A f|| / ||f|| over trial functions.

    Trials: constants, sigma, sigma near the weight's extreme points, indicators
    and sigma-indicators of family cubes, powers of sigma, the r = 1 maximiser
    when r > 1, and random
    multiplicative perturbations of the best candidates. The best trials are
    then refined by the nonlinear power iteration f <- (grad / w)^(1/(p-1)), where grad is
    the gradient of the numerator; for r = 1 this is f <- (A^t(w (Af)^(p-1)) / w)^(1/(p-1)).
    """
    if not S.entries:
        return NormEstimate(0.0, "empty family", 0, None)
    window = wp.window if window is None else window
    if window != wp.window:
        raise PreconditionError("weight must live on the evaluation window")
    rng = np.random.default_rng(seed)
    A = _SparseOperator(S, window, wp.r)
    w = wp.w.flat()
    p = wp.p

    def ratio(f):
        nf = _lp(f, w, p)
        return _lp(A(f), w, p) / nf if nf > 0 else 0.0

    scored = []
    count = 0
    for name, f in _trial_functions(S, wp, rng, trials):
        count += 1
        scored.append((ratio(f), name, f))
    if wp.r > 1:
        # A_{r,S} f >= A_{1,S} f for f >= 0, so the r = 1 maximiser is a good start
        inner = sparse_weighted_norm(S, WeightProfile(wp.w, p, 1.0), trials, seed, window, iterations)
        count += inner.trials
        scored.append((ratio(inner.best), f"r=1 maximiser ({inner.trial})", inner.best))
    scored.sort(key=lambda t: -t[0])
    best_val, best_name, best_f = scored[0]
    # random perturbations of the top candidates
    for val, name, f in scored[:4]:
        for k in range(trials):
            g = f * np.exp(rng.normal(scale=0.5, size=len(f)))
            count += 1
            v = ratio(g)
            if v > best_val:
                best_val, best_name, best_f = v, f"perturbed {name} #{k}", g
    # power iteration from the best few
    for val, name, f in [(best_val, best_name, best_f)] + scored[:3]:
        g = f.copy()
        for it in range(iterations):
            g_new = (A.gradient(g, w, p) / w) ** (1 / (p - 1))
            nrm = _lp(g_new, w, p)
            if nrm == 0:
                break
            g_new /= nrm
            v = ratio(g_new)
            count += 1
            if v > best_val:
                gain = v - best_val
                best_val, best_name, best_f = v, f"iterated {name}", g_new
                if gain <= 1e-13 * v:
                    break
            elif it > 3:
                break
            g = g_new
    return NormEstimate(best_val, best_name, count, best_f)


def bilinear_norm(S, wp: WeightProfile, f: np.ndarray) -> float:
    """sup over the dual element g of sum_Q (avg_Q f^r)^(1/r) int_Q g / (||f||_{L^p(w)} ||g||_{L^p'(sigma)}).

    For a given f the maximising g is w (A_{r,S} f)^(p-1); the form is evaluated
    cube by cube, independently of the operator application used by the norm search.
    """
    A = _SparseOperator(S, wp.window, wp.r)
    w = wp.w.flat()
    sig = wp.sigma.flat()
    p = wp.p
    g = w * A(f) ** (p - 1)
    avgs = A.averages(f)
    form = float(np.sum(avgs * (A.B @ g)))
    ng = float(np.sum(g ** wp.p_dual * sig)) ** (1 / wp.p_dual)
    nf = _lp(f, w, p)
    return form / (nf * ng) if nf > 0 and ng > 0 else 0.0


def exact_weighted_norm(S, wp: WeightProfile) -> float:
    """||A_S||_{L^2(w)} for r = 1, p = 2 as the spectral norm of w^(1/2) A w^(-1/2) (small windows)."""
    if wp.p != 2 or wp.r != 1:
        raise ValueError("exact norm implemented for p = 2, r = 1")
    A = _SparseOperator(S, wp.window, 1.0)
    dense = (A.B.T @ sp.diags(A.inv) @ A.B).toarray()
    s = np.sqrt(wp.w.flat())
    return float(np.linalg.norm(s[:, None] * dense / s[None, :], 2))


# -- appendix diagnostic ------------------------------------------------------

RTOL = 1e-12


@dataclass
class CubeChain:
    cube: Cube
    testing: float
    bound: float
    ratio: float
    checks: dict[str, tuple[float, float]]  # name -> (lhs, rhs), each lhs <= rhs
    holder_slack: Fraction


@dataclass
class AppendixReport:
    ok: bool
    sup_testing: float
    characteristic: float
    constant: float
    exponent: float
    ratio: float
    holder_min_slack: Fraction | None
    failures: list[tuple[Cube, str, float, float]]
    cubes: list[CubeChain]
    note: str = ("the centred weighted maximal step is classical and is not replayed; "
                 "only the per-cube chain is evaluated")


def appendix_diagnostic(S, wp: WeightProfile, characteristic: float | None = None,
                        family: str = "shifted") -> AppendixReport:
    """Evaluate, cube by cube, the chain bounding T_{p,r}(w;Q) by c [w]_{A_{p/r}}^max(1, 1/(p-r)).

    With q = p/r and gamma = max(1/p', r/(p(p-r))) the steps are
      holder:   |Q|^q <= eta^-q |E_Q|^q           (exact)
      holder2:  |E_Q|^q <= w(E_Q) nu(E_Q)^(q-1)
      x_bound:  X = w(3Q)/w(E_Q) (nu(3Q)/nu(E_Q))^(q-1) <= eta^-q w(3Q)/|Q| (nu(3Q)/|Q|)^(q-1)
      ap_step:  w(3Q)/|Q| (nu(3Q)/|Q|)^(q-1) <= 3^(nq) [w]_{A_q}
      identity: T = [w(3Q)/|Q| (nu(3Q)/|Q|)^(q-1)]^(1/p) (w(3Q)/w(E_Q))^(1/p') (nu(3Q)/nu(E_Q))^(1/p)
      gamma:    T <= 3^(n/r) [w]^(1/p) X^gamma
      final:    T <= 3^(n/r) (3^n/eta)^(p gamma/r) [w]^(1/p + gamma)
    [w]_{A_q} is the larger of the family characteristic and the value on every 3Q.
    Floating steps carry a 1e-12 relative slack.
    """
    p, r = wp.p, wp.r
    q_exp = p / r
    eta = S.eta
    n = wp.window.n
    gamma = max(1 / wp.p_dual, r / (p * (p - r)))
    exponent = 1 / p + gamma
    nu = wp.nu
    if characteristic is None:
        characteristic = ap_characteristic(wp.w, q_exp, family)
    dil = [dilate(e.cube, 3) for e in S.entries]
    if dil:
        characteristic = max(characteristic, max(cube_ap_quantity(wp.w, q_exp, b) for b in dil))
    wchar = characteristic
    const = 3 ** (n / r) * (3**n / float(eta)) ** (p * gamma / r)
    bound = const * wchar**exponent
    chains, failures = [], []
    sup_t = 0.0
    min_slack = None
    for e, big in zip(S.entries, dil):
        qc = e.cube
        E = e.witness
        if len(E) == 0:
            raise EmptyWitnessError(f"empty witness for {qc}")
        Q = float(qc.measure())
        cell = Fraction(1, 2**qc.level) ** n
        e_meas_exact = len(E) * cell
        e_meas = float(e_meas_exact)
        w3, wE = _cube_mass(wp.w, big), _mass(wp.w, E)
        n3, nE = _cube_mass(nu, big), _mass(nu, E)
        T = testing_quantity(wp, qc, E)
        X = (w3 / wE) * (n3 / nE) ** (q_exp - 1)
        A = (w3 / Q) * (n3 / Q) ** (q_exp - 1)
        # exact Holder step in the measures: |Q| <= |E_Q| / eta
        slack = e_meas_exact / eta - qc.measure()
        checks = {
            "holder": (Q**q_exp, float(eta) ** -q_exp * e_meas**q_exp),
            "holder2": (e_meas**q_exp, wE * nE ** (q_exp - 1)),
            "x_bound": (X, float(eta) ** -q_exp * A),
            "ap_step": (A, 3 ** (n * q_exp) * wchar),
            "identity": (abs(T - A ** (1 / p) * (w3 / wE) ** (1 / wp.p_dual) * (n3 / nE) ** (1 / p)), RTOL * T),
            "gamma": (T, 3 ** (n / r) * wchar ** (1 / p) * X**gamma),
            "final": (T, bound),
        }
        for name, (lhs, rhs) in checks.items():
            ok = slack >= 0 if name == "holder" else lhs <= rhs * (1 + RTOL)
            if not ok:
                failures.append((qc, name, lhs, rhs))
        chains.append(CubeChain(qc, T, bound, T / bound, checks, slack))
        sup_t = max(sup_t, T)
        min_slack = slack if min_slack is None else min(min_slack, slack)
    ratio = sup_t / bound if chains else 0.0
    return AppendixReport(not failures and ratio <= 1 + RTOL, sup_t, wchar, const, exponent, ratio,
                          min_slack, failures, chains)


# -- sweep --------------------------------------------------------------------

@dataclass
class SweepRow:
    alpha: float
    p: float
    r: float
    ap_char: float
    norm_lb: float
    slope_window: float | None
    diagnostic_ratio: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    slope: float | None
    target: float
    diagnostics_ok: bool

    @property
    def ok(self) -> bool:
        slope_ok = self.slope is None or self.slope <= self.target + 0.15
        return slope_ok and self.diagnostics_ok


def admissible_alpha(p: float, r: float, margin: float = 0.05) -> tuple[float, float]:
    """Open interval of power exponents with |x|^alpha in A_{p/r} on the line, shrunk by ``margin``."""
    return -1 + margin, p / r - 1 - margin


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Least-squares slope of log y against log x; None with fewer than two distinct x."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    if len(lx) < 2 or np.ptp(lx) < 1e-9:
        return None
    return float(np.polyfit(lx, ly, 1)[0])


def weight_sweep(S, window: Cube, alphas: Sequence[float], p: float = 2.0, r: float = 1.0,
                 centre=None, trials: int = 32, seed: int = 0, family: str = "shifted") -> SweepResult:
    """Per power exponent: [w]_{A_{p/r}}, a lower bound of ||A_{r,S}||_{L^p(w)} and the appendix ratio."""
    lo_a, hi_a = admissible_alpha(p, r)
    for a in alphas:
        if not lo_a < a < hi_a:
            raise ValueError(f"alpha={a} outside the admissible interval ({lo_a:g}, {hi_a:g})")
    rows = []
    ok = True
    for a in alphas:
        wp = WeightProfile(power_weight(window, a, centre), p, r)
        char = ap_characteristic(wp.w, p / r, family)
        if char < 1 - 1e-12:
            raise AssertionError(f"A_{p / r} characteristic {char} < 1")
        est = sparse_weighted_norm(S, wp, trials, seed)
        diag = appendix_diagnostic(S, wp, char, family)
        ok &= diag.ok
        rows.append(SweepRow(float(a), p, r, char, est.value, None, diag.ratio))
    order = sorted(range(len(rows)), key=lambda i: rows[i].ap_char)
    for prev, cur in zip(order, order[1:]):
        s = fit_slope([rows[prev].ap_char, rows[cur].ap_char], [rows[prev].norm_lb, rows[cur].norm_lb])
        rows[cur].slope_window = s
    slope = fit_slope([row.ap_char for row in rows], [row.norm_lb for row in rows]) if rows else None
    return SweepResult(rows, slope, max(1.0, 1.0 / (p - r)), ok)


SWEEP_COLUMNS = ("alpha", "p", "r", "ap_char", "norm_lb", "slope_window", "diagnostic_ratio")


def _fmt(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO(newline="")
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for row in result.rows:
        buf.write(",".join(_fmt(getattr(row, c)) for c in SWEEP_COLUMNS) + "\n")
    p = result.rows[0].p if result.rows else ""
    r = result.rows[0].r if result.rows else ""
    buf.write(",".join(["fit", _fmt(p), _fmt(r), "", "", _fmt(result.slope), ""]) + "\n")
    return buf.getvalue()


__all__ = [
    "WeightProfile", "power_weight", "family_boxes", "ap_characteristic", "cube_ap_quantity",
    "testing_quantity", "NormEstimate", "sparse_weighted_norm", "bilinear_norm", "exact_weighted_norm",
    "CubeChain", "AppendixReport", "appendix_diagnostic", "SweepRow", "SweepResult", "admissible_alpha",
    "fit_slope", "weight_sweep", "sweep_csv", "SWEEP_COLUMNS",
]
