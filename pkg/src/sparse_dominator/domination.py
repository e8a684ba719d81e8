"""Constructive pointwise sparse domination with a replayable certificate.

Local step on a cube Q0 with reference average a = (|f|^r)_{3Q0}^{1/r}:

1. exceptional set E = {|f| > t_f} U {M_{T,Q0} f > t_m}, with quantile cuts
   leaving at most 2^-(n+2)|Q0| cells in E;
2. Calderon-Zygmund selection of the maximal P in D(Q0) with |P n E| > 2^-(n+1)|P|;
3. node constant c_star = max(boundary terms, residual) / a, where the boundary
   term of P_j is max over P_j of |T(f chi_{3Q0 minus 3P_j})| and the residual is
   max of |T(f chi_{3Q0})| off the selected cubes;
4. recursion into every P_j.

The cubes visited form a 1/2-sparse family F (witness Q minus its children) and
|T(f chi_{3Q0})| <= max c_star * sum_{Q in F} (|f|^r)_{3Q}^{1/r} chi_Q on Q0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import PreconditionError
from .function import GridFunction, r_average
from .grid import Cube, as_cells, cover_partition, decode_runs, dilate, encode_runs
from .operators.kernels import KernelSpec, get_kernel
from .operators.maximal import (OperatorConstants, _LineTable, _sources, apply_truncated, kernel_block,
                                local_grand_maximal, operator_constants)
from .sparse import SparseEntry, SparseFamily, apply_sparse, verify_sparse

DEFAULT_MAX_DEPTH = 64
# node kinds
SELECT = "select"   # exceptional set built, CZ selection made (possibly empty)
NULL = "null"       # f vanishes on 3Q0
INERT = "inert"     # M_{T,Q0} f vanishes on Q0, nothing to control
SMALL = "small"     # 2^-(n+2)|Q0| < 1 cell: no room for an exceptional set
FLOOR = "floor"     # odd side: Q0 has no dyadic children at this resolution
DEPTH = "depth"     # configured depth exhausted
KINDS = (SELECT, NULL, INERT, SMALL, FLOOR, DEPTH)


def _abs(f: GridFunction) -> GridFunction:
    return f if not np.any(f.values < 0) else f.abs()


def exceptional_budget(q0: Cube) -> int:
    """floor(2^-(n+2) |Q0|) in cells."""
    return q0.cell_count() // 2 ** (q0.n + 2)


def cz_height(n: int) -> Fraction:
    return Fraction(1, 2 ** (n + 1))


# -- exceptional set --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExceptionalSet:
    cells: np.ndarray
    threshold_f: float   # cut on |f| in units of the reference average
    threshold_mt: float  # cut on M_{T,Q0} f in units of C_T times the reference average
    budget: int

    def __len__(self) -> int:
        return len(self.cells)


def _cut(values: np.ndarray, keep: int) -> float:
    """Smallest value t with at most ``keep`` entries strictly above t."""
    if keep >= len(values):
        return 0.0 if not len(values) else min(0.0, float(values.min()))
    return float(np.partition(values, len(values) - keep - 1)[len(values) - keep - 1])


def build_exceptional_set(T: KernelSpec, f: GridFunction, q0: Cube, r: float = 1.0,
                          constants: OperatorConstants | None = None,
                          mt: np.ndarray | None = None) -> ExceptionalSet:
    """E = {|f| > t_f} U {M_{T,Q0} f > t_m} with |E| <= 2^-(n+2)|Q0|.

    t_f is the smallest cut leaving at most half the budget above it; t_m is
    then the smallest cut keeping the union within the budget. The cuts are
    reported in units of a and of C_T a, with a the reference average.
    """
    f = _abs(f)
    n = q0.n
    budget = exceptional_budget(q0)
    empty = np.zeros((0, n), dtype=np.int64)
    avg = r_average(f, dilate(q0, 3), r)
    if budget == 0 or avg == 0.0:
        return ExceptionalSet(empty, np.inf, np.inf, budget)
    m = local_grand_maximal(T, f, q0) if mt is None else mt
    if not np.any(m > 0):
        return ExceptionalSet(empty, np.inf, np.inf, budget)
    if constants is None:
        constants = operator_constants(T, q0)
    cells = q0.cells()
    fv = f.value_at(cells)
    t_f = _cut(fv, budget // 2)
    in_f = fv > t_f
    t_m = _cut(m[~in_f], budget - int(in_f.sum()))
    chosen = in_f | (m > t_m)
    c_t = constants.c_t
    return ExceptionalSet(cells[chosen], t_f / avg, t_m / (c_t * avg) if c_t > 0 else np.inf, budget)


# -- Calderon-Zygmund selection ----------------------------------------------

def cz_decompose(cells: np.ndarray, q0: Cube, lam: Fraction | None = None) -> list[Cube]:
    """Maximal cubes P of D(Q0), P != Q0, with |P n E| / |P| > lam, in corner order."""
    n = q0.n
    lam = cz_height(n) if lam is None else Fraction(lam)
    cells = as_cells(cells, n)
    if len(cells) and not q0.contains_cells(cells).all():
        raise PreconditionError("E is not contained in Q0")
    s = q0.side
    if len(cells) * lam.denominator > lam.numerator * s**n:
        raise PreconditionError(f"average of E over Q0 exceeds the height {lam}")
    if not len(cells):
        return []
    mask = np.zeros((s,) * n, dtype=bool)
    mask[tuple((cells - np.asarray(q0.corner)).T)] = True
    out: list[tuple[int, ...]] = []
    sides: list[int] = []

    def visit(lo: tuple[int, ...], side: int) -> None:
        count = int(np.count_nonzero(mask[tuple(slice(a, a + side) for a in lo)]))
        if count == 0:
            return
        if side < s and count * lam.denominator > lam.numerator * side**n:
            out.append(lo)
            sides.append(side)
            return
        if side % 2:
            return
        half = side // 2
        for offs in np.ndindex(*(2,) * n):
            visit(tuple(a + o * half for a, o in zip(lo, offs)), half)

    visit((0,) * n, s)
    cubes = [Cube(tuple(a + c for a, c in zip(lo, q0.corner)), side, q0.level)
             for lo, side in zip(out, sides)]
    return sorted(cubes, key=lambda q: q.corner)


def is_dyadic_descendant(p: Cube, q0: Cube) -> bool:
    """p in D(q0) at q0's resolution (p may equal q0)."""
    if p.level != q0.level or p.third or q0.third or not q0.contains(p):
        return False
    k = q0.side // p.side
    if k * p.side != q0.side or k & (k - 1):
        return False
    return all((a - b) % p.side == 0 for a, b in zip(p.corner, q0.corner))


# -- node evaluation (shared by construction and replay) ----------------------

def node_values(T: KernelSpec, f: GridFunction, q0: Cube, selected: Sequence[Cube]) -> tuple[list[float], float]:
    """Boundary terms max_{P_j} |T(f chi_{3Q0 minus 3P_j})| and the residual
    max of |T(f chi_{3Q0})| over the cells of Q0 outside every P_j."""
    f = _abs(f)
    big = dilate(q0, 3)
    s = q0.side
    if T.is_zero:
        return [0.0] * len(selected), 0.0
    covered = np.zeros((s,) * q0.n, dtype=bool)
    boundary = []
    if f.n == 1:
        a = q0.corner[0]
        table = _LineTable(T, f, a, a + s, f.mask([big]))
        total = np.abs(table.total)
        for p in selected:
            rows = np.arange(p.corner[0], p.corner[0] + p.side, dtype=np.int64)
            vals = table.total[rows - a] - table.interval(rows, rows * 0 + p.corner[0] - p.side,
                                                          rows * 0 + p.corner[0] + 2 * p.side)
            boundary.append(float(np.max(np.abs(vals))))
            covered[p.corner[0] - a:p.corner[0] - a + p.side] = True
        rest = total[~covered]
    else:
        src, vals = _sources(f, f.mask([big]))
        cells = q0.cells()
        A = kernel_block(T, cells, src, f.level)
        total = np.abs(A @ vals).reshape((s,) * q0.n)
        for p in selected:
            rows = p.contains_cells(cells)
            keep = ~dilate(p, 3).contains_cells(src)
            part = A[rows][:, keep] @ vals[keep]
            boundary.append(float(np.max(np.abs(part))) if part.size else 0.0)
            covered[tuple(slice(c - o, c - o + p.side) for c, o in zip(p.corner, q0.corner))] = True
        rest = total[~covered]
    return boundary, float(rest.max()) if rest.size else 0.0


def _scaled_constant(value: float, avg: float) -> float:
    """Smallest float c with c * avg >= value (avg > 0)."""
    if value <= 0.0:
        return 0.0
    c = value / avg
    while c * avg < value:
        c = float(np.nextafter(c, np.inf))
    return c


# -- certificate --------------------------------------------------------------

@dataclass(eq=False)
class CertificateNode:
    cube: Cube
    kind: str
    depth: int
    avg_ref: float
    c_star: float
    threshold_f: float
    threshold_mt: float
    exceptional: np.ndarray
    selected: list[Cube]
    boundary: list[float]
    residual: float
    residual_ok: bool
    boundary_ok: bool
    children: list["CertificateNode"] = field(default_factory=list)

    def walk(self, path: str = "0"):
        yield path, self
        for i, c in enumerate(self.children):
            yield from c.walk(f"{path}/{i}")


@dataclass(eq=False)
class DominationCertificate:
    kernel: str
    n: int
    level: int
    r: float
    constants: OperatorConstants
    max_depth: int
    roots: list[CertificateNode]

    def nodes(self):
        for i, root in enumerate(self.roots):
            yield from root.walk(str(i))

    @property
    def c_emp(self) -> float:
        return max((node.c_star for _, node in self.nodes()), default=0.0)

    @property
    def depth(self) -> int:
        return max((node.depth for _, node in self.nodes()), default=0)

    @property
    def resolution(self) -> int:
        return 2**self.level

    def family(self) -> SparseFamily:
        """Pre-dilation family F: every node cube with witness Q minus its selected cubes (eta = 1/2)."""
        entries = []
        for _, node in self.nodes():
            entries.append(SparseEntry(node.cube, _witness(node.cube, node.selected)))
        return SparseFamily(tuple(entries), Fraction(1, 2))


def _witness(q: Cube, selected: Sequence[Cube]) -> np.ndarray:
    cells = q.cells()
    keep = np.ones(len(cells), dtype=bool)
    for p in selected:
        keep &= ~p.contains_cells(cells)
    return cells[keep]


def _node(T, f, q, r, constants, depth, max_depth) -> CertificateNode:
    n = q.n
    avg = r_average(f, dilate(q, 3), r)
    empty = np.zeros((0, n), dtype=np.int64)
    exc = ExceptionalSet(empty, np.inf, np.inf, exceptional_budget(q))
    selected: list[Cube] = []
    if avg == 0.0:
        kind = NULL
    elif depth >= max_depth:
        kind = DEPTH
    elif q.side % 2:
        kind = FLOOR
    elif exc.budget == 0:
        kind = SMALL
    else:
        m = local_grand_maximal(T, f, q)
        if not np.any(m > 0):
            kind = INERT
        else:
            kind = SELECT
            exc = build_exceptional_set(T, f, q, r, constants, mt=m)
            selected = cz_decompose(exc.cells, q)
    boundary, residual = node_values(T, f, q, selected)
    top = max([residual] + boundary)
    c_star = _scaled_constant(top, avg) if avg > 0 else 0.0
    bound = c_star * avg
    node = CertificateNode(q, kind, depth, avg, c_star, exc.threshold_f, exc.threshold_mt, exc.cells,
                           selected, boundary, residual, residual <= bound, all(b <= bound for b in boundary))
    node.children = [_node(T, f, p, r, constants, depth + 1, max_depth) for p in selected]
    return node


def local_dominate(T: KernelSpec, f: GridFunction, q0: Cube, r: float = 1.0,
                   max_depth: int = DEFAULT_MAX_DEPTH,
                   constants: OperatorConstants | None = None) -> tuple[SparseFamily, DominationCertificate]:
    """Sparse family F in D(Q0) and certificate for |T(f chi_{3Q0})| on Q0."""
    if r < 1:
        raise ValueError("r must be >= 1")
    f = _abs(f)
    if constants is None:
        constants = operator_constants(T, q0)
    root = _node(T, f, q0, r, constants, 0, max_depth)
    cert = DominationCertificate(T.name, q0.n, q0.level, float(r), constants, max_depth, [root])
    return cert.family(), cert


@dataclass(eq=False)
class GlobalResult:
    family: SparseFamily        # S = {3Q : Q in F}, eta = 1/(2 3^n)
    local_family: SparseFamily  # F before dilation, eta = 1/2
    certificate: DominationCertificate
    window: Cube                # verification window 3^rings Q0

    @property
    def c_emp(self) -> float:
        return self.certificate.c_emp


def global_dominate(T: KernelSpec, f: GridFunction, rings: int = 1, r: float = 1.0, q0: Cube | None = None,
                    max_depth: int = DEFAULT_MAX_DEPTH) -> GlobalResult:
    """Local domination on every cube of the ring partition around Q0, then 3-dilation.

    Q0 defaults to f's window; the support of f must lie in Q0.
    """
    f = _abs(f)
    q0 = f.window if q0 is None else q0
    supp = f.support_box()
    if supp is not None and not q0.contains(supp):
        raise PreconditionError(f"support of f is not contained in {q0}")
    constants = operator_constants(T, q0)
    roots = []
    for cube_ in cover_partition(q0, rings):
        _, cert = local_dominate(T, f, cube_, r, max_depth, constants)
        roots.extend(cert.roots)
    cert = DominationCertificate(T.name, q0.n, q0.level, float(r), constants, max_depth, roots)
    local = cert.family()
    dilated = SparseFamily(tuple(SparseEntry(dilate(e.cube, 3), e.witness) for e in local.entries),
                           Fraction(1, 2 * 3**q0.n))
    return GlobalResult(dilated, local, cert, dilate(q0, 3**rings) if rings else q0)


# -- end-to-end check ---------------------------------------------------------

@dataclass
class DominationCheck:
    ok: bool
    worst_ratio: float   # max over cells of |Tf| / A_{r,S}|f| (0 where both vanish)
    max_excess: float    # max of |Tf| - C A_{r,S}|f|
    failures: int
    cells: int


def check_domination(T: KernelSpec, f: GridFunction, S: SparseFamily, c: float, window: Cube,
                     r: float = 1.0, rtol: float = 1e-12) -> DominationCheck:
    """|Tf(x)| <= c * A_{r,S}|f|(x) at every cell of the window, up to a relative float slack."""
    f = _abs(f)
    cells = window.cells()
    tf = np.abs(apply_truncated(T, f, None, cells))
    a = apply_sparse(S, f, r, window).flat()
    bound = c * a
    bad = tf > bound * (1 + rtol)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(a > 0, tf / a, np.where(tf > 0, np.inf, 0.0))
    return DominationCheck(not bad.any(), float(ratio.max()) if ratio.size else 0.0,
                           float(np.max(tf - bound)) if tf.size else 0.0, int(bad.sum()), len(cells))


def local_bound_excess(T: KernelSpec, f: GridFunction, cert: DominationCertificate, rtol: float = 1e-12) -> float:
    """max over the cells x of each root Q0 of |T(f chi_{3Q0})(x)| - C sum_F avg chi_Q(x) (1 + rtol).

    C is the certificate maximum; the value is <= 0 when the local bound holds.
    """
    f = _abs(f)
    worst = -np.inf
    c = cert.c_emp
    for root in cert.roots:
        q0 = root.cube
        cells = q0.cells()
        lhs = np.abs(apply_truncated(T, f, dilate(q0, 3), cells))
        a = np.zeros(len(lhs))
        for _, node in root.walk():
            a[node.cube.contains_cells(cells)] += node.avg_ref
        worst = max(worst, float(np.max(lhs - c * a * (1 + rtol))))
    return worst


# -- replay -------------------------------------------------------------------

@dataclass
class Violation:
    path: str
    check: str
    lhs: float | int | str
    rhs: float | int | str
    cube: str = ""

    def __str__(self) -> str:
        return f"node {self.path} {self.cube}: {self.check} fails ({self.lhs!r} vs {self.rhs!r})"


@dataclass
class ReplayReport:
    ok: bool
    nodes: int
    violations: list[Violation]

    def __bool__(self) -> bool:
        return self.ok


def replay_certificate(cert: DominationCertificate, T: KernelSpec, f: GridFunction) -> ReplayReport:
    """Recompute every node from T and f and check the recorded claims. Never raises."""
    out: list[Violation] = []
    count = 0
    try:
        f = _abs(f)
        if T.name != cert.kernel or T.n != cert.n or f.level != cert.level:
            out.append(Violation("-", "setup", f"{T.name}/n={T.n}/L={f.level}",
                                 f"{cert.kernel}/n={cert.n}/L={cert.level}"))
            return ReplayReport(False, 0, out)
        for path, node in cert.nodes():
            count += 1
            _replay_node(cert, T, f, path, node, out)
        if not verify_sparse(cert.family()).ok:
            out.append(Violation("-", "witness sparseness", "not 1/2-sparse", "1/2"))
    except Exception as exc:  # report rather than raise
        out.append(Violation("-", "exception", type(exc).__name__, str(exc)))
    return ReplayReport(not out, count, out)


def _replay_node(cert, T, f, path, node: CertificateNode, out: list[Violation]) -> None:
    q = node.cube
    tag = str(q)

    def bad(check, lhs, rhs):
        out.append(Violation(path, check, lhs, rhs, tag))

    if node.kind not in KINDS:
        bad("kind", node.kind, "|".join(KINDS))
        return
    if node.depth > cert.max_depth:
        bad("depth", node.depth, cert.max_depth)
    avg = r_average(f, dilate(q, 3), cert.r)
    if avg != node.avg_ref:
        bad("avg_ref", node.avg_ref, avg)
    sel = node.selected
    for p in sel:
        if not is_dyadic_descendant(p, q) or p == q:
            bad("selected cube in D(Q0)", str(p), tag)
    for i in range(len(sel)):
        for j in range(i + 1, len(sel)):
            if sel[i].intersects(sel[j]):
                bad("selected cubes disjoint", str(sel[i]), str(sel[j]))
    mass = sum(p.cell_count() for p in sel if not p.third)
    if 2 * mass > q.cell_count():
        bad("sum |P_j| <= |Q0|/2", mass, Fraction(q.cell_count(), 2))
    if [str(c.cube) for c in node.children] != [str(p) for p in sel]:
        bad("children match selection", len(node.children), len(sel))
    if node.kind == SELECT:
        exc = build_exceptional_set(T, f, q, cert.r, cert.constants)
        if not np.array_equal(exc.cells, node.exceptional):
            bad("exceptional set", len(node.exceptional), len(exc.cells))
        if len(node.exceptional) > exc.budget:
            bad("|E| <= 2^-(n+2)|Q0|", len(node.exceptional), exc.budget)
        try:
            cz = cz_decompose(node.exceptional, q)
        except PreconditionError as e:
            bad("cz precondition", str(e), "")
            cz = sel
        if [str(p) for p in cz] != [str(p) for p in sel]:
            bad("cz selection", len(sel), len(cz))
        in_any = np.zeros(len(node.exceptional), dtype=bool)
        for p in sel:
            inside = p.contains_cells(node.exceptional)
            in_any |= inside
            if int(inside.sum()) >= p.cell_count():
                bad("P_j meets the complement of E", int(inside.sum()), p.cell_count())
        if not in_any.all():
            bad("E covered by selected cubes", int((~in_any).sum()), 0)
    elif sel:
        bad("selection only at select nodes", len(sel), 0)
    boundary, residual = node_values(T, f, q, sel)
    bound = node.c_star * avg
    for p, b in zip(sel, boundary):
        if not b <= bound:
            bad(f"boundary term on {p}", b, bound)
    if not residual <= bound:
        bad("residual", residual, bound)
    if node.residual_ok != (residual <= bound):
        bad("residual flag", node.residual_ok, residual <= bound)
    if node.boundary_ok != all(b <= bound for b in boundary):
        bad("boundary flag", node.boundary_ok, not node.boundary_ok)


# -- serialization ------------------------------------------------------------

_FORMAT = "domination-certificate v1"


def _cube_json(q: Cube) -> list:
    return [list(q.corner), q.side, q.third]


def _cube_from(obj, level: int) -> Cube:
    corner, side, third = obj
    return Cube(tuple(int(c) for c in corner), int(side), level, int(third))


def _node_json(node: CertificateNode) -> dict:
    return {
        "cube": _cube_json(node.cube),
        "kind": node.kind,
        "depth": node.depth,
        "avg_ref": node.avg_ref,
        "c_star": node.c_star,
        "threshold_f": _num(node.threshold_f),
        "threshold_mt": _num(node.threshold_mt),
        "exceptional": encode_runs(node.exceptional),
        "selected": [_cube_json(p) for p in node.selected],
        "boundary": node.boundary,
        "residual": node.residual,
        "residual_ok": node.residual_ok,
        "boundary_ok": node.boundary_ok,
        "children": [_node_json(c) for c in node.children],
    }


def _num(x: float):
    return "inf" if x == np.inf else x


def _unnum(x) -> float:
    return np.inf if x == "inf" else float(x)


def _node_from(obj: dict, n: int, level: int) -> CertificateNode:
    return CertificateNode(
        cube=_cube_from(obj["cube"], level), kind=str(obj["kind"]), depth=int(obj["depth"]),
        avg_ref=float(obj["avg_ref"]), c_star=float(obj["c_star"]),
        threshold_f=_unnum(obj["threshold_f"]), threshold_mt=_unnum(obj["threshold_mt"]),
        exceptional=decode_runs(obj["exceptional"], n),
        selected=[_cube_from(p, level) for p in obj["selected"]],
        boundary=[float(b) for b in obj["boundary"]], residual=float(obj["residual"]),
        residual_ok=bool(obj["residual_ok"]), boundary_ok=bool(obj["boundary_ok"]),
        children=[_node_from(c, n, level) for c in obj["children"]])


def certificate_to_text(cert: DominationCertificate) -> str:
    doc = {
        "format": _FORMAT,
        "kernel": cert.kernel,
        "n": cert.n,
        "level": cert.level,
        "r": cert.r,
        "constants": {"l2_norm": cert.constants.l2_norm, "c_k": cert.constants.c_k, "dini": cert.constants.dini},
        "max_depth": cert.max_depth,
        "roots": [_node_json(r) for r in cert.roots],
    }
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def certificate_from_text(text: str) -> DominationCertificate:
    try:
        doc = json.loads(text)
        if doc.get("format") != _FORMAT:
            raise ValueError(f"not a {_FORMAT} document")
        n, level = int(doc["n"]), int(doc["level"])
        c = doc["constants"]
        return DominationCertificate(
            str(doc["kernel"]), n, level, float(doc["r"]),
            OperatorConstants(float(c["l2_norm"]), float(c["c_k"]), float(c["dini"])),
            int(doc["max_depth"]), [_node_from(r, n, level) for r in doc["roots"]])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed certificate: {exc}") from exc


def kernel_for(cert: DominationCertificate) -> KernelSpec:
    return get_kernel(cert.kernel, cert.n)


__all__ = [
    "ExceptionalSet", "build_exceptional_set", "cz_decompose", "cz_height", "exceptional_budget",
    "is_dyadic_descendant", "node_values", "CertificateNode", "DominationCertificate", "local_dominate",
    "GlobalResult", "global_dominate", "DominationCheck", "check_domination", "local_bound_excess",
    "Violation", "ReplayReport", "replay_certificate", "certificate_to_text", "certificate_from_text",
    "kernel_for", "KINDS",
]
