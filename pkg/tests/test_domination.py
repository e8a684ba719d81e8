from __future__ import annotations

import itertools
import json
from fractions import Fraction

import numpy as np
import pytest

from sparse_dominator.domination import (DEPTH, FLOOR, NULL, SELECT, build_exceptional_set,
                                         certificate_from_text, certificate_to_text, check_domination,
                                         cz_decompose, exceptional_budget, global_dominate, is_dyadic_descendant,
                                         local_bound_excess, local_dominate, replay_certificate)
from sparse_dominator.errors import PreconditionError
from sparse_dominator.function import GridFunction, constant, indicator, random_step, spike
from sparse_dominator.grid import Cube, cover_partition, dilate
from sparse_dominator.operators import get_kernel, zero_kernel
from sparse_dominator.sparse import apply_sparse, verify_sparse

from oracles import cz_oracle

H = get_kernel("hilbert")
Z = zero_kernel(1)


def unit(level: int) -> Cube:
    return Cube((0,), 2**level, level)


def cells1(xs) -> np.ndarray:
    return np.asarray(xs, dtype=np.int64).reshape(-1, 1)


# -- exceptional set --------------------------------------------------------------

def test_exceptional_zero_kernel_constant():
    q0 = unit(6)
    f = constant(dilate(q0, 3), 1.0)
    exc = build_exceptional_set(Z, f, q0)
    assert len(exc) == 0


def test_exceptional_spike():
    level = 6
    q0 = unit(level)
    f = spike(q0, 17, 50.0)
    exc = build_exceptional_set(H, f, q0)
    assert [17] in exc.cells.tolist()
    # the f-part is the quantile cut on |f|: only the spike lies above it
    assert exc.threshold_f == 0.0
    assert len(exc) <= exc.budget == 2**level // 8


def test_exceptional_budget_indicator():
    level = 10
    q0 = unit(level)
    f = indicator(q0, q0)
    exc = build_exceptional_set(H, f, q0)
    assert len(exc) <= 2**-3 * 2**level
    assert exc.budget == exceptional_budget(q0) == 128
    assert np.isfinite(exc.threshold_mt) and exc.threshold_mt > 0


def test_exceptional_is_quantile_minimal():
    """Lowering either cut to the next value would overflow the budget."""
    level = 8
    q0 = unit(level)
    f = random_step(dilate(q0, 3), 4).restricted(random_step(dilate(q0, 3), 4).mask([q0]))
    from sparse_dominator.operators import local_grand_maximal, operator_constants
    m = local_grand_maximal(H, f, q0)
    exc = build_exceptional_set(H, f, q0)
    avg = sum(f.values[256:512]) / 768
    fv = f.values[256:512]
    c_t = operator_constants(H, q0).c_t
    t_f = exc.threshold_f * avg
    t_m = exc.threshold_mt * c_t * avg
    assert int((fv > t_f * (1 + 1e-12)).sum()) <= exc.budget // 2
    lower_f = fv[fv < t_f * (1 - 1e-12)]
    if len(lower_f):
        assert int((fv > lower_f.max()).sum()) > exc.budget // 2
    chosen = (fv > t_f * (1 + 1e-12)) | (m > t_m * (1 + 1e-12))
    assert int(chosen.sum()) == len(exc) <= exc.budget


# -- Calderon-Zygmund -------------------------------------------------------------

def test_cz_examples():
    q0 = unit(4)
    assert cz_decompose(cells1([]), q0) == []
    assert cz_decompose(cells1(range(4)), q0, Fraction(1, 4)) == [Cube((0,), 8, 4)]


def test_cz_uniform_spread():
    level = 5
    q0 = unit(level)
    E = cells1(range(0, 32, 8))  # |E| = 2^-3 |Q0|
    sel = cz_decompose(E, q0)
    assert all(p.side == 2 for p in sel)
    assert sum(p.side for p in sel) == 2 * len(E)


def test_cz_preconditions():
    q0 = unit(4)
    with pytest.raises(PreconditionError):
        cz_decompose(cells1([20]), q0)
    with pytest.raises(PreconditionError):
        cz_decompose(cells1(range(5)), q0)


def test_cz_random_oracle_and_consequences():
    rng = np.random.default_rng(0)
    level = 7
    q0 = unit(level)
    lam = Fraction(1, 4)
    for _ in range(200):
        k = int(rng.integers(0, 33))
        E = np.sort(rng.choice(128, size=k, replace=False))
        sel = cz_decompose(cells1(E), q0)
        assert [(p.corner[0], p.side) for p in sel] == cz_oracle(E, 0, 128, lam)
        hit = np.zeros(len(E), dtype=bool)
        for p in sel:
            inside = p.contains_cells(cells1(E))
            hit |= inside
            c = int(inside.sum())
            assert lam * p.side < c <= 2 * lam * p.side  # lam|P| < |P n E| <= 2^n lam |P|
        assert hit.all()
        assert sum(p.side for p in sel) * lam <= len(E) <= 32
        for a, b in itertools.combinations(sel, 2):
            assert not a.intersects(b)


def test_cz_two_dimensional():
    level = 4
    q0 = Cube((0, 0), 16, level)
    E = np.array([[0, 0], [0, 1], [1, 0], [9, 9], [15, 2]])
    sel = cz_decompose(E, q0)
    assert all(is_dyadic_descendant(p, q0) for p in sel)
    covered = np.zeros(len(E), dtype=bool)
    for p in sel:
        covered |= p.contains_cells(E)
        c = int(p.contains_cells(E).sum())
        assert Fraction(c, p.side**2) > Fraction(1, 8)
    assert covered.all()


# -- local domination ------------------------------------------------------------------

def test_local_zero_kernel():
    q0 = unit(6)
    F, cert = local_dominate(Z, random_step(q0, 1), q0)
    assert F.cubes == [q0]
    assert cert.c_emp == 0.0
    assert replay_certificate(cert, Z, random_step(q0, 1)).ok


def test_local_indicator_level10():
    q0 = unit(10)
    f = indicator(q0, q0)
    F, cert = local_dominate(H, f, q0)
    assert verify_sparse(F).ok and F.eta == Fraction(1, 2)
    assert replay_certificate(cert, H, f).ok
    assert local_bound_excess(H, f, cert) <= 0


def test_local_spike_chain():
    level = 4
    q0 = unit(level)
    f = spike(q0, 5, 1.0)
    F, cert = local_dominate(H, f, q0)
    assert verify_sparse(F).ok
    spike_cell = cells1([5])
    containing = sorted((q for q in F.cubes if q.contains_cells(spike_cell)[0]), key=lambda q: -q.side)
    assert containing[0] == q0
    for big, small in zip(containing, containing[1:]):
        assert is_dyadic_descendant(small, big)
    assert len(containing) >= 2
    assert local_bound_excess(H, f, cert) <= 0


def test_node_invariants_random():
    q0 = unit(8)
    for seed in range(4):
        f = random_step(q0, seed)
        _, cert = local_dominate(H, f, q0)
        for path, node in cert.nodes():
            assert 2 * sum(p.side for p in node.selected) <= node.cube.side
            for p in node.selected:
                assert is_dyadic_descendant(p, node.cube) and p != node.cube
                assert int(p.contains_cells(node.exceptional).sum()) < p.side
            if len(node.exceptional):
                hit = np.zeros(len(node.exceptional), dtype=bool)
                for p in node.selected:
                    hit |= p.contains_cells(node.exceptional)
                assert hit.all()
            assert node.residual_ok and node.boundary_ok
            assert node.kind in (SELECT, NULL, FLOOR, DEPTH, "inert", "small")


def test_depth_limit_marks_leaves():
    q0 = unit(8)
    f = random_step(q0, 2)
    _, cert = local_dominate(H, f, q0, max_depth=1)
    kinds = {node.kind for _, node in cert.nodes() if node.depth == 1}
    assert cert.depth <= 1
    assert kinds <= {DEPTH, NULL}
    assert replay_certificate(cert, H, f).ok
    assert local_bound_excess(H, f, cert) <= 0


def test_r2_local():
    q0 = unit(8)
    f = random_step(q0, 9)
    F, cert = local_dominate(H, f, q0, r=2.0)
    assert verify_sparse(F).ok
    assert replay_certificate(cert, H, f).ok
    assert local_bound_excess(H, f, cert) <= 0


# -- global domination ---------------------------------------------------------------

def test_global_zero_kernel():
    q0 = unit(5)
    res = global_dominate(Z, random_step(q0, 0), rings=1)
    assert [e.cube for e in res.family.entries] == [dilate(r, 3) for r in cover_partition(q0, 1)]
    assert res.c_emp == 0.0


def test_global_indicator_rings():
    level = 10
    q0 = unit(level)
    f = indicator(q0, q0)
    res1 = global_dominate(H, f, rings=1)
    assert len(res1.certificate.roots) == 3
    assert res1.window == dilate(q0, 3)
    assert check_domination(H, f, res1.family, res1.c_emp, res1.window).ok
    res2 = global_dominate(H, f, rings=2)
    assert res2.window == Cube((-4 * 2**level,), 9 * 2**level, level)
    assert check_domination(H, f, res2.family, res2.c_emp, res2.window).ok
    assert verify_sparse(res2.family).ok and res2.family.eta == Fraction(1, 6)
    assert verify_sparse(res2.local_family).ok
    # r = 2 on the same input: Holder gives A_2 >= A_1, and the run needs no larger constant
    r2 = global_dominate(H, f, rings=2, r=2.0)
    assert r2.c_emp <= res2.c_emp
    assert check_domination(H, f, r2.family, r2.c_emp, r2.window, r=2.0).ok


def test_global_support_precondition():
    q0 = unit(4)
    f = random_step(Cube((-16,), 48, 4), 0)
    with pytest.raises(PreconditionError):
        global_dominate(H, f, rings=1, q0=q0)


def test_global_two_dimensional():
    R = get_kernel("riesz", 2)
    q0 = Cube((0, 0), 8, 3)
    f = random_step(q0, 1, pieces=3)
    res = global_dominate(R, f, rings=1)
    assert len(res.certificate.roots) == 9
    assert verify_sparse(res.family).ok and res.family.eta == Fraction(1, 18)
    assert replay_certificate(res.certificate, R, f).ok
    assert check_domination(R, f, res.family, res.c_emp, res.window).ok


# -- replay, serialisation, determinism, covariance ------------------------------------------

def test_replay_detects_lowered_threshold():
    q0 = unit(8)
    f = random_step(q0, 3)
    _, cert = local_dominate(H, f, q0)
    path, node = max(cert.nodes(), key=lambda t: t[1].c_star)
    node.c_star *= 0.5
    rep = replay_certificate(cert, H, f)
    assert not rep.ok
    assert rep.violations[0].path == path
    assert rep.violations[0].lhs > rep.violations[0].rhs


def test_replay_detects_tampered_selection_and_setup():
    q0 = unit(8)
    f = random_step(q0, 5)
    _, cert = local_dominate(H, f, q0)
    cert.roots[0].selected = cert.roots[0].selected[:-1]
    assert not replay_certificate(cert, H, f).ok
    _, cert = local_dominate(H, f, q0)
    assert not replay_certificate(cert, Z, f).ok


def test_serialisation_roundtrip():
    q0 = unit(8)
    f = random_step(q0, 6)
    res = global_dominate(H, f, rings=1)
    text = certificate_to_text(res.certificate)
    back = certificate_from_text(text)
    assert certificate_to_text(back) == text
    a, b = replay_certificate(res.certificate, H, f), replay_certificate(back, H, f)
    assert a.ok and b.ok and a.nodes == b.nodes
    assert back.family().same_as(res.certificate.family())
    with pytest.raises(ValueError):
        certificate_from_text(text[: len(text) // 2])
    doc = json.loads(text)
    assert list(doc) == ["format", "kernel", "n", "level", "r", "constants", "max_depth", "roots"]


def test_determinism():
    q0 = unit(8)
    f = random_step(q0, 8)
    a = certificate_to_text(global_dominate(H, f, rings=1).certificate)
    b = certificate_to_text(global_dominate(H, f, rings=1).certificate)
    assert a == b


def test_dilation_covariance():
    """f(x) -> f(2x): the lattice is refined and the certificate tree is the same up to relabelling."""
    coarse = random_step(unit(9), 12, coarse_level=8)
    # g(x) = f(2x): supported in Q0 = [0, 1/2), whose level-10 cells carry the level-9 values of f
    q_fine = Cube((0,), 512, 10)
    fine = GridFunction(q_fine, coarse.values)
    _, c1 = local_dominate(H, coarse, unit(9))
    _, c2 = local_dominate(H, fine, q_fine, constants=c1.constants)
    n1, n2 = list(c1.nodes()), list(c2.nodes())
    assert [p for p, _ in n1] == [p for p, _ in n2]
    for (_, a), (_, b) in zip(n1, n2):
        assert a.kind == b.kind
        assert (a.cube.corner, a.cube.side) == (b.cube.corner, b.cube.side)
        assert a.c_star == b.c_star
        assert a.threshold_f == b.threshold_f and a.threshold_mt == b.threshold_mt
        assert [(p.corner, p.side) for p in a.selected] == [(p.corner, p.side) for p in b.selected]


def test_check_domination_reports_failure():
    q0 = unit(6)
    f = random_step(q0, 0)
    res = global_dominate(H, f, rings=1)
    good = check_domination(H, f, res.family, res.c_emp, res.window)
    assert good.ok and good.worst_ratio <= res.c_emp * (1 + 1e-12)
    bad = check_domination(H, f, res.family, 0.9 * good.worst_ratio, res.window)
    assert not bad.ok and bad.failures > 0
    a1 = apply_sparse(res.family, f.extended(res.window), 1.0, res.window)
    assert a1.values.min() > 0
