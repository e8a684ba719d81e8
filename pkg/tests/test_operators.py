from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparse_dominator.errors import DiniDivergenceError, ScopeError
from sparse_dominator.function import GridFunction, constant, indicator, random_step
from sparse_dominator.grid import Cube, dilate
from sparse_dominator.operators import (apply_truncated, audit_modulus, audit_size, audit_smoothness, dini_norm,
                                        estimate_l2_norm, get_kernel, grand_maximal, hardy_littlewood, holder,
                                        lipschitz, local_grand_maximal, log_power, operator_constants,
                                        truncated_maximal, zero_kernel)
from sparse_dominator.operators.maximal import full_matrix

H = get_kernel("hilbert")
Z = zero_kernel(1)


def unit(level: int) -> Cube:
    return Cube((0,), 2**level, level)


# -- Dini integral -------------------------------------------------------------

def test_dini_examples():
    assert dini_norm(lipschitz(1.0)) == pytest.approx(1.0, abs=1e-6)
    assert dini_norm(holder(1.0, 0.5)) == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(DiniDivergenceError):
        dini_norm(log_power(1.0, 1.0, 1.0))  # 1/log(e/t)


def test_dini_log_squared_closed_form():
    # integral of dt / (t log(e^3/t)^2) over (0,1] = 1/3
    assert dini_norm(log_power(1.0, 2.0, 3.0)) == pytest.approx(1 / 3, rel=1e-9)


def test_dini_additive():
    a, b = lipschitz(2.0), holder(0.5, 0.3)
    assert dini_norm(a + b) == pytest.approx(dini_norm(a) + dini_norm(b), rel=1e-9)


@pytest.mark.parametrize("name,n", [("hilbert", 1), ("dini_log", 1), ("riesz", 2)])
def test_kernel_audits(name, n):
    T = get_kernel(name, n)
    assert audit_size(T).ok
    assert audit_smoothness(T).ok
    assert audit_modulus(T.modulus).ok
    assert T.dini() > 0


def test_zero_kernel_audit():
    assert audit_size(Z).ok and audit_smoothness(Z).ok


# -- apply_truncated ---------------------------------------------------------------

def test_apply_truncated_zero_and_empty():
    f = random_step(unit(6), 1)
    assert not np.any(apply_truncated(Z, f))
    assert apply_truncated(H, f, [], 10) == 0.0


def test_apply_truncated_ln2_converges():
    errs = []
    for level in (6, 8, 10):
        h = 2.0**-level
        f = indicator(unit(level), unit(level))
        val = apply_truncated(H, f, unit(level), 2 * 2**level)
        # the cell holding x = 2 has centre 2 + h/2
        exact = math.log((2 + h / 2) / (1 + h / 2))
        errs.append(abs(val - exact))
        assert abs(val - math.log(2)) <= h
    # cell-centre rule: O(h^2)
    assert errs[0] / errs[1] > 12 and errs[1] / errs[2] > 12
    assert errs[2] < 1e-7


@given(st.integers(0, 1000))
def test_apply_truncated_additive(seed):
    W = unit(6)
    f, g = random_step(W, seed), random_step(W, seed + 7)
    a, b = Cube((0,), 20, 6), Cube((20,), 44, 6)
    fg = apply_truncated(H, f + g)
    assert np.allclose(fg, apply_truncated(H, f) + apply_truncated(H, g), rtol=1e-12, atol=1e-12)
    assert np.allclose(apply_truncated(H, f), apply_truncated(H, f, a) + apply_truncated(H, f, b),
                       rtol=1e-12, atol=1e-12)


def test_monotone_in_region_single_sign():
    W = unit(6)
    f = random_step(W, 4)
    x = -5  # every source lies to the right: the kernel has one sign
    small, large = Cube((10,), 10, 6), Cube((0,), 40, 6)
    assert abs(apply_truncated(H, f, small, x)) <= abs(apply_truncated(H, f, large, x))


# -- Hardy-Littlewood -----------------------------------------------------------

def hl_oracle(f: GridFunction, x: int) -> float:
    v = np.abs(f.values)
    a0 = f.window.corner[0]
    best = 0.0
    lo, hi = min(x, a0), max(x + 1, a0 + len(v))
    for a in range(lo, x + 1):
        for b in range(x + 1, hi + 1):
            ia, ib = max(a - a0, 0), min(b - a0, len(v))
            mass = v[ia:ib].sum() if ib > ia else 0.0
            best = max(best, mass / (b - a))
    return best


def test_hardy_littlewood_examples():
    level = 5
    f = indicator(unit(level), unit(level))
    assert hardy_littlewood(f, 7) == 1.0
    h = 2.0**-level
    at2 = hardy_littlewood(f, 2 * 2**level, family="exhaustive")
    assert at2 == pytest.approx(1 / (2 + h), rel=1e-12)
    assert at2 == pytest.approx(hl_oracle(f, 2 * 2**level), rel=1e-12)
    c = constant(unit(level), 0.3)
    assert np.allclose(hardy_littlewood(c, np.arange(32)), 0.3, rtol=1e-14)


def test_hardy_littlewood_exhaustive_matches_oracle():
    f = random_step(unit(4), 9, pieces=5)
    xs = np.arange(-10, 26)
    got = hardy_littlewood(f, xs, family="exhaustive")
    assert np.allclose(got, [hl_oracle(f, int(x)) for x in xs], rtol=1e-12)
    # restricted families are dominated by the exhaustive one
    assert np.all(hardy_littlewood(f, xs, "shifted") <= got * (1 + 1e-12))
    assert np.all(hardy_littlewood(f, xs, "dyadic") <= hardy_littlewood(f, xs, "shifted") * (1 + 1e-12))


# -- T* -----------------------------------------------------------------------------

def tstar_oracle(T, f: GridFunction, x: int) -> float:
    h = f.h
    a0 = f.window.corner[0]
    ys = np.arange(a0, a0 + f.window.side)
    vals = f.values
    xc = (x + 0.5) * h
    dist = np.abs(ys - x)
    best = 0.0
    for eps in sorted(set(dist.tolist()) | {-1}):
        sel = (dist > eps) & (ys != x)
        if sel.any():
            s = sum(float(T.evaluate(np.array([xc]), np.array([(y + 0.5) * h]))) * v * h
                    for y, v in zip(ys[sel], vals[sel]))
            best = max(best, abs(s))
    return best


def test_truncated_maximal_examples():
    level = 8
    f = indicator(unit(level), unit(level))
    assert truncated_maximal(Z, f, 3) == 0.0
    x = 2 * 2**level
    val = truncated_maximal(H, f, x)
    assert val == pytest.approx(abs(apply_truncated(H, f, None, x)), rel=1e-13)
    assert abs(val - math.log(2)) <= 2.0**-level


def test_truncated_maximal_oracle():
    f = random_step(unit(4), 2, pieces=6)
    for x in (-3, 0, 5, 9, 15, 20):
        assert truncated_maximal(H, f, x) == pytest.approx(tstar_oracle(H, f, x), rel=1e-12)


def test_truncated_maximal_one_sided():
    f = random_step(unit(5), 6)
    x = -4
    assert truncated_maximal(H, f, x) == pytest.approx(abs(apply_truncated(H, f, None, x)), rel=1e-13)


# -- grand maximal ------------------------------------------------------------

def mt_oracle(T, f: GridFunction, xs, scope: Cube | None = None) -> np.ndarray:
    """Every lattice interval (or every cube of D(Q0) when scoped) containing x, plus the sub-cell cube."""
    h = f.h
    a0, N = f.window.corner[0], f.window.side
    ys = np.arange(a0, a0 + N)
    v = f.values.copy()
    if scope is not None:
        big = dilate(scope, 3)
        v[(ys < big.corner[0]) | (ys >= big.corner[0] + big.side)] = 0.0

    def value(a, s):
        xi = np.arange(a, a + s)
        keep = (ys < a - s) | (ys >= a + 2 * s)
        d = xi[:, None] - ys[None, :]
        K = np.where(d == 0, 0.0, 1.0 / (np.where(d == 0, 1, d) * h))
        return np.abs(K[:, keep] @ v[keep] * h).max()

    out = []
    for x in xs:
        K = np.where(ys == x, 0.0, 1.0 / np.where(ys == x, 1, (x - ys) * h))
        best = abs(K @ v * h)
        if scope is None:
            for s in range(1, 3 * N + 3 * abs(int(x)) + 4):
                for a in range(x - s + 1, x + 1):
                    best = max(best, value(a, s))
        else:
            s = scope.side // 2
            while s >= 1:
                a = scope.corner[0] + ((x - scope.corner[0]) // s) * s
                best = max(best, value(a, s))
                s //= 2
        out.append(best)
    return np.array(out)


def test_grand_maximal_zero_and_trivial():
    f = random_step(unit(5), 0)
    assert not np.any(grand_maximal(Z, f))
    assert not np.any(local_grand_maximal(Z, f, unit(5)))


def test_grand_maximal_exhaustive_oracle():
    f = random_step(unit(3), 4, pieces=4)
    xs = [-9, -2, 0, 3, 7, 8, 12, 20]
    got = grand_maximal(H, f, np.array(xs), family="exhaustive")
    assert np.allclose(got, mt_oracle(H, f, xs), rtol=1e-11)


def test_grand_maximal_family_order_and_factor():
    level = 6
    f = indicator(unit(level), unit(level))
    xs = dilate(unit(level), 3).cells()
    ex = grand_maximal(H, f, xs, family="exhaustive")
    sh = grand_maximal(H, f, xs, family="shifted")
    dy = grand_maximal(H, f, xs, family="dyadic")
    assert np.all(dy <= sh * (1 + 1e-12)) and np.all(sh <= ex * (1 + 1e-12))
    assert np.max(ex / dy) <= 3.0


def test_grand_maximal_line_vs_direct():
    f = random_step(unit(5), 12)
    xs = np.arange(-20, 50)
    for fam in ("shifted", "dyadic"):
        a = grand_maximal(H, f, xs, family=fam, engine="line")
        b = grand_maximal(H, f, xs, family=fam, engine="direct")
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_local_grand_maximal_oracle():
    level = 4
    f = random_step(Cube((-16,), 48, level), 3, pieces=8)
    q0 = unit(level)
    got = local_grand_maximal(H, f, q0)
    assert np.allclose(got, mt_oracle(H, f, list(range(16)), q0), rtol=1e-11)
    direct = grand_maximal(H, f, q0.cells(), scope=q0, family="dyadic", engine="direct")
    assert np.allclose(got, direct, rtol=1e-11)


def test_grand_maximal_scope_violation():
    f = random_step(unit(4), 0)
    with pytest.raises(ScopeError):
        grand_maximal(H, f, 20, scope=unit(4))


def test_positive_homogeneity():
    f = random_step(unit(5), 21)
    xs = np.arange(-8, 40)
    for op in (lambda g: hardy_littlewood(g, xs), lambda g: truncated_maximal(H, g, xs),
               lambda g: grand_maximal(H, g, xs)):
        base = op(f)
        assert np.array_equal(op(f * 2.0), 2.0 * base)
        assert np.array_equal(op(f * 0.5), 0.5 * base)
        assert np.allclose(op(f * 3.7), 3.7 * base, rtol=1e-13)


# -- L2 norm ----------------------------------------------------------------------

def test_l2_norm_zero():
    assert estimate_l2_norm(Z, unit(6)) == 0.0


def test_l2_norm_matches_svd():
    W = unit(7)
    exact = np.linalg.norm(full_matrix(H, W), 2)
    assert estimate_l2_norm(H, W) == pytest.approx(exact, rel=1e-4)


def test_l2_norm_hilbert_range():
    val = estimate_l2_norm(H, unit(10))
    assert 2.5 <= val <= 3.5


def test_operator_constants_sum():
    c = operator_constants(H, unit(6))
    assert c.c_t == c.l2_norm + c.c_k + c.dini
    assert operator_constants(Z, unit(6)).c_t == 0.0
