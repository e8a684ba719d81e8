"""Calderón–Zygmund kernels, moduli of continuity and the Dini integral."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DiniDivergenceError


@dataclass(frozen=True)
class Modulus:
    """A modulus of continuity omega on [0, 1].

    ``at_log(u)`` returns omega(exp(-u)); moduli with logarithmic behaviour
    near 0 supply it in closed form so the Dini quadrature never underflows.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    log_func: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, t):
        return self.func(np.asarray(t, dtype=float))

    def at_log(self, u):
        u = np.asarray(u, dtype=float)
        if self.log_func is not None:
            return self.log_func(u)
        return self.func(np.exp(-u))

    def __add__(self, other: "Modulus") -> "Modulus":
        return Modulus(f"({self.name})+({other.name})",
                       lambda t: self(t) + other(t),
                       lambda u: self.at_log(u) + other.at_log(u))

    def scaled(self, c: float) -> "Modulus":
        return Modulus(f"{c!r}*({self.name})", lambda t: c * self(t), lambda u: c * self.at_log(u))


def lipschitz(c: float = 1.0) -> Modulus:
    return Modulus(f"{c!r}*t", lambda t: c * t, lambda u: c * np.exp(-u))


def holder(c: float, a: float) -> Modulus:
    return Modulus(f"{c!r}*t^{a!r}", lambda t: c * t**a, lambda u: c * np.exp(-a * u))


def _safe_log_ratio(t: np.ndarray, e_power: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return e_power - np.log(t)


def log_power(c: float = 1.0, power: float = 2.0, offset: float = 3.0) -> Modulus:
    """omega(t) = c / log(e^offset / t)**power, with omega(0) = 0."""

    def f(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = c / _safe_log_ratio(t[pos], offset) ** power
        return out

    return Modulus(f"{c!r}/log(e^{offset!r}/t)^{power!r}", f, lambda u: c / (offset + u) ** power)


def zero_modulus() -> Modulus:
    return Modulus("0", lambda t: np.zeros_like(t), lambda u: np.zeros_like(u))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(40)


def _panel(mod: Modulus, a: float, b: float) -> float:
    x = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
    return float(0.5 * (b - a) * np.dot(_GL_W, mod.at_log(x)))


def dini_norm(mod: Modulus, rtol: float = 1e-13, max_panels: int = 70) -> float:
    """Integral of omega(t)/t over (0, 1] via t = exp(-u).

    Unit panels on [0, 16], then doubling panels. Raises DiniDivergenceError
    when the doubling-panel contributions stop shrinking (partial integrals
    fail to be Cauchy).
    """
    total = 0.0
    for k in range(16):
        total += _panel(mod, k, k + 1)
    a = 16.0
    prev = None
    for _ in range(max_panels):
        c = _panel(mod, a, 2 * a)
        total += c
        a *= 2
        if c == 0.0 or (total > 0 and abs(c) <= rtol * abs(total)):
            if prev is not None and prev > 0 and 0 < c < prev:
                rho = c / prev
                total += c * rho / (1 - rho)
            return total
        prev = c
    raise DiniDivergenceError(f"Dini integral of {mod.name} does not converge (partial sum {total:.6g} at u={a:.3g})")


@dataclass(frozen=True)
class KernelSpec:
    """An omega-Calderón–Zygmund kernel in dimension ``n``.

    ``evaluate(x, y)`` takes float arrays with trailing axis n (broadcastable)
    and is only meaningful off the diagonal.
    """

    name: str
    n: int
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(compare=False)
    size_constant: float
    modulus: Modulus = field(compare=False)
    is_zero: bool = False

    def dini(self) -> float:
        return dini_norm(self.modulus)


# -- built-in kernels -------------------------------------------------------

def _zero_eval(x, y):
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))[:-1])


def _hilbert_eval(x, y):
    return 1.0 / (x[..., 0] - y[..., 0])


DINI_LOG_TERMS = 24
_K = np.arange(1, DINI_LOG_TERMS + 1, dtype=float)
_A = _K**-3.0
_U = float(_A.sum())


def _radial_factor(z: np.ndarray) -> np.ndarray:
    """1 + u(log|z|) / (2U), u(s) = sum_k k^-3 cos(2^k s); lies in [1/2, 3/2]."""
    s = np.log(np.abs(z))
    u = np.zeros_like(s)
    for k, a in zip(_K, _A):
        u += a * np.cos(2.0**k * s)
    return 1.0 + u / (2 * _U)


def _dini_log_eval(x, y):
    z = x[..., 0] - y[..., 0]
    return _radial_factor(z) / z


def _dini_log_smoothness_bound(t: np.ndarray) -> np.ndarray:
    """Upper bound for (|K(x,y)-K(x',y)| + |K(y,x)-K(y,x')|) |x-y| at ratio t < 1/2."""
    delta = -np.log1p(-t)  # |log|z'| - log|z||
    osc = np.zeros_like(t)
    for k, a in zip(_K, _A):
        osc += a * np.minimum(2.0**k * delta, 2.0)
    return 2 * (osc / (2 * _U) + 1.5 * t / (1 - t))


def _dini_log_constant() -> float:
    t = np.exp(-np.linspace(np.log(2.0), 700.0, 200001))
    base = log_power(1.0)
    return float(np.max(_dini_log_smoothness_bound(t) / base(t)))


def _riesz_eval(x, y):
    z = x - y
    r2 = np.sum(z * z, axis=-1)
    return z[..., 0] / r2**1.5


def zero_kernel(n: int = 1) -> KernelSpec:
    return KernelSpec("zero", n, _zero_eval, 1.0, zero_modulus(), is_zero=True)


def hilbert_kernel() -> KernelSpec:
    # 1/(x-y): each smoothness term is t/(1-t)/|x-y| <= 2t/|x-y| for t < 1/2
    return KernelSpec("hilbert", 1, _hilbert_eval, 1.0, lipschitz(4.0))


def dini_log_kernel() -> KernelSpec:
    """Convolution kernel phi(z)/z with a radial factor oscillating at all log-scales.

    Its smoothness is Dini but not Lipschitz: omega(t) = c / log(e^3/t)^2.
    """
    c = math.ceil(_dini_log_constant() * 1000) / 1000
    return KernelSpec("dini_log", 1, _dini_log_eval, 1.5, log_power(c))


def riesz_kernel() -> KernelSpec:
    # |grad K| <= 2/|z|^3 and |z_s| >= |z|/2 on the segment: 16t per term
    return KernelSpec("riesz", 2, _riesz_eval, 1.0, lipschitz(32.0))


_REGISTRY: dict[tuple[str, int], Callable[[], KernelSpec]] = {
    ("zero", 1): lambda: zero_kernel(1),
    ("zero", 2): lambda: zero_kernel(2),
    ("hilbert", 1): hilbert_kernel,
    ("dini_log", 1): dini_log_kernel,
    ("riesz", 2): riesz_kernel,
}
_CACHE: dict[tuple[str, int], KernelSpec] = {}


def register_kernel(spec: KernelSpec) -> None:
    _REGISTRY[(spec.name, spec.n)] = lambda: spec
    _CACHE.pop((spec.name, spec.n), None)


def get_kernel(name: str, n: int = 1) -> KernelSpec:
    key = (name, n)
    if key not in _REGISTRY:
        known = ", ".join(f"{a}(n={b})" for a, b in sorted(_REGISTRY))
        raise KeyError(f"unknown kernel {name!r} in dimension {n}; known: {known}")
    if key not in _CACHE:
        _CACHE[key] = _REGISTRY[key]()
    return _CACHE[key]


def kernel_names() -> list[tuple[str, int]]:
    return sorted(_REGISTRY)


# -- randomized audits ------------------------------------------------------

@dataclass
class AuditReport:
    ok: bool
    worst_ratio: float
    samples: int
    detail: str = ""


def _sample_pairs(rng: np.random.Generator, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    x = rng.uniform(-1, 1, size=(m, n))
    direction = rng.normal(size=(m, n))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    dist = 10.0 ** rng.uniform(-6, 2, size=(m, 1))
    return x, x + dist * direction


def audit_size(spec: KernelSpec, samples: int = 20000, seed: int = 0) -> AuditReport:
    """max |K(x,y)| |x-y|^n / C_K over random pairs; ok iff <= 1."""
    rng = np.random.default_rng(seed)
    x, y = _sample_pairs(rng, spec.n, samples)
    r = np.linalg.norm(x - y, axis=1)
    ratio = np.abs(spec.evaluate(x, y)) * r**spec.n / spec.size_constant
    worst = float(ratio.max())
    return AuditReport(worst <= 1 + 1e-12, worst, samples)


def smoothness_ratios(spec: KernelSpec, samples: int = 20000, seed: int = 0,
                      base: Modulus | None = None) -> np.ndarray:
    """(|K(x,y)-K(x',y)| + |K(y,x)-K(y,x')|) |x-y|^n / omega(t) for random triples, t < 1/2."""
    rng = np.random.default_rng(seed)
    mod = spec.modulus if base is None else base
    x, y = _sample_pairs(rng, spec.n, samples)
    r = np.linalg.norm(x - y, axis=1, keepdims=True)
    t = 10.0 ** rng.uniform(-8, np.log10(0.499), size=(samples, 1))
    d = rng.normal(size=(samples, spec.n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    xp = x + t * r * d
    lhs = np.abs(spec.evaluate(x, y) - spec.evaluate(xp, y)) + np.abs(spec.evaluate(y, x) - spec.evaluate(y, xp))
    tt = (np.linalg.norm(x - xp, axis=1) / r[:, 0])
    om = mod(tt)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(om > 0, lhs * r[:, 0] ** spec.n / om, np.where(lhs > 0, np.inf, 0.0))


def audit_smoothness(spec: KernelSpec, samples: int = 20000, seed: int = 0) -> AuditReport:
    ratios = smoothness_ratios(spec, samples, seed)
    worst = float(ratios.max())
    return AuditReport(worst <= 1 + 1e-9, worst, samples)


def calibrate_modulus(spec: KernelSpec, base: Modulus, samples: int = 20000, seed: int = 0) -> float:
    """Smallest c with the smoothness condition holding for c*base on the sampled triples."""
    return float(smoothness_ratios(spec, samples, seed, base).max())


def audit_modulus(mod: Modulus, samples: int = 2000, seed: int = 0) -> AuditReport:
    """omega(0) = 0, nondecreasing on a grid, subadditive on random pairs."""
    rng = np.random.default_rng(seed)
    problems = []
    if float(mod(np.array([0.0]))[0]) != 0.0:
        problems.append("omega(0) != 0")
    grid = np.concatenate([[0.0], np.logspace(-12, 0, 2000)])
    vals = mod(grid)
    if np.any(np.diff(vals) < -1e-15):
        problems.append("not nondecreasing")
    a = rng.uniform(0, 1, samples)
    b = rng.uniform(0, 1, samples) * (1 - a)
    excess = mod(a + b) - mod(a) - mod(b)
    worst = float(excess.max())
    if worst > 1e-12:
        problems.append(f"subadditivity fails by {worst:.3g}")
    return AuditReport(not problems, worst, samples, "; ".join(problems))
