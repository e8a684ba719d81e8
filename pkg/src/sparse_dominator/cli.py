"""Command-line experiment runner and certificate verifier.

    sparse-dominator <command> --config <path> [--out <dir>]

Exit codes: 0 success, 1 verification failure, 2 configuration or parse error.
"""

from __future__ import annotations

import argparse
import configparser
import io
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import function as fn
from .domination import (certificate_from_text, certificate_to_text, check_domination, cz_decompose,
                         global_dominate, replay_certificate)
from .errors import SparseDominatorError
from .grid import MAX_LEVEL, Cube, best_enclosing, dilate
from .operators import compare_maximal, dini_norm, get_kernel, holder, lipschitz, log_power
from .sparse import (SparseFamily, decomposition_excess, family_from_text, family_to_text, random_family,
                     three_grid_decompose, verify_sparse)
from .weights import admissible_alpha, sweep_csv, weight_sweep

log = logging.getLogger("sparse_dominator")

COMMANDS = ("dominate", "verify-certificate", "maximal-compare", "weights-sweep", "grid-decompose", "selftest")
FUNCTIONS = ("indicator", "spike", "random_step", "bump", "constant")


class ConfigError(Exception):
    """Invalid or missing configuration value; the message names the field."""


# -- configuration ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    kernel: str = "hilbert"
    dimension: int = 1
    level: int = 10
    window_lo: tuple[Fraction, ...] = (Fraction(0),)
    window_side: Fraction = Fraction(1)
    r: float = 1.0
    rings: int = 1
    seed: int = 0
    max_depth: int = 64
    function: dict = field(default_factory=lambda: {"name": "indicator"})
    maximal: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    decompose: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def window(self, level: int | None = None) -> Cube:
        level = self.level if level is None else level
        scale = 2**level
        corner = []
        for v in self.window_lo:
            c = v * scale
            if c.denominator != 1:
                raise ConfigError(f"experiment.window: corner {v} is not on the 2^-{level} lattice")
            corner.append(int(c))
        side = self.window_side * scale
        if side.denominator != 1 or side < 1:
            raise ConfigError(f"experiment.window: side {self.window_side} is not a positive multiple of 2^-{level}")
        return Cube(tuple(corner), int(side), level)


def _get(section: configparser.SectionProxy | None, key: str, conv: Callable, default, name: str):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"{name}.{key}: cannot parse {raw!r} ({exc})") from exc


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        cp.read_string(text, source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {p}: {exc}") from exc
    cfg.base_dir = p.parent
    ex = cp["experiment"] if cp.has_section("experiment") else None
    cfg.kernel = _get(ex, "kernel", str, cfg.kernel, "experiment")
    cfg.dimension = _get(ex, "dimension", int, cfg.dimension, "experiment")
    cfg.level = _get(ex, "level", int, cfg.level, "experiment")
    cfg.r = _get(ex, "r", float, cfg.r, "experiment")
    cfg.rings = _get(ex, "rings", int, cfg.rings, "experiment")
    cfg.seed = _get(ex, "seed", int, cfg.seed, "experiment")
    cfg.max_depth = _get(ex, "max_depth", int, cfg.max_depth, "experiment")
    if ex is not None and "window" in ex:
        parts = ex["window"].split()
        try:
            lo = tuple(Fraction(v) for v in parts[0].split(","))
            side = Fraction(parts[1])
        except (IndexError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"experiment.window: expected 'lo[,lo2] side', got {ex['window']!r}") from exc
        cfg.window_lo, cfg.window_side = lo, side
    else:
        cfg.window_lo = (Fraction(0),) * cfg.dimension
    for name in ("function", "maximal", "weights", "decompose", "verify"):
        if cp.has_section(name):
            setattr(cfg, name, dict(cp[name]))
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.dimension not in (1, 2):
        raise ConfigError(f"experiment.dimension must be 1 or 2, got {cfg.dimension}")
    if not 0 <= cfg.level <= MAX_LEVEL:
        raise ConfigError(f"experiment.level must lie in [0, {MAX_LEVEL}], got {cfg.level}")
    if not cfg.r >= 1:
        raise ConfigError(f"experiment.r must be >= 1, got {cfg.r}")
    if cfg.rings < 0:
        raise ConfigError(f"experiment.rings must be >= 0, got {cfg.rings}")
    if cfg.max_depth < 0:
        raise ConfigError(f"experiment.max_depth must be >= 0, got {cfg.max_depth}")
    if len(cfg.window_lo) != cfg.dimension:
        raise ConfigError(f"experiment.window: corner has {len(cfg.window_lo)} coordinates, dimension is {cfg.dimension}")
    try:
        get_kernel(cfg.kernel, cfg.dimension)
    except KeyError as exc:
        raise ConfigError(f"experiment.kernel: {exc.args[0]}") from exc
    name = cfg.function.get("name", "indicator")
    if name not in FUNCTIONS:
        raise ConfigError(f"function.name must be one of {', '.join(FUNCTIONS)}, got {name!r}")
    cfg.window()


def make_function(cfg: ExperimentConfig, window: Cube, seed: int | None = None,
                  coarse_level: int | None = None) -> fn.GridFunction:
    """Named test function on ``window``; random functions draw from PCG64 seeded by the config seed."""
    sec = cfg.function
    name = sec.get("name", "indicator")
    height = _get(sec, "height", float, 1.0, "function")
    seed = cfg.seed if seed is None else seed
    if name == "indicator":
        return fn.indicator(window, window, height)
    if name == "constant":
        return fn.constant(window, height)
    if name == "spike":
        default = tuple(c + window.side // 2 for c in window.corner)
        cell = _get(sec, "cell", _ints, list(default), "function")
        if len(cell) != window.n or not window.contains_cells(np.array(cell)).all():
            raise ConfigError(f"function.cell {cell} is not a cell of the window")
        return fn.spike(window, cell, height)
    if name == "random_step":
        pieces = _get(sec, "pieces", int, 16, "function")
        coarse = _get(sec, "coarse_level", int, min(8, window.level), "function")
        coarse = coarse if coarse_level is None else coarse_level
        if coarse > window.level:
            raise ConfigError("function.coarse_level exceeds experiment.level")
        return fn.random_step(window, seed, pieces, coarse)
    return fn.bump(window)


# -- output helpers -----------------------------------------------------------

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


# -- commands -----------------------------------------------------------------

SUMMARY_COLUMNS = ("cells", "C_emp", "C_T", "ratio", "depth", "family_size")


def cmd_dominate(cfg: ExperimentConfig, out: Path) -> int:
    T = get_kernel(cfg.kernel, cfg.dimension)
    q0 = cfg.window()
    f = make_function(cfg, q0)
    res = global_dominate(T, f, cfg.rings, cfg.r, q0, cfg.max_depth)
    cert = res.certificate
    replay = replay_certificate(cert, T, f)
    check = check_domination(T, f, res.family, res.c_emp, res.window, cfg.r)
    sparse_ok = verify_sparse(res.family).ok and verify_sparse(res.local_family).ok
    c_t = cert.constants.c_t
    ratio = res.c_emp / c_t if c_t > 0 else None
    write_atomic(out / "function.txt", fn.to_text(f))
    write_atomic(out / "family.txt", family_to_text(res.family))
    write_atomic(out / "certificate.json", certificate_to_text(cert))
    write_atomic(out / "summary.csv", csv_text(SUMMARY_COLUMNS, [
        (res.window.cell_count(), res.c_emp, c_t, ratio, cert.depth, len(res.family))]))
    print(f"C_emp={res.c_emp!r} C_T={c_t!r} nodes={sum(1 for _ in cert.nodes())} family={len(res.family)}")
    print(f"replay {'ok' if replay.ok else 'FAILED'}; domination on {res.window}: "
          f"{'ok' if check.ok else 'FAILED'} (worst ratio {check.worst_ratio:.6g}); "
          f"sparseness {'ok' if sparse_ok else 'FAILED'}")
    if not replay.ok:
        print(f"first violation: {replay.violations[0]}")
    return 0 if replay.ok and check.ok and sparse_ok else 1


def cmd_verify_certificate(cfg: ExperimentConfig, out: Path, paths: Sequence[str]) -> int:
    cert_path = Path(paths[0]) if paths else None
    func_path = Path(paths[1]) if len(paths) > 1 else None
    if cert_path is None:
        cert_path = cfg.base_dir / cfg.verify["certificate"] if "certificate" in cfg.verify else out / "certificate.json"
    if func_path is None:
        func_path = cfg.base_dir / cfg.verify["function"] if "function" in cfg.verify else cert_path.parent / "function.txt"
    try:
        cert = certificate_from_text(cert_path.read_text())
        f = fn.from_text(func_path.read_text())
        T = get_kernel(cert.kernel, cert.n)
    except OSError as exc:
        raise ConfigError(f"cannot read {exc.filename}: {exc.strerror}") from exc
    except (ValueError, KeyError, SparseDominatorError) as exc:
        raise ConfigError(f"cannot parse inputs: {exc}") from exc
    report = replay_certificate(cert, T, f)
    if report.ok:
        print(f"certificate ok: {report.nodes} nodes replayed, C_emp={cert.c_emp!r}")
        return 0
    print(f"certificate FAILED: {len(report.violations)} violation(s)")
    print(f"first violating node: {report.violations[0]}")
    return 1


MAXIMAL_COLUMNS = ("level", "seed", "cell", "M_T", "M", "T_star", "residual")


def cmd_maximal_compare(cfg: ExperimentConfig, out: Path) -> int:
    sec = cfg.maximal
    levels = _get(sec, "levels", _ints, [cfg.level], "maximal")
    count = _get(sec, "count", int, 1, "maximal")
    family = _get(sec, "family", str, "shifted", "maximal")
    cells_mode = _get(sec, "cells_csv", str, "first", "maximal")
    tolerance = _get(sec, "tolerance", float, 0.2, "maximal")
    if cells_mode not in ("first", "all", "none"):
        raise ConfigError("maximal.cells_csv must be first, all or none")
    if count < 1:
        raise ConfigError("maximal.count must be >= 1")
    T = get_kernel(cfg.kernel, cfg.dimension)
    coarse = min(levels)
    results = []
    cell_rows = []
    for level in levels:
        q0 = cfg.window(level)
        cells = dilate(q0, 3).cells()
        kappas = []
        for i in range(count):
            seed = cfg.seed + i
            f = make_function(cfg, q0, seed, coarse_level=min(coarse, _get(cfg.function, "coarse_level", int, 8,
                                                                            "function")))
            cmp_ = compare_maximal(T, f, cells, family)
            kappas.append(cmp_.kappa)
            if cells_mode == "all" or (cells_mode == "first" and i == 0):
                for k in range(len(cells)):
                    cell_rows.append((level, seed, ",".join(map(str, cells[k])) if cfg.dimension > 1 else
                                      int(cells[k, 0]), cmp_.m_t[k], cmp_.m[k], cmp_.t_star[k], cmp_.residual[k]))
            results.append((level, seed, cmp_))
        log.info("level %d: kappa %.6g", level, max(kappas))
    kappa = {lv: max(c.kappa for l2, _, c in results if l2 == lv) for lv in levels}
    k_max = max(kappa.values())
    # pointwise M_T <= kappa_max (dini + C_K) M + T*
    const = (T.dini() + T.size_constant) if not T.is_zero else 0.0
    pointwise = all(np.all(c.m_t <= k_max * const * c.m + c.t_star + 1e-12 * np.maximum(c.m_t, 1e-300))
                    for _, _, c in results)
    positive = [v for v in kappa.values() if v > 0]
    stable = not positive or (len(positive) == len(kappa) and max(positive) <= (1 + tolerance) * min(positive)
                              and min(positive) >= (1 - tolerance) * max(positive))
    finite = all(np.isfinite(v) for v in kappa.values())
    if cells_mode != "none":
        write_atomic(out / "maximal_cells.csv", csv_text(MAXIMAL_COLUMNS, cell_rows))
    rows = [(lv, count, kappa[lv]) for lv in levels] + [("max", len(results), k_max)]
    write_atomic(out / "maximal_summary.csv", csv_text(("level", "functions", "kappa"), rows))
    for lv in levels:
        print(f"level {lv}: kappa = {kappa[lv]!r}")
    print(f"kappa_max = {k_max!r}; stable within {tolerance:.0%}: {stable}; pointwise bound: {pointwise}")
    return 0 if stable and finite and pointwise else 1


def _sweep_window(S: SparseFamily, level: int, n: int) -> Cube:
    cubes = [dilate(e.cube, 3) for e in S.entries]
    lo = [min(q.corner[a] for q in cubes) for a in range(n)]
    hi = [max(q.corner[a] + q.side for q in cubes) for a in range(n)]
    return Cube(tuple(lo), max(h - l for l, h in zip(lo, hi)), level)


def cmd_weights_sweep(cfg: ExperimentConfig, out: Path) -> int:
    sec = cfg.weights
    p = _get(sec, "p", float, 2.0, "weights")
    r = _get(sec, "r", float, cfg.r, "weights")
    alphas = _get(sec, "alphas", _floats, [0.0], "weights")
    trials = _get(sec, "trials", int, 32, "weights")
    centre = _get(sec, "centre", _floats, None, "weights")
    if not p > 1 or not 1 <= r < p:
        raise ConfigError(f"weights: need 1 <= r < p, got p={p}, r={r}")
    lo, hi = admissible_alpha(p, r)
    for a in alphas:
        if not lo < a < hi:
            raise ConfigError(f"weights.alphas: {a} outside the admissible interval ({lo:g}, {hi:g})")
    if "family" in sec:
        try:
            S = family_from_text((cfg.base_dir / sec["family"]).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"weights.family: {exc}") from exc
    else:
        T = get_kernel(cfg.kernel, cfg.dimension)
        q0 = cfg.window()
        S = global_dominate(T, make_function(cfg, q0), cfg.rings, 1.0, q0, cfg.max_depth).family
    if not S.entries:
        raise ConfigError("weights: the sparse family is empty")
    window = _sweep_window(S, S.entries[0].cube.level, S.entries[0].cube.n)
    result = weight_sweep(S, window, alphas, p, r, centre=centre, trials=trials, seed=cfg.seed)
    write_atomic(out / "sweep.csv", sweep_csv(result))
    for row in result.rows:
        print(f"alpha={row.alpha:+.2f} [w]={row.ap_char:.6g} norm_lb={row.norm_lb:.6g} "
              f"diagnostic={row.diagnostic_ratio:.6g}")
    slope = "n/a" if result.slope is None else f"{result.slope:.4f}"
    print(f"slope {slope} (target <= {result.target + 0.15:g}); diagnostics {'ok' if result.diagnostics_ok else 'FAILED'}")
    return 0 if result.ok else 1


DECOMPOSE_COLUMNS = ("family", "cubes", "c", "target", "max_excess", "sparse_ok", "ok")


def cmd_grid_decompose(cfg: ExperimentConfig, out: Path) -> int:
    sec = cfg.decompose
    r = _get(sec, "r", float, cfg.r, "decompose")
    if not r >= 1:
        raise ConfigError(f"decompose.r must be >= 1, got {r}")
    q0 = cfg.window()
    rows = []
    ok_all = True
    if "family" in sec:
        try:
            families = [family_from_text((cfg.base_dir / sec["family"]).read_text())]
        except (OSError, ValueError) as exc:
            raise ConfigError(f"decompose.family: {exc}") from exc
    else:
        count = _get(sec, "families", int, 10, "decompose")
        cubes = _get(sec, "cubes", int, 50, "decompose")
        max_side = _get(sec, "max_side", int, max(1, q0.side // 8), "decompose")
        families = [random_family(q0, cubes, cfg.seed + i, Fraction(1, 8), max_side) for i in range(count)]
    n_funcs = _get(sec, "functions", int, 3, "decompose")
    for i, S in enumerate(families):
        dec = three_grid_decompose(S, r, q0.n)
        worst = -np.inf
        for k in range(n_funcs):
            f = fn.random_step(q0, cfg.seed + 1000 * i + k, 16, min(q0.level, 8))
            worst = max(worst, decomposition_excess(S, dec, f, r, _cover(S, q0)))
        sparse_ok = all(verify_sparse(s).ok for s in dec.families)
        ok = worst <= 1e-12 and sparse_ok and dec.constant <= dec.target * (1 + 1e-12)
        ok_all &= ok
        rows.append((i, len(S), dec.constant, dec.target, worst, sparse_ok, ok))
        if len(families) == 1:
            for s in dec.families:
                write_atomic(out / f"grid_{s.grid_tag}.txt", family_to_text(s, q0.n, q0.level))
    write_atomic(out / "decompose.csv", csv_text(DECOMPOSE_COLUMNS, rows))
    print(f"{len(rows)} families: {'all ok' if ok_all else 'FAILURES'}; "
          f"max c = {max(r_[2] for r_ in rows)!r} (target {rows[0][3]!r})")
    return 0 if ok_all else 1


def _cover(S: SparseFamily, q0: Cube) -> Cube:
    """A lattice window containing q0 and every cube of S."""
    cubes = [e.cube.lattice_hull() for e in S.entries] + [q0]
    lo = [min(q.corner[a] for q in cubes) for a in range(q0.n)]
    hi = [max(q.corner[a] + q.side for q in cubes) for a in range(q0.n)]
    return Cube(tuple(lo), max(h - l for l, h in zip(lo, hi)), q0.level)


def cmd_selftest(cfg: ExperimentConfig, out: Path) -> int:
    checks: list[tuple[str, bool]] = []
    checks.append(("dini t = 1", abs(dini_norm(lipschitz(1.0)) - 1) < 1e-6))
    checks.append(("dini sqrt t = 2", abs(dini_norm(holder(1.0, 0.5)) - 2) < 1e-6))
    try:
        dini_norm(log_power(1.0, 1.0, 1.0))
        checks.append(("dini 1/log(e/t) diverges", False))
    except SparseDominatorError:
        checks.append(("dini 1/log(e/t) diverges", True))
    q = Cube((0,), 16, 4)
    checks.append(("cz example", cz_decompose(np.arange(4).reshape(-1, 1), q, Fraction(1, 4)) == [Cube((0,), 8, 4)]))
    T = get_kernel("hilbert")
    f = fn.random_step(Cube((0,), 64, 6), cfg.seed, 8)
    res = global_dominate(T, f, 1, 1.0)
    checks.append(("replay", replay_certificate(res.certificate, T, f).ok))
    checks.append(("sparse", verify_sparse(res.family).ok and verify_sparse(res.local_family).ok))
    checks.append(("domination", check_domination(T, f, res.family, res.c_emp, res.window).ok))
    g, c = best_enclosing(Cube((5,), 3, 6))
    checks.append(("shifted containment", c.contains(Cube((5,), 3, 6)) and c.real_side() <= 6 * 3 / 64))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(ok for _, ok in checks) else 1


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparse-dominator", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("paths", nargs="*", help="verify-certificate: certificate file and function file")
    ap.add_argument("--config", help="INI experiment configuration")
    ap.add_argument("--out", default=None, help="output directory (default: ./out)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out) if args.out else Path("out")
    try:
        if args.config is None and args.command not in ("selftest", "verify-certificate"):
            raise ConfigError(f"{args.command} needs --config")
        cfg = load_config(args.config)
        if args.command == "dominate":
            return cmd_dominate(cfg, out)
        if args.command == "verify-certificate":
            return cmd_verify_certificate(cfg, out, args.paths)
        if args.command == "maximal-compare":
            return cmd_maximal_compare(cfg, out)
        if args.command == "weights-sweep":
            return cmd_weights_sweep(cfg, out)
        if args.command == "grid-decompose":
            return cmd_grid_decompose(cfg, out)
        return cmd_selftest(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SparseDominatorError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
