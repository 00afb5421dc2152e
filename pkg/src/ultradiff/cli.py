"""Command-line front end: ``ultradiff run CONFIG`` and single-task subcommands.

Configuration files are INI files read with :mod:`configparser`; every value
is a Python literal such as ``degrees = [2, 3, 2]``.  Rationals are written
as strings, for example ``levy_a = {-2: "1/16", -1: "1/4"}``.

Exit codes: 0 success, 1 a configured assertion failed, 2 invalid
configuration, 3 a size cap was exceeded.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .converge import (ConvergenceReport, check_stable, converge_ft41, converge_ft43,
                       converge_ft46, converge_ft47, ft43_limit_measure)
from .hierlap import (ChoiceFunction, LocallyConstantFunction, SpectralError, SpectralModel,
                      heat_profile, taibleson_eigenvalues)
from .randwalk import (FT41, FT43, FT46, FT47, KINDS, OUTSIDE, WalkError, boundary_energy,
                       boundary_generator, build_kernel, dirichlet_energy, first_passage,
                       harmonic_measure, hitting_frequencies, limit_distribution_ft47,
                       sample_boundary)
from .spherical import (LevyMeasureAnisotropic, LevySequence, MeasureError, heat_measure,
                        levy_khintchine_all, levy_to_eigenvalues, spherical_transform)
from .tree import LeveledTree, SizeCapError, TreeError, Vertex

EXIT_OK, EXIT_ASSERT, EXIT_SCHEMA, EXIT_CAP = 0, 1, 2, 3

SCHEMA = {
    "tree": {"mode", "degrees", "metric_base", "window", "size_cap"},
    "model": {"lambda", "choice", "levy_a", "levy_F", "alpha", "p"},
    "walk": {"kind", "p", "alpha", "truncation", "seed", "trajectories", "resolution"},
    "experiment": {"tasks", "theorem", "t", "n_range", "tolerance", "resolution", "kmin", "level"},
    "output": {"dir"},
}
TASKS = ("tree_info", "spectrum", "heat", "walk_exact", "walk_simulate", "naim", "converge", "stable")


class ConfigError(ValueError):
    """Schema violations, one message per offending key."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class AssertionFailure(RuntimeError):
    """A configured check did not hold."""


# -- configuration ----------------------------------------------------------------


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _rational(x, where: str, problems: list[str]):
    try:
        if isinstance(x, float):
            return Fraction(repr(x))
        return Fraction(x)
    except (TypeError, ValueError, ZeroDivisionError):
        problems.append(f"{where}: {x!r} is not a number")
        return None


@dataclass
class ExperimentConfig:
    """Validated configuration with the built tree, model and walk."""

    raw: dict
    path: str | None = None
    text: str = ""
    tree: LeveledTree | None = None
    model: SpectralModel | None = None
    levy: LevySequence | None = None
    measure: LevyMeasureAnisotropic | None = None
    walk: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    out: Path = Path(".")

    def get(self, section: str, key: str, default=None):
        return self.raw.get(section, {}).get(key, default)

    @property
    def seed(self) -> int:
        return int(self.walk.get("seed", 0))


def parse_config(text: str, path: str | None = None) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem found."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"unreadable configuration: {exc}"]) from None
    problems: list[str] = []
    raw: dict[str, dict[str, Any]] = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            problems.append(f"[{sec}]: unknown section")
            continue
        raw[sec] = {}
        for key, val in parser.items(sec):
            if key not in SCHEMA[sec]:
                problems.append(f"{sec}.{key}: unknown key")
                continue
            raw[sec][key] = _literal(val)
    cfg = ExperimentConfig(raw, path, text)
    if problems:
        raise ConfigError(problems)
    _build_tree(cfg, problems)
    if cfg.tree is not None:
        _build_model(cfg, problems)
        _build_walk(cfg, problems)
    _build_experiment(cfg, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def _build_tree(cfg: ExperimentConfig, problems: list[str]) -> None:
    sec = cfg.raw.get("tree")
    if sec is None:
        problems.append("[tree]: section is required")
        return
    mode = sec.get("mode", "compact")
    if mode not in ("compact", "noncompact"):
        problems.append(f"tree.mode: must be 'compact' or 'noncompact', got {mode!r}")
        return
    degrees = sec.get("degrees")
    window = sec.get("window")
    base = sec.get("metric_base")
    cap = sec.get("size_cap")
    kw = {} if cap is None else {"size_cap": int(cap)}
    try:
        if mode == "compact":
            if isinstance(degrees, int):
                if window is None:
                    problems.append("tree.window: required with a constant degree")
                    return
                degrees = [degrees] * (window[1] - window[0])
            if isinstance(degrees, dict):
                degrees = [degrees[k] for k in sorted(degrees)]
            if not isinstance(degrees, (list, tuple)):
                problems.append(f"tree.degrees: expected an integer, list or map, got {degrees!r}")
                return
            if window is not None and list(window) != [0, len(degrees)]:
                problems.append(f"tree.window: compact trees use [0, {len(degrees)}], got {window!r}")
                return
            cfg.tree = LeveledTree.compact(list(degrees), 2 if base is None else _rational(base, "tree.metric_base", problems), **kw)
        else:
            if window is None or len(window) != 2:
                problems.append("tree.window: [kmin, kmax] is required for non-compact trees")
                return
            window = (int(window[0]), int(window[1]))
            if isinstance(degrees, dict):
                extra = {} if base is None else {"metric_base": _rational(base, "tree.metric_base", problems)}
                cfg.tree = LeveledTree("noncompact", degrees, window, extra.get("metric_base", Fraction(2)), **kw)
            else:
                mb = None if base is None else _rational(base, "tree.metric_base", problems)
                cfg.tree = LeveledTree.noncompact(degrees, window, metric_base=mb, **kw)
    except TreeError as exc:
        problems.append(f"tree.degrees: {exc}")


def _level_map(value, where: str, problems: list[str]) -> dict | None:
    if not isinstance(value, dict):
        problems.append(f"{where}: expected a map level -> value")
        return None
    out = {}
    for k, v in value.items():
        r = _rational(v, f"{where}[{k}]", problems)
        if r is not None:
            out[int(k)] = r
    return out


def _build_model(cfg: ExperimentConfig, problems: list[str]) -> None:
    sec = cfg.raw.get("model", {})
    tree = cfg.tree
    given = [k for k in ("lambda", "choice", "levy_a") if k in sec]
    if "alpha" in sec and "p" in sec and "levy_a" not in sec:
        given.append("alpha/p")
    if len(given) > 1:
        problems.append(f"model: keys {', '.join(given)} are mutually exclusive")
        return
    try:
        if "lambda" in sec:
            lam = _level_map(sec["lambda"], "model.lambda", problems)
            if lam is not None:
                cfg.model = SpectralModel(tree, lam)
        elif "choice" in sec:
            ch = _level_map(sec["choice"], "model.choice", problems)
            if ch is not None:
                cfg.model = SpectralModel.from_choice(ChoiceFunction(tree, ch))
        elif "levy_a" in sec:
            a = _level_map(sec["levy_a"], "model.levy_a", problems)
            if a is not None:
                cfg.levy = LevySequence(tree, a)
                cfg.model = levy_to_eigenvalues(cfg.levy)
        elif "alpha" in sec and "p" in sec:
            cfg.model = taibleson_eigenvalues(int(sec["p"]), sec["alpha"], tree.window)
        if "levy_F" in sec:
            if cfg.levy is None:
                problems.append("model.levy_F: needs model.levy_a for the tails")
                return
            depth = None
            masses = {}
            for key, v in dict(sec["levy_F"]).items():
                digits = tuple(key) if isinstance(key, tuple) else tuple(int(c) for c in str(key))
                u = tree.vertex(digits)
                if depth is not None and u.level != depth:
                    problems.append(f"model.levy_F[{key}]: all addresses must have the same length")
                    return
                depth = u.level
                masses[u] = _rational(v, f"model.levy_F[{key}]", problems)
            if depth is None:
                problems.append("model.levy_F: needs at least one vertex address")
                return
            cfg.measure = LevyMeasureAnisotropic(cfg.levy, depth, masses)
    except (SpectralError, MeasureError, TreeError) as exc:
        problems.append(f"model: {exc}")


def _build_walk(cfg: ExperimentConfig, problems: list[str]) -> None:
    sec = dict(cfg.raw.get("walk", {}))
    if "kind" in sec and sec["kind"] not in KINDS:
        problems.append(f"walk.kind: must be one of {', '.join(KINDS)}, got {sec['kind']!r}")
    if "p" in sec:
        sec["p"] = _rational(sec["p"], "walk.p", problems)
    for key in ("seed", "trajectories", "truncation", "resolution"):
        if key in sec and not isinstance(sec[key], int):
            problems.append(f"walk.{key}: expected an integer, got {sec[key]!r}")
    if "seed" in sec and isinstance(sec["seed"], int) and not 0 <= sec["seed"] < 2 ** 64:
        problems.append("walk.seed: must be a 64-bit unsigned integer")
    cfg.walk = sec


def _build_experiment(cfg: ExperimentConfig, problems: list[str]) -> None:
    sec = dict(cfg.raw.get("experiment", {}))
    tasks = sec.get("tasks")
    if tasks is None:
        tasks = ["converge"] if "theorem" in sec else ["tree_info"]
    if isinstance(tasks, str):
        tasks = [tasks]
    for t in tasks:
        if t not in TASKS:
            problems.append(f"experiment.tasks: unknown task {t!r} (known: {', '.join(TASKS)})")
    sec["tasks"] = list(tasks)
    if "theorem" in sec and sec["theorem"] not in KINDS:
        problems.append(f"experiment.theorem: must be one of {', '.join(KINDS)}")
    if "n_range" in sec:
        nr = sec["n_range"]
        if not (isinstance(nr, (list, tuple)) and all(isinstance(n, int) for n in nr) and nr):
            problems.append("experiment.n_range: expected a non-empty list of integers")
    if "t" in sec:
        t = _rational(sec["t"], "experiment.t", problems)
        if t is not None and t <= 0:
            problems.append("experiment.t: must be positive")
        sec["t"] = t
    if "tolerance" in sec:
        try:
            sec["tolerance"] = float(sec["tolerance"])
        except (TypeError, ValueError):
            problems.append("experiment.tolerance: expected a number")
    cfg.experiment = sec
    cfg.out = Path(cfg.get("output", "dir", "."))


# -- output helpers ---------------------------------------------------------------


def fmt(x) -> str:
    """Locale-independent cell text: ``num/den`` for rationals, 17 significant digits for floats."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, complex):
        return f"{x.real:.17g}{x.imag:+.17g}j"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    if isinstance(x, Vertex):
        return f"{x.level}:{''.join(map(str, x.digits)) or '-'}"
    return str(x)


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(c) for c in r])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sup_error_svg(report: ConvergenceReport) -> str:
    """Line chart of ``log10`` sup error against ``n``."""
    sup = report.sup_errors()
    ns = sorted(sup)
    ys = [math.log10(max(sup[n], 1e-300)) for n in ns]
    w, h, pad = 480, 320, 40
    x0, x1 = min(ns), max(ns) if max(ns) > min(ns) else min(ns) + 1
    y0, y1 = min(ys), max(ys) if max(ys) > min(ys) else min(ys) + 1
    pts = " ".join(
        f"{pad + (n - x0) / (x1 - x0) * (w - 2 * pad):.2f},{h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad):.2f}"
        for n, y in zip(ns, ys))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">\n'
        f'<rect width="{w}" height="{h}" fill="white"/>\n'
        f'<polyline fill="none" stroke="black" points="{pts}"/>\n'
        f'<text x="{pad}" y="{pad - 10}" font-size="12">{report.theorem}: log10 sup error vs n '
        f'({x0}..{x1}, {y0:.2f}..{y1:.2f})</text>\n</svg>\n'
    )


def worker_count() -> int:
    env = os.environ.get("ULTRADIFF_THREADS")
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cpus))
        except ValueError:
            return 1
    return 1


# -- tasks -------------------------------------------------------------------------


@dataclass
class Context:
    cfg: ExperimentConfig
    out: Path
    svg: bool = False
    files: list[str] = field(default_factory=list)
    log: Callable[[str], None] = print

    def write(self, name: str, text: str) -> None:
        write_atomic(self.out / name, text)
        self.files.append(name)


def _model_for(cfg: ExperimentConfig) -> SpectralModel:
    if cfg.model is not None:
        return cfg.model
    kind = cfg.walk.get("kind")
    tree = cfg.tree
    if kind == FT41:
        # lambda_k = q_0 ... q_{k-1} = 1 / m_k, which is q^k for a constant degree
        return SpectralModel(tree, {k: 1 / tree.shell_mass(k) for k in range(tree.kmin, tree.kmax)})
    if kind == FT43:
        alpha = cfg.walk.get("alpha", 1)
        return taibleson_eigenvalues(tree.q(tree.kmin), alpha, tree.window)
    raise ConfigError(["model: no spectral model given and none implied by walk.kind"])


def _kernel_for(cfg: ExperimentConfig, truncation=None):
    kind = cfg.walk.get("kind")
    if kind is None:
        raise ConfigError(["walk.kind: required for this task"])
    # report the requested depth rather than the first level that overflows
    cfg.tree.check_size(cfg.tree.kmax if truncation is None else truncation)
    if kind == FT41:
        return build_kernel(FT41, cfg.tree, truncation, p=cfg.walk["p"])
    if kind == FT43:
        return build_kernel(FT43, cfg.tree, truncation, alpha=cfg.walk.get("alpha", 1))
    if kind == FT46:
        if cfg.levy is None:
            raise ConfigError(["model.levy_a: required for FT46 walks"])
        return build_kernel(FT46, truncation=truncation, levy=cfg.levy)
    if cfg.measure is None:
        raise ConfigError(["model.levy_F: required for FT47 walks"])
    return build_kernel(FT47, truncation=truncation, measure=cfg.measure)


def task_tree_info(ctx: Context) -> None:
    tree = ctx.cfg.tree
    rows = []
    for k in range(tree.kmin, tree.kmax + 1):
        q = tree.q(k) if k < tree.kmax else ""
        rows.append((k, q, tree.shell_mass(k), tree.check_size(k)))
    text = csv_text(["level", "degree", "ball_mass", "vertices"], rows)
    ctx.log(f"mode={tree.mode} window={list(tree.window)} metric_base={fmt(tree.metric_base)}")
    ctx.log(text.rstrip())
    ctx.write("tree.csv", text)


def task_spectrum(ctx: Context) -> None:
    cfg = ctx.cfg
    model = _model_for(cfg)
    tree = model.tree
    rows = [(k, model.lam(k)) for k in range(tree.kmin, tree.kmax)]
    text = csv_text(["k", "lambda"], rows)
    ctx.log(text.rstrip())
    ctx.write("spectrum.csv", text)
    if cfg.levy is not None:
        level = int(cfg.experiment.get("level", min(tree.kmax, tree.kmin + 4)))
        psi = levy_khintchine_all(cfg.measure or cfg.levy, level)
        ctx.write("lk.csv", csv_text(["char_index", "real", "imag"],
                                     [(j, float(z.real), float(z.imag)) for j, z in enumerate(psi)]))


def task_heat(ctx: Context, t=None) -> None:
    cfg = ctx.cfg
    model = _model_for(cfg)
    tree = model.tree
    t = cfg.experiment.get("t", Fraction(1)) if t is None else t
    prof = heat_profile(model, float(t))
    rows = [(k, float(d)) for k, d in zip(range(tree.kmin, tree.kmax), prof.shells)]
    rows.append((tree.kmax, prof.center))
    text = csv_text(["k", "density"], rows)
    ctx.log(text.rstrip())
    ctx.log(f"mass={prof.mass:.17g} tail_bound={prof.tail_bound:.3g}")
    ctx.write("heat.csv", text)
    mu = heat_measure(model, float(t), tree.kmax)
    ctx.write("transform.csv", csv_text(["k", "value"],
                                        [(k, float(spherical_transform(mu, k)))
                                         for k in range(tree.kmin + 1, tree.kmax + 1)]))
    tol = cfg.experiment.get("tolerance")
    if tol is not None and abs(prof.mass - 1) > tol:
        raise AssertionFailure(f"heat mass {prof.mass} differs from 1 by more than {tol}")


def task_walk_exact(ctx: Context) -> None:
    cfg = ctx.cfg
    kernel = _kernel_for(cfg, cfg.walk.get("truncation"))
    table = first_passage(kernel)
    rows = list(table.rows())
    text = csv_text(["vertex", "F_up", "F_down", "G_self", "G_to_root"], rows)
    ctx.write("first_passage.csv", text)
    seen = set()
    ctx.log("level,G_to_root (first vertex of each level)")
    for u, *_, g in rows:
        if u.level not in seen:
            seen.add(u.level)
            ctx.log(f"{u.level},{fmt(g)}")
    if kernel.kind == FT41:
        q = (1 - kernel.p) / kernel.p
        bad = [u for u, *_, g in rows if g != q ** (1 - u.level) / (q - 1)]
        if bad:
            raise AssertionFailure(f"G(v, o) differs from q^(1-k)/(q-1) at {bad[:3]}")


def _simulate_chunk(args):
    kernel, table, start, n, seed, lo, hi = args
    return sample_boundary(kernel, table, start, n, seed, hi - lo, first_index=lo)


def task_walk_simulate(ctx: Context) -> None:
    cfg = ctx.cfg
    kernel = _kernel_for(cfg)
    tree = kernel.tree
    n = int(cfg.walk.get("resolution", min(kernel.deepest_level(), tree.kmin + 4)))
    trajectories = int(cfg.walk.get("trajectories", 10 ** 4))
    seed = cfg.seed
    table = first_passage(kernel)
    if kernel.kind in (FT46, FT47):
        start = tree.origin(n - 1)
        exact = limit_distribution_ft47(kernel, n)
    else:
        start = tree.root() if tree.compact_mode else tree.origin(max(tree.kmin, min(0, n - 1)))
        if not tree.compact_mode:
            raise ConfigError(["walk.kind: simulation of FT43 needs a compact reference; use FT41/46/47"])
        exact = {u: harmonic_measure(table, u) for u in tree.enumerate_level(n)}
    workers = worker_count()
    bounds = np.linspace(0, trajectories, workers + 1).astype(int)
    chunks = [(kernel, table, start, n, seed, int(lo), int(hi)) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_simulate_chunk, chunks))
    else:
        parts = [_simulate_chunk(c) for c in chunks]
    samples = [s for part in parts for s in part]
    counts = hitting_frequencies(samples, tree, n)
    rows, worst = [], 0.0
    keys = [u for u in tree.enumerate_level(n) if u in exact] + ([OUTSIDE] if OUTSIDE in exact else [])
    for u in keys:
        pe = exact[u]
        pm = counts.get(u, 0) / trajectories
        se = math.sqrt(max(float(pe) * (1 - float(pe)), 1e-300) / trajectories)
        worst = max(worst, abs(pm - float(pe)) / se if pe else (0.0 if pm == 0 else math.inf))
        rows.append((u, pe, pm, se))
    ctx.write("hitting.csv", csv_text(["vertex", "mass_exact", "mass_mc", "stderr"], rows))
    ctx.log(f"trajectories={trajectories} seed={seed} max |z| = {worst:.3f}")
    if worst > 3 * 1.0 and cfg.experiment.get("tolerance") is not None:
        raise AssertionFailure(f"Monte Carlo frequencies off by {worst:.2f} standard errors")


def task_naim(ctx: Context) -> None:
    cfg = ctx.cfg
    kernel = _kernel_for(cfg)
    if kernel.kind != FT41:
        raise ConfigError(["walk.kind: the Naim task needs an FT41 walk"])
    tree = kernel.tree
    n = int(cfg.walk.get("resolution", tree.kmax))
    table = first_passage(kernel)
    gen = boundary_generator(table, n)
    rows = []
    ok = True
    for k in range(0, n):
        v = tree.origin(k)
        u = tree.children(v)[0]
        f = LocallyConstantFunction.eigenfunction(tree, v, u, n).values
        g = gen.dot(f)
        idx = int(np.flatnonzero(f != 0)[0])
        lam = g[idx] / f[idx]
        inv = 1 / table.green_to_root(v)
        ok &= lam == inv and all(g == lam * f)
        rows.append((v, lam, inv))
    ctx.write("naim.csv", csv_text(["vertex", "eigenvalue", "inverse_green"], rows))
    ctx.log(csv_text(["vertex", "eigenvalue", "inverse_green"], rows).rstrip())
    killed = first_passage(kernel, killed=n)
    energy_rows = []
    for k in range(0, n):
        v = tree.origin(k)
        u = tree.children(v)[0]
        f = LocallyConstantFunction.eigenfunction(tree, v, u, n).values
        fb = dict(zip(tree.enumerate_level(n), f))
        energy_rows.append((v, dirichlet_energy(killed, fb), boundary_energy(killed, fb)))
    ctx.write("energy.csv", csv_text(["function", "network_energy", "boundary_energy"], energy_rows))
    if not ok:
        raise AssertionFailure("boundary generator eigenvalues differ from 1/G(v,o)")
    if any(a != b for _, a, b in energy_rows):
        raise AssertionFailure("network and boundary energies differ")


def _n_range(cfg: ExperimentConfig, default):
    nr = cfg.experiment.get("n_range")
    return list(default) if nr is None else list(nr)


def task_converge(ctx: Context, theorem: str | None = None) -> None:
    cfg = ctx.cfg
    thm = theorem or cfg.experiment.get("theorem") or cfg.walk.get("kind")
    t = cfg.experiment.get("t", Fraction(1))
    if thm == FT41:
        p = cfg.walk.get("p")
        if p is None:
            raise ConfigError(["walk.p: required for FT41"])
        rep = converge_ft41(p, t, _n_range(cfg, range(2, 9)), cfg.tree.q(0))
    elif thm == FT43:
        tree = cfg.tree
        alpha = cfg.walk.get("alpha", cfg.get("model", "alpha", 1))
        rep = converge_ft43(tree.q(tree.kmin), alpha, _n_range(cfg, range(1, 6)),
                            int(cfg.experiment.get("kmin", tree.kmin)), t)
    elif thm == FT46:
        if cfg.levy is None:
            raise ConfigError(["model.levy_a: required for FT46"])
        rep = converge_ft46(cfg.levy, t, _n_range(cfg, range(cfg.tree.kmin + 1, cfg.tree.kmax)))
    elif thm == FT47:
        src = cfg.measure or cfg.levy
        if src is None:
            raise ConfigError(["model.levy_F or model.levy_a: required for FT47"])
        rep = converge_ft47(src, t, _n_range(cfg, range(cfg.tree.kmin + 1, cfg.tree.kmax)),
                            cfg.experiment.get("level"))
    else:
        raise ConfigError([f"experiment.theorem: unknown theorem {thm!r}"])
    ctx.write("converge.csv", rep.to_csv())
    sup = rep.sup_errors()
    for n in sorted(sup):
        ctx.log(f"{thm} n={n} sup_error={sup[n]:.6g}")
    if ctx.svg:
        ctx.write("converge.svg", sup_error_svg(rep))
    tol = cfg.experiment.get("tolerance")
    if tol is not None:
        top = max(sup)
        if sup[top] > tol:
            raise AssertionFailure(f"{thm}: sup error {sup[top]:.3g} at n={top} exceeds tolerance {tol}")
        if not rep.errors_decrease(1 if len(sup) < 3 else 2):
            raise AssertionFailure(f"{thm}: sup error does not decrease over the sweep")
    if thm == FT41 and t == 1 and not rep.flags.get("k1_monotone_from_below", True):
        raise AssertionFailure("FT41: k=1 powers are not increasing towards exp(-1) from below")


def task_stable(ctx: Context) -> None:
    cfg = ctx.cfg
    tree = cfg.tree
    p = tree.q(tree.kmin)
    alpha = cfg.get("model", "alpha", cfg.walk.get("alpha", 1))
    mu = ft43_limit_measure(p, alpha, tree.window, float(cfg.experiment.get("t", 1)))
    rep = check_stable(alpha, p, mu)
    rows = [(s, xi, y, rep.c * xi ** float(alpha)) for s, xi, y in zip(rep.shells, rep.norms, rep.exponents)]
    ctx.write("stable.csv", csv_text(["shell", "norm", "minus_log_transform", "fitted"], rows))
    ctx.log(f"c={rep.c:.12g} residual={rep.residual:.3g} shells={len(rep.shells)}")
    tol = cfg.experiment.get("tolerance")
    if tol is not None and not rep.passed(tol):
        raise AssertionFailure(f"stable fit residual {rep.residual:.3g} exceeds tolerance {tol}")


TASK_FUNCS = {
    "tree_info": task_tree_info, "spectrum": task_spectrum, "heat": task_heat,
    "walk_exact": task_walk_exact, "walk_simulate": task_walk_simulate, "naim": task_naim,
    "converge": task_converge, "stable": task_stable,
}


# -- driver ------------------------------------------------------------------------


def _load(path: str, args) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    cfg = parse_config(text, path)
    if getattr(args, "seed", None) is not None:
        cfg.walk["seed"] = args.seed
    if getattr(args, "tolerance", None) is not None:
        cfg.experiment["tolerance"] = args.tolerance
    if getattr(args, "out", None) is not None:
        cfg.out = Path(args.out)
    return cfg


def _manifest(ctx: Context, status: str, runtime: float) -> str:
    cfg = ctx.cfg
    data = {
        "config": cfg.path,
        "config_sha256": hashlib.sha256(cfg.text.encode("utf-8")).hexdigest(),
        "seed": cfg.seed,
        "status": status,
        "files": sorted(set(ctx.files)),
        "versions": {"ultradiff": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "runtime_seconds": round(runtime, 3),
    }
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _execute(args, tasks: list[tuple[Callable, dict]]) -> int:
    start = time.perf_counter()
    try:
        cfg = _load(args.config, args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_SCHEMA
    ctx = Context(cfg, cfg.out, getattr(args, "svg", False))
    if not tasks:
        tasks = [(TASK_FUNCS[name], {}) for name in cfg.experiment["tasks"]]
    status, code = "ok", EXIT_OK
    try:
        for fn, kw in tasks:
            fn(ctx, **kw)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        status, code = "config error", EXIT_SCHEMA
    except SizeCapError as exc:
        print(f"size cap exceeded: {exc}", file=sys.stderr)
        status, code = "size cap", EXIT_CAP
    except AssertionFailure as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        status, code = "assertion failed", EXIT_ASSERT
    except (TreeError, SpectralError, MeasureError, WalkError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status, code = "config error", EXIT_SCHEMA
    ctx.write("manifest.json", _manifest(ctx, status, time.perf_counter() - start))
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ultradiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="64-bit seed (overrides walk.seed)")
        p.add_argument("--tolerance", type=float, help="assertion tolerance (overrides experiment.tolerance)")
        p.add_argument("--svg", action="store_true", help="also write SVG charts")
        return p

    common(sub.add_parser("run", help="run the tasks listed in the configuration"))
    tree = sub.add_parser("tree").add_subparsers(dest="tree_command", required=True)
    common(tree.add_parser("info", help="levels, degrees and ball masses"))
    common(sub.add_parser("spectrum", help="eigenvalue table"))
    heat = common(sub.add_parser("heat", help="heat density per shell"))
    heat.add_argument("--t", type=float, help="time (overrides experiment.t)")
    walk = sub.add_parser("walk").add_subparsers(dest="walk_command", required=True)
    common(walk.add_parser("exact", help="hitting probabilities and Green function"))
    common(walk.add_parser("simulate", help="Monte Carlo boundary hits"))
    common(sub.add_parser("naim", help="boundary generator spectrum and energies"))
    conv = common(sub.add_parser("converge", help="convergence sweep for one theorem"))
    conv.add_argument("theorem", choices=KINDS)
    common(sub.add_parser("stable", help="stable-law fit of the FT43 limit"))
    return parser


def main(argv: list[str] | None = None) -> int:
    # argparse wants positional theorem before the config for "converge"
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if len(argv) >= 3 and argv[0] == "converge" and argv[1] in KINDS:
        argv = ["converge", argv[2], argv[1]] + argv[3:]
    args = parser.parse_args(argv)
    cmd = args.command
    if cmd == "run":
        tasks = []
    elif cmd == "tree":
        tasks = [(task_tree_info, {})]
    elif cmd == "spectrum":
        tasks = [(task_spectrum, {})]
    elif cmd == "heat":
        tasks = [(task_heat, {"t": args.t})]
    elif cmd == "walk":
        tasks = [(task_walk_exact if args.walk_command == "exact" else task_walk_simulate, {})]
    elif cmd == "naim":
        tasks = [(task_naim, {})]
    elif cmd == "converge":
        tasks = [(task_converge, {"theorem": args.theorem})]
    else:
        tasks = [(task_stable, {})]
    return _execute(args, tasks)


if __name__ == "__main__":
    sys.exit(main())
