"""Experiment orchestration: constants, solve, sweep, verify and bench."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .bubbles import (BubbleSpec, bubble_nehari_defect, critical_constants, projected_bubble_energy,
                      riesz_potential_radial, sphere_area)
from .bubbles import _gauss_on, _panels
from .config import RunConfig
from .diagnostics import barycenter_localization_check, multiplicity_verdict
from .energy import ChoquardParams, EnergyEvaluator, critical_exponent
from .grid import DomainSpec, Field, build_grid, dump_field
from .linalg import operator_solver, solve_operator
from .persistence import RunManifest, atomic_write_bytes, output_root, write_csv
from .riesz import RieszKernel
from .solver import eps_sweep, multistart, nearest_class_pair, path_minmax


# -- constants --------------------------------------------------------------

def _frac(x: float) -> str:
    f = Fraction(x).limit_denominator(1000)
    return str(f) if abs(float(f) - x) < 1e-12 else repr(x)


def run_constants(N: int, mu: float, quad_points: int = 8) -> str:
    """Human-readable table of the whole-space constants for (N, mu)."""
    c = critical_constants(N, mu, quad_points)
    crit = critical_exponent(N, mu)
    lines = [
        f"N = {N}",
        f"mu = {mu:g}",
        f"2mu* = {_frac(crit)}",
        f"m_star formula exponent 2mu*/(2mu*-1) = {_frac(c.m_star_exponent)}",
        f"int |grad U_1|^2 = {c.grad_U1_sq!r}",
        f"D_crit(U_1) = {c.d_crit_U1!r}",
        f"S_HL = {c.S_HL!r}",
        f"m_star = {c.m_star!r}",
        f"m_star (projected bubble, R=3 quadrature) = {projected_bubble_energy(N, mu)!r}",
        f"t_star(U_1) = {c.t_star_U1!r}",
        f"bubble_nehari_defect = {bubble_nehari_defect(c)!r}",
        f"quadrature refinement change = {c.refinement_change:.3e}",
    ]
    return "\n".join(lines) + "\n"


# -- verify -----------------------------------------------------------------

VERIFY_COLUMNS = ("check", "value", "tolerance", "passed", "detail")


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.value < self.tolerance)

    def row(self):
        return [self.name, float(self.value), float(self.tolerance), self.passed, self.detail]


def check_fft_direct(singular_cell: str = "average", seed: int = 0) -> Check:
    """FFT against direct Riesz convolution for random fields on 16^2 and 8^3 node grids."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, nodes, mu in ((2, 16, 1.0), (3, 8, 1.5)):
        # a unit box at resolution r has r + 1 nodes per side, the outer ones pinned
        spec = DomainSpec.box((0.0,) * n, (1.0,) * n, r_margin=0.1)
        g = _raw_grid(spec, nodes)
        k = RieszKernel(g, mu, singular_cell)
        f = Field(g, rng.standard_normal(g.shape))
        a = k.convolve_array(f.values)
        b = k.convolve_direct_array(f.values)
        worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    return Check("fft_vs_direct", worst, 1e-10, "max relative error, 16^2 and 8^3 grids")


def _raw_grid(spec: DomainSpec, nodes: int):
    """Box grid with ``nodes`` nodes per side, bypassing the feature-size rule."""
    from .grid import Grid
    n = spec.n
    h = tuple((hi - lo) / (nodes - 1) for lo, hi in zip(spec.lo, spec.hi))
    shape = (nodes,) * n
    interior = np.zeros(shape, bool)
    interior[(slice(1, -1),) * n] = True
    return Grid(n=n, shape=shape, h=h, origin=tuple(spec.lo), mask=interior)


def random_positive_field(grid, rng, modes: int = 3) -> Field:
    """Smooth positive field: a few random sine modes plus a positive bump."""
    X = grid.coordinates()
    lo = np.asarray(grid.origin)
    ext = np.asarray(grid.h) * (np.asarray(grid.shape) - 1)
    t = (X - lo) / ext
    v = np.ones(grid.shape) * 0.5
    for _ in range(modes):
        k = rng.integers(1, 4, size=grid.n)
        v += rng.uniform(-0.3, 0.3) * np.prod(np.sin(math.pi * k * t), axis=-1)
    v *= np.prod(np.sin(math.pi * t), axis=-1)
    return Field(grid, np.maximum(v, 0.0) * rng.uniform(0.5, 2.0))


def check_gradient_fd(singular_cell: str = "average", pairs: int = 20, seed: int = 1) -> Check:
    """Central finite differences of the energy against <gradient, phi>."""
    rng = np.random.default_rng(seed)
    spec = DomainSpec.ball((0.0, 0.0), 1.0)
    g = build_grid(spec, 12)
    k = RieszKernel(g, 1.0, singular_cell)
    worst = 0.0
    for i in range(pairs):
        eps = float(rng.uniform(0.05, 1.0))
        lam = float(rng.choice([0.0, 1.0]))
        ev = EnergyEvaluator(g, ChoquardParams.from_eps(3, 1.0, lam, eps), k)
        u = random_positive_field(g, rng).values + 0.2 * g.mask
        phi = np.where(g.mask, rng.standard_normal(g.shape), 0.0)
        lin = ev.cell * math.fsum((ev.gradient(u) * phi)[g.mask])
        t = 1e-5
        fd = (ev.energy_value(u + t * phi) - ev.energy_value(u - t * phi)) / (2 * t)
        scale = max(abs(lin), abs(fd))
        worst = max(worst, abs(fd - lin) / scale)
    return Check("gradient_fd", worst, 1e-6, f"{pairs} random (u, phi) pairs")


def check_nehari_projection(singular_cell: str = "average", fields: int = 100, seed: int = 2) -> list[Check]:
    rng = np.random.default_rng(seed)
    spec = DomainSpec.annulus((0.0, 0.0), 0.4, 1.0)
    g = build_grid(spec, 27)
    k = RieszKernel(g, 1.0, singular_cell)
    e_t1 = e_scale = e_res = 0.0
    for i in range(fields):
        params = ChoquardParams.from_eps(3, 1.0, float(rng.choice([0.0, 0.5])), float(rng.uniform(0.05, 1.0)))
        ev = EnergyEvaluator(g, params, k)
        u = random_positive_field(g, rng).values
        t = ev.t_projection(u)
        pu = t * u
        e_t1 = max(e_t1, abs(ev.t_projection(pu) - 1.0))
        c = float(rng.uniform(0.1, 10.0))
        pc = ev.t_projection(c * u) * c * u
        e_scale = max(e_scale, float(np.max(np.abs(pc - pu)) / np.max(np.abs(pu))))
        norm = ev.norm_sq(pu)
        e_res = max(e_res, abs(norm - ev.d_term(pu)) / norm)
    return [Check("nehari_t_equals_one", e_t1, 1e-12, f"{fields} fields"),
            Check("nehari_scale_invariance", e_scale, 1e-10, f"{fields} fields"),
            Check("nehari_residual", e_res, 1e-12, f"{fields} fields")]


def check_bubble_constants() -> list[Check]:
    out = []
    for N, mu in ((3, 1.0), (4, 2.0)):
        c = critical_constants(N, mu)
        rel = abs(c.m_star - projected_bubble_energy(N, mu)) / c.m_star
        out.append(Check(f"m_star_consistency_N{N}_mu{mu:g}", rel, 1e-6,
                         f"m_star={c.m_star!r} defect={bubble_nehari_defect(c)!r}"))
        out.append(Check(f"quadrature_refinement_N{N}_mu{mu:g}", c.refinement_change, 1e-6, "q=8 vs q=16"))
    return out


def bubble_d_term_error(singular_cell: str = "average", res: int = 12, mu: float = 2.0) -> float:
    """Relative error of the grid D_crit of a 3D bubble restricted to B_2
    against the radial quadrature of the same integral."""
    N = 3
    p = critical_exponent(N, mu)
    b = BubbleSpec(N, 1.0)
    radius = 2.0

    def f(r):
        return np.where(r < radius, b.radial(r) ** p, 0.0)

    r_out, w_out = _gauss_on(_panels(radius), 16)
    pot = riesz_potential_radial(f, N, mu, r_out, 16, radius)
    exact = sphere_area(N) * math.fsum(w_out * f(r_out) * r_out ** (N - 1) * pot)
    g = build_grid(DomainSpec.ball((0.0,) * N, radius), res)
    k = RieszKernel(g, mu, singular_cell)
    v = np.where(g.mask, b.radial(np.linalg.norm(g.coordinates(), axis=-1)) ** p, 0.0)
    d = g.cell_volume * math.fsum((k.convolve_array(v) * v)[g.mask])
    return abs(d - exact) / exact


def check_bubble_d_term(singular_cell: str = "average") -> Check:
    return Check("bubble_d_term", bubble_d_term_error(singular_cell), 2e-2,
                 "3D grid vs radial quadrature, mu=2, resolution 12")


def check_preconditioner() -> Check:
    rng = np.random.default_rng(3)
    g = build_grid(DomainSpec.annulus((0.0, 0.0), 0.4, 1.0), 27)
    rhs = np.where(g.mask, rng.standard_normal(g.shape), 0.0)
    a = operator_solver(g, 0.5).solve(rhs)
    b = solve_operator(g, 0.5, rhs, rtol=1e-13)
    return Check("sobolev_preconditioner", float(np.max(np.abs(a - b)) / np.max(np.abs(b))), 1e-9,
                 "sparse LU vs conjugate gradients")


def verify_checks(singular_cell: str = "average") -> list[Check]:
    checks = [check_fft_direct(singular_cell), check_gradient_fd(singular_cell)]
    checks += check_nehari_projection(singular_cell)
    checks += check_bubble_constants()
    checks.append(check_bubble_d_term(singular_cell))
    checks.append(check_preconditioner())
    return checks


def run_verify(out_dir=None, singular_cell: str = "average") -> tuple[bool, list[Check]]:
    """Run the oracle checks; write ``verify.csv`` when ``out_dir`` is given.

    ``singular_cell="zero"`` drops the singular kernel cell (fault injection).
    """
    checks = verify_checks(singular_cell)
    if out_dir is not None:
        write_csv(Path(out_dir) / "verify.csv", VERIFY_COLUMNS, [c.row() for c in checks])
    return all(c.passed for c in checks), checks


# -- solve / sweep ----------------------------------------------------------

def _run_dir(config: RunConfig, kind: str) -> Path:
    return output_root(config.output_dir) / f"{config.name}-{kind}"


def _record_dict(i, rec, class_id, fname) -> dict:
    return {"id": i, "eps": rec.eps, "energy": rec.energy, "barycenter": " ".join(repr(c) for c in rec.barycenter),
            "grad_norm": rec.final_grad_norm, "nehari_residual": rec.nehari_residual,
            "sup_norm": rec.sup_norm, "iterations": rec.iterations, "converged": rec.converged,
            "class_id": class_id, "classification": rec.classification,
            "seed_origin": (rec.seed_origin if isinstance(rec.seed_origin, str)
                            else " ".join(repr(c) for c in rec.seed_origin)),
            "file": fname}


CLASS_COLUMNS = ("class_id", "energy", "member_count", "barycenter", "in_omega_r_plus", "record_id")


def _setup(config: RunConfig):
    grid = build_grid(config.domain, config.resolution)
    kernel = RieszKernel(grid, config.mu)
    return grid, kernel


def run_solve(config: RunConfig, out_dir=None) -> RunManifest:
    """Multi-start at ``config.eps``, classes, verdicts and (optionally) the
    path min-max between the two lowest classes."""
    grid, kernel = _setup(config)
    params = config.params()
    res = multistart(grid, config.domain, params, kernel, config.solver)
    out = Path(out_dir) if out_dir is not None else _run_dir(config, "solve")
    man = RunManifest(kind="solve", config_text=config.source, code_version=__version__)
    class_of = {}
    for ci, c in enumerate(res.classes):
        for m in c.members:
            class_of[id(m)] = ci
    extra = []
    if config.path_minmax and len(res.classes) >= 2:
        a, b = nearest_class_pair(res.classes)
        pm = path_minmax(a, b, params, kernel, config.solver, res.m_eps, config.delta)
        man.verdicts.append({"check": "path_minmax", "collapsed": pm.collapsed, "message": pm.message,
                             "path_max": pm.path_max, "threshold": pm.threshold})
        write_csv(out / "path.csv", ("image", "energy"), list(enumerate(pm.path.energies)))
        man.tables["path"] = "path.csv"
        if pm.candidate is not None:
            extra.append(pm.candidate)
    for i, rec in enumerate(list(res.records) + extra):
        fname = f"field_{i:03d}.chqf"
        atomic_write_bytes(out / fname, dump_field(rec.field))
        man.records.append(_record_dict(i, rec, class_of.get(id(rec), ""), fname))
    rec_id = {id(r): i for i, r in enumerate(res.records)}
    rows = []
    for ci, c in enumerate(res.classes):
        row = [ci, c.energy, c.member_count, " ".join(repr(x) for x in c.barycenter), c.in_omega_r_plus,
               rec_id[id(c.representative)]]
        rows.append(row)
        man.classes.append(dict(zip(CLASS_COLUMNS, row)))
    write_csv(out / "classes.csv", CLASS_COLUMNS, rows)
    man.tables["classes"] = "classes.csv"
    loc = barycenter_localization_check(res.classes, config.domain, res.m_eps, config.delta)
    ver = multiplicity_verdict(res.classes, config.domain, res.m_eps, config.delta)
    man.verdicts.append({"check": "multiplicity", "status": ver.status, "summary": ver.summary(),
                         "low_energy_classes": ver.low_energy_classes,
                         "declared_category": ver.declared_category})
    man.verdicts.append({"check": "localization", "ok": loc.ok, "delta": loc.delta, "m_eps": loc.m_eps,
                         "violations": [list(b) for _, b in loc.violations]})
    man.write(out)
    return man


SWEEP_COLUMNS = ("eps", "m_eps", "barycenter", "sup_norm", "n_classes", "ok", "message")


def run_sweep(config: RunConfig, out_dir=None) -> RunManifest:
    grid, kernel = _setup(config)
    res = eps_sweep(grid, config.domain, config.params(config.eps_list[0]), kernel, config.eps_list,
                    config.solver)
    out = Path(out_dir) if out_dir is not None else _run_dir(config, "sweep")
    man = RunManifest(kind="sweep", config_text=config.source, code_version=__version__)
    rows = [[r.eps, r.m_eps, " ".join(repr(x) for x in r.barycenter), r.sup_norm, r.n_classes, r.ok, r.message]
            for r in res.rows]
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    man.tables["sweep"] = "sweep.csv"
    for i, run in enumerate(res.runs):
        if run is None:
            continue
        rec = run.classes[0].representative
        fname = f"field_{i:03d}.chqf"
        atomic_write_bytes(out / fname, dump_field(rec.field))
        man.records.append(_record_dict(i, rec, 0, fname))
    man.verdicts.append({"check": "sup_norm_increasing", "ok": res.sup_norm_increasing})
    man.write(out)
    return man


# -- bench ------------------------------------------------------------------

def run_bench(sizes=(16, 32, 64), mu: float = 1.0) -> str:
    """Wall times of the hot kernels on unit-disk grids."""
    lines = ["resolution nodes kernel_s fft_conv_s lu_factor_s lu_solve_s gradient_s"]
    for s in sizes:
        g = build_grid(DomainSpec.ball((0.0, 0.0), 1.0), s)
        t0 = time.perf_counter()
        k = RieszKernel(g, mu)
        t1 = time.perf_counter()
        v = np.where(g.mask, 1.0, 0.0)
        k.convolve_array(v)
        t2 = time.perf_counter()
        sol = operator_solver(g, 0.0)
        t3 = time.perf_counter()
        sol.solve(v)
        t4 = time.perf_counter()
        EnergyEvaluator(g, ChoquardParams.from_eps(3, mu, 0.0, 0.5), k).gradient(v)
        t5 = time.perf_counter()
        lines.append(f"{s} {g.num_interior} {t1 - t0:.4f} {t2 - t1:.4f} {t3 - t2:.4f} {t4 - t3:.4f} {t5 - t4:.4f}")
    return "\n".join(lines) + "\n"
