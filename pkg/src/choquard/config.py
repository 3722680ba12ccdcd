"""Run configuration: flat key-value sections with a strict schema.

Example::

    [domain]
    kind = annulus
    center = 0, 0
    r_inner = 0.4
    r_outer = 1.0

    [params]
    mu = 1.0
    lam = 0.0
    eps = 0.1

    [grid]
    resolution = 64

    [solver]
    seed_count = 8

Physics parameters (``mu``, ``lam`` and one of ``eps`` / ``eps_list``) have
no defaults. Unknown sections or keys are rejected, and every error names
the offending key and its line.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

from .energy import ChoquardParams, critical_exponent
from .errors import ConfigError, ParameterError
from .grid import DomainSpec
from .solver import SolverConfig

_DOMAIN_KEYS = {
    "ball": ({"kind", "center", "radius"}, {"r_margin"}),
    "annulus": ({"kind", "center", "r_inner", "r_outer"}, {"r_margin"}),
    "multi_hole": ({"kind", "center", "r_outer", "holes"}, {"r_margin"}),
    "box": ({"kind", "lo", "hi"}, {"r_margin"}),
}
_PARAM_KEYS = {"mu", "lam", "eps", "eps_list", "n_eff"}
_GRID_KEYS = {"resolution"}
_RUN_KEYS = {"output_dir", "rng_seed", "name", "path_minmax", "delta"}
_SOLVER_FIELDS = {f.name: f for f in dataclasses.fields(SolverConfig)}
_SECTIONS = ("domain", "params", "grid", "solver", "run")


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSpec
    mu: float
    lam: float
    eps_list: tuple[float, ...]
    resolution: float
    solver: SolverConfig = SolverConfig()
    n_eff: int | None = None
    output_dir: str = "runs"
    name: str = "run"
    rng_seed: int = 0
    path_minmax: bool = False
    delta: float | None = None
    source: str = field(default="", repr=False, compare=False)

    @property
    def N_eff(self) -> int:
        return self.n_eff if self.n_eff is not None else max(self.domain.n, 3)

    @property
    def eps(self) -> float:
        return self.eps_list[-1]

    def params(self, eps: float | None = None) -> ChoquardParams:
        return ChoquardParams.from_eps(self.N_eff, self.mu, self.lam, self.eps if eps is None else eps)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    lines = text.splitlines()
    in_sec = False
    for i, line in enumerate(lines, 1):
        s = line.strip()
        m = re.fullmatch(r"\[\s*([^\]]+?)\s*\]", s)
        if m:
            in_sec = m.group(1).lower() == section
            if key is None and in_sec:
                return i
            continue
        if in_sec and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return i
    return None


class _Reader:
    def __init__(self, text: str, cp: configparser.ConfigParser):
        self.text = text
        self.cp = cp

    def fail(self, section: str, key: str | None, msg: str):
        line = _line_of(self.text, section, key)
        where = f"[{section}]" + (f" {key}" if key else "")
        if line is not None:
            where = f"line {line}: {where}"
        raise ConfigError(f"{where}: {msg}")

    def has(self, sec: str, key: str) -> bool:
        return self.cp.has_section(sec) and self.cp.has_option(sec, key)

    def raw(self, sec: str, key: str) -> str:
        if not self.has(sec, key):
            self.fail(sec, None, f"missing required key '{key}'")
        return self.cp.get(sec, key)

    def real(self, sec: str, key: str) -> float:
        s = self.raw(sec, key)
        try:
            return float(s)
        except ValueError:
            self.fail(sec, key, f"expected a number, got {s!r}")

    def integer(self, sec: str, key: str) -> int:
        s = self.raw(sec, key)
        try:
            return int(s)
        except ValueError:
            self.fail(sec, key, f"expected an integer, got {s!r}")

    def reals(self, sec: str, key: str) -> tuple[float, ...]:
        s = self.raw(sec, key).strip().strip("[]()")
        try:
            return tuple(float(v) for v in s.split(",") if v.strip())
        except ValueError:
            self.fail(sec, key, f"expected a comma-separated list of numbers, got {s!r}")

    def boolean(self, sec: str, key: str) -> bool:
        try:
            return self.cp.getboolean(sec, key)
        except ValueError:
            self.fail(sec, key, f"expected a boolean, got {self.raw(sec, key)!r}")

    def check_keys(self, sec: str, allowed: set[str]):
        if not self.cp.has_section(sec):
            return
        for k in self.cp.options(sec):
            if k not in allowed:
                self.fail(sec, k, f"unknown key '{k}' (allowed: {', '.join(sorted(allowed))})")


def _parse_holes(r: _Reader, s: str):
    holes = []
    for part in s.split(";"):
        if not part.strip():
            continue
        try:
            vals = [float(v) for v in part.split(",")]
        except ValueError:
            r.fail("domain", "holes", f"bad hole entry {part.strip()!r}")
        if len(vals) < 3:
            r.fail("domain", "holes", "each hole is 'x, y[, z], radius'; entries separated by ';'")
        holes.append((tuple(vals[:-1]), vals[-1]))
    return holes


def _parse_domain(r: _Reader) -> DomainSpec:
    kind = r.raw("domain", "kind").strip()
    if kind not in _DOMAIN_KEYS:
        r.fail("domain", "kind", f"unknown domain kind {kind!r} (expected one of {', '.join(_DOMAIN_KEYS)})")
    required, optional = _DOMAIN_KEYS[kind]
    r.check_keys("domain", required | optional)
    for k in sorted(required):
        r.raw("domain", k)
    margin = r.real("domain", "r_margin") if r.has("domain", "r_margin") else None
    try:
        if kind == "ball":
            return DomainSpec.ball(r.reals("domain", "center"), r.real("domain", "radius"), margin)
        if kind == "annulus":
            return DomainSpec.annulus(r.reals("domain", "center"), r.real("domain", "r_inner"),
                                      r.real("domain", "r_outer"), margin)
        if kind == "multi_hole":
            return DomainSpec.multi_hole(r.reals("domain", "center"), r.real("domain", "r_outer"),
                                         _parse_holes(r, r.raw("domain", "holes")), margin)
        return DomainSpec.box(r.reals("domain", "lo"), r.reals("domain", "hi"), margin)
    except (ConfigError, ParameterError) as exc:
        r.fail("domain", None, str(exc))


def _parse_solver(r: _Reader) -> SolverConfig:
    if not r.cp.has_section("solver"):
        return SolverConfig()
    r.check_keys("solver", set(_SOLVER_FIELDS))
    kw = {}
    for k in r.cp.options("solver"):
        f = _SOLVER_FIELDS[k]
        kw[k] = r.integer("solver", k) if f.type in ("int", int) else r.real("solver", k)
    try:
        return SolverConfig(**kw)
    except ConfigError as exc:
        r.fail("solver", None, str(exc))


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration.

    Raises
    ------
    ConfigError
        On the first problem found, with the line and key when known.
    """
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    r = _Reader(text, cp)
    for sec in cp.sections():
        if sec not in _SECTIONS:
            r.fail(sec, None, f"unknown section (allowed: {', '.join(_SECTIONS)})")
    domain = _parse_domain(r)
    n = domain.n

    r.check_keys("params", _PARAM_KEYS)
    mu = r.real("params", "mu")
    lam = r.real("params", "lam")
    n_eff = r.integer("params", "n_eff") if r.has("params", "n_eff") else None
    N = n_eff if n_eff is not None else max(n, 3)
    if not 0.0 < mu < n:
        r.fail("params", "mu", f"mu must lie in (0, n) = (0, {n}), got {mu:g}")
    if not mu < N:
        r.fail("params", "mu", f"mu must be below N_eff = {N}")
    if lam < 0:
        r.fail("params", "lam", f"lambda must be >= 0, got {lam:g}")
    has_eps, has_list = r.has("params", "eps"), r.has("params", "eps_list")
    if has_eps == has_list:
        r.fail("params", None, "give exactly one of 'eps' or 'eps_list'")
    key = "eps" if has_eps else "eps_list"
    eps_list = (r.real("params", "eps"),) if has_eps else r.reals("params", "eps_list")
    if not eps_list:
        r.fail("params", key, "empty eps_list")
    upper = critical_exponent(N, mu) - 1.0
    for e in eps_list:
        if not 0.0 <= e < upper:
            r.fail("params", key, f"eps must lie in [0, {upper:g}), got {e:g}")
    if any(b >= a for a, b in zip(eps_list[:-1], eps_list[1:])):
        r.fail("params", key, "eps_list must be strictly decreasing")

    r.check_keys("grid", _GRID_KEYS)
    resolution = r.real("grid", "resolution")
    if not resolution > 0:
        r.fail("grid", "resolution", "resolution must be positive")

    solver = _parse_solver(r)
    if solver.seed_count < domain.declared_category:
        r.fail("solver", "seed_count" if r.has("solver", "seed_count") else None,
               f"seed_count={solver.seed_count} is below the declared category {domain.declared_category}")

    r.check_keys("run", _RUN_KEYS)
    run = {}
    if r.has("run", "output_dir"):
        run["output_dir"] = r.raw("run", "output_dir").strip()
    if r.has("run", "name"):
        name = r.raw("run", "name").strip()
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
            r.fail("run", "name", "name may only contain letters, digits, '_', '.' and '-'")
        run["name"] = name
    if r.has("run", "rng_seed"):
        run["rng_seed"] = r.integer("run", "rng_seed")
    if r.has("run", "path_minmax"):
        run["path_minmax"] = r.boolean("run", "path_minmax")
    if r.has("run", "delta"):
        run["delta"] = r.real("run", "delta")
        if not run["delta"] > 0:
            r.fail("run", "delta", "delta must be positive")
    return RunConfig(domain=domain, mu=mu, lam=lam, eps_list=tuple(eps_list), resolution=resolution,
                     solver=solver, n_eff=n_eff, source=text, **run)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
