"""Critical points of the Choquard energy on the Nehari manifold.

The basic iteration is a projected Sobolev-gradient descent:

    u <- t(v) v,   v = (u - alpha w)+,   (-Delta + lambda) w = I'(u),

with Armijo backtracking on the energy. Since every iterate lies on the
Nehari manifold its energy is ``(p-1)/(2p) ||u||_lambda^2``. Multi-start runs
seed the descent with cut-off bubbles spread over the inner neighborhood of
the domain; a climbing string between two low-energy solutions looks for a
higher-energy critical point.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .bubbles import default_seed_R, seed_bubble
from .energy import ChoquardParams, EnergyEvaluator
from .errors import ConfigError, ParameterError, ProjectionError, SolverError
from .grid import DomainSpec, Field, Grid, neg_laplacian_array, omega_r_minus_points
from .riesz import RieszKernel


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 2000
    grad_tol: float = 1e-6
    step_init: float = 1.0
    step_max: float = 4.0
    step_shrink: float = 0.5
    armijo: float = 1e-4
    seed_R: float | None = None
    seed_count: int = 8
    energy_rtol: float = 1e-4
    bary_dist_h: float = 4.0
    lbfgs_memory: int = 8
    workers: int = 1
    path_images: int = 13
    path_iters: int = 400

    def __post_init__(self):
        for name in ("max_iters", "grad_tol", "step_init", "step_max", "armijo", "energy_rtol",
                     "bary_dist_h", "workers", "path_iters"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"solver option {name} must be positive")
        if not 0.0 < self.step_shrink < 1.0:
            raise ConfigError("step_shrink must lie in (0, 1)")
        if self.seed_R is not None and not self.seed_R > 0:
            raise ConfigError("seed_R must be positive")
        if self.seed_count < 0:
            raise ConfigError("seed_count must be >= 0")
        if self.lbfgs_memory < 0:
            raise ConfigError("lbfgs_memory must be >= 0")
        if self.path_images < 3:
            raise ConfigError("path_images must be >= 3")


@dataclass
class SolutionRecord:
    field: Field
    energy: float
    barycenter: tuple[float, ...]
    eps: float
    iterations: int
    final_grad_norm: float
    seed_origin: object  # a point, or "path-minmax"
    classification: str = "low_energy"
    converged: bool = True
    nehari_residual: float = 0.0
    energy_history: list[float] = field(default_factory=list, repr=False)

    @property
    def sup_norm(self) -> float:
        return self.field.sup_norm()


class _State:
    """A Nehari point with its cached convolution, so the gradient reuses it."""

    __slots__ = ("u", "w", "conv", "norm", "d")

    def __init__(self, ev: EnergyEvaluator, v: np.ndarray):
        v = np.maximum(v, 0.0)
        w, conv, d = ev.d_parts(v)
        if not d > 0.0:
            raise ProjectionError("no Nehari projection for nonpositive u (positive part vanishes)")
        norm = ev.norm_sq(v)
        p = ev.params.p
        t = math.exp((math.log(norm) - math.log(d)) / (2.0 * p - 2.0))
        self.u = t * v
        tp = t ** p
        self.w = w * tp
        self.conv = conv * tp
        self.norm = norm * t * t
        self.d = d * tp * tp

    def gradient(self, ev: EnergyEvaluator) -> np.ndarray:
        p = ev.params.p
        g = neg_laplacian_array(self.u, ev.grid.h, ev.mask, ev.params.lam)
        g -= self.conv * self.u ** (p - 1.0)
        g[~ev.mask] = 0.0
        return g


def _energy_on_nehari(ev: EnergyEvaluator, s: _State) -> float:
    return 0.5 * s.norm - s.d / (2.0 * ev.params.p)


def _record(ev: EnergyEvaluator, s: _State, it: int, rel: float, origin, converged: bool,
            hist: list[float], classification: str = "low_energy") -> SolutionRecord:
    f = Field(ev.grid, s.u)
    return SolutionRecord(field=f, energy=_energy_on_nehari(ev, s), barycenter=diagnostics.barycenter(f),
                          eps=ev.params.eps, iterations=it, final_grad_norm=rel, seed_origin=origin,
                          classification=classification, converged=converged,
                          nehari_residual=(s.norm - s.d) / s.norm, energy_history=hist)


def _pair(ev: EnergyEvaluator, a: np.ndarray, b: np.ndarray) -> float:
    """Duality pairing of a nodal function with an L2 gradient representer."""
    return ev.cell * math.fsum((a * b)[ev.mask].ravel())


def nehari_descent(seed: Field, params: ChoquardParams, kernel: RieszKernel,
                   config: SolverConfig = SolverConfig(), origin=None) -> SolutionRecord:
    """Projected Sobolev-gradient descent from ``seed``.

    Each step moves against a search direction, trims the negative part and
    projects back onto the Nehari manifold; Armijo backtracking acts on the
    energy. The direction is the Sobolev gradient ``w = (-Delta+lambda)^-1 g``
    corrected by a limited-memory BFGS update built from the last
    ``lbfgs_memory`` steps (``lbfgs_memory=0`` gives plain Sobolev descent).
    Curvature pairs refer to the reduced energy ``J(v) = I(t(v) v)``, whose
    gradient on the manifold is ``I'(u)``.

    Stops once ``||w||_lambda / ||u||_lambda < grad_tol``. A run that exhausts
    ``max_iters`` or whose line search stalls returns a record flagged
    ``converged=False``.
    """
    ev = EnergyEvaluator(seed.grid, params, kernel)
    if not np.any(seed.values > 0):
        raise ProjectionError("seed has no positive part")
    s = _State(ev, seed.values)
    energy = _energy_on_nehari(ev, s)
    hist = [energy]
    g = s.gradient(ev)
    w = ev.preconditioned(g)
    pairs: list[tuple[np.ndarray, np.ndarray, np.ndarray, float]] = []  # (s, y, Py, 1/<s,y>)
    alpha_sd = config.step_init
    rel = math.inf
    it = 0
    converged = False
    while True:
        gn2 = max(_pair(ev, w, g), 0.0)
        rel = math.sqrt(gn2 / s.norm)
        if rel < config.grad_tol:
            converged = True
            break
        if it >= config.max_iters:
            break
        d = _lbfgs_direction(ev, g, w, pairs)
        slope = _pair(ev, d, g)
        if d is w or not slope > 0.0:
            pairs.clear()
            d, slope, alpha = w, gn2, alpha_sd
        else:
            alpha = 1.0
        step = _line_search(ev, s, energy, d, slope, alpha, config)
        if step is None and d is not w:
            pairs.clear()
            d, slope = w, gn2
            step = _line_search(ev, s, energy, d, slope, alpha_sd, config)
        if step is None:
            break
        cand, e_new, alpha = step
        if d is w:
            alpha_sd = min(alpha / config.step_shrink, config.step_max)
        g_new = cand.gradient(ev)
        w_new = ev.preconditioned(g_new)
        if config.lbfgs_memory:
            sk, yk = cand.u - s.u, g_new - g
            sy = _pair(ev, sk, yk)
            if sy > 1e-12 * math.sqrt(max(_pair(ev, sk, neg_laplacian_array(sk, ev.grid.h, ev.mask, params.lam)), 0.0)
                                      * max(_pair(ev, w_new - w, yk), 0.0)):
                pairs.append((sk, yk, w_new - w, 1.0 / sy))
                if len(pairs) > config.lbfgs_memory:
                    pairs.pop(0)
        s, energy, g, w = cand, e_new, g_new, w_new
        hist.append(energy)
        it += 1
    return _record(ev, s, it, rel, origin, converged, hist)


def _lbfgs_direction(ev: EnergyEvaluator, g: np.ndarray, w: np.ndarray, pairs) -> np.ndarray:
    """Two-loop recursion with initial inverse Hessian ``gamma (-Delta+lambda)^-1``.

    ``P q`` is never solved for: by linearity it is ``w - sum a_i P y_i``.
    """
    if not pairs:
        return w
    a = []
    q = g.copy()
    pq = w.copy()
    for sk, yk, pyk, rho in reversed(pairs):
        ai = rho * _pair(ev, sk, q)
        q -= ai * yk
        pq -= ai * pyk
        a.append(ai)
    sk, yk, pyk, rho = pairs[-1]
    gamma = 1.0 / (rho * _pair(ev, pyk, yk))
    r = gamma * pq
    for (sk, yk, pyk, rho), ai in zip(pairs, reversed(a)):
        b = rho * _pair(ev, yk, r)
        r += (ai - b) * sk
    return r


def _line_search(ev: EnergyEvaluator, s: _State, energy: float, d: np.ndarray, slope: float,
                 alpha: float, config: SolverConfig):
    while alpha > 1e-12:
        try:
            cand = _State(ev, s.u - alpha * d)
        except ProjectionError:
            alpha *= config.step_shrink
            continue
        e_new = _energy_on_nehari(ev, cand)
        if e_new <= energy - config.armijo * alpha * slope:
            return cand, e_new, alpha
        alpha *= config.step_shrink
    return None


# -- multi-start ----------------------------------------------------------

@dataclass
class MultistartResult:
    records: list[SolutionRecord]  # in seed order, converged or not
    classes: list  # ClassSummary, sorted by energy
    m_eps: float
    seeds: list[tuple[float, ...]]
    seed_R: float

    @property
    def converged(self) -> list[SolutionRecord]:
        return [r for r in self.records if r.converged]

    @property
    def solutions(self) -> list[SolutionRecord]:
        """One representative per class, sorted by energy."""
        return [c.representative for c in self.classes]


def seed_radius(grid: Grid, spec: DomainSpec, params: ChoquardParams, config: SolverConfig) -> float:
    """Configured seed R, or the 99% gradient-mass rule capped at 1/(2h)."""
    if config.seed_R is not None:
        return config.seed_R
    n_eff = int(round(params.N_eff))
    return min(default_seed_R(spec, grid, n_eff), 0.5 / min(grid.h))


def multistart(grid: Grid, spec: DomainSpec, params: ChoquardParams, kernel: RieszKernel,
               config: SolverConfig = SolverConfig(), extra_seeds: list[Field] | None = None) -> MultistartResult:
    """Descend from ``seed_count`` cut-off bubbles spread over the inner
    neighborhood, plus any ``extra_seeds`` (warm starts); deduplicate.

    Raises
    ------
    ConfigError
        If ``seed_count`` is below the declared category of the domain.
    SolverError
        If no descent converges.
    """
    if config.seed_count < spec.declared_category or config.seed_count == 0:
        raise ConfigError(f"seed_count={config.seed_count} is below the declared category "
                          f"{spec.declared_category} of the domain")
    pts = omega_r_minus_points(grid, spec, config.seed_count)
    R = seed_radius(grid, spec, params, config)
    n_eff = int(round(params.N_eff))
    jobs = [(seed_bubble(grid, spec, x0, R, n_eff), x0) for x0 in pts]
    jobs += [(f, "warm-start") for f in (extra_seeds or [])]

    def run(job):
        f, origin = job
        return nehari_descent(f, params, kernel, config, origin=origin)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(j) for j in jobs]
    good = [r for r in records if r.converged]
    if not good:
        raise SolverError(f"none of the {len(records)} descents converged "
                          f"(best relative gradient {min(r.final_grad_norm for r in records):.2e})")
    bary_dist = config.bary_dist_h * min(grid.h)
    classes = diagnostics.dedup(good, config.energy_rtol, bary_dist, spec)
    return MultistartResult(records=records, classes=classes, m_eps=classes[0].energy,
                            seeds=pts, seed_R=R)


# -- climbing string --------------------------------------------------------

@dataclass
class PathState:
    images: list[np.ndarray]
    energies: list[float]

    @property
    def max_index(self) -> int:
        return int(np.argmax(self.energies))


@dataclass
class PathMinMaxResult:
    candidate: SolutionRecord | None
    path: PathState
    collapsed: bool
    message: str
    iterations: int = 0
    saddle: SolutionRecord | None = None  # converged climbing image, whatever its energy
    threshold: float = math.nan

    @property
    def path_max(self) -> float:
        return max(self.path.energies)


def _h_inner(ev: EnergyEvaluator, x: np.ndarray, y: np.ndarray) -> float:
    ax = neg_laplacian_array(x, ev.grid.h, ev.mask, ev.params.lam)
    return ev.cell * math.fsum((ax * y)[ev.mask].ravel())


def _reparametrize(ev: EnergyEvaluator, states: list[_State], lo: int, hi: int) -> None:
    """Redistribute states[lo+1:hi] at equal H-arclength between states[lo]
    and states[hi] (piecewise linear), then put them back on the manifold."""
    seg = states[lo:hi + 1]
    if len(seg) < 3:
        return
    us = [s.u for s in seg]
    lens = [0.0]
    for a, b in zip(us[:-1], us[1:]):
        d = a - b
        lens.append(lens[-1] + math.sqrt(max(_h_inner(ev, d, d), 0.0)))
    total = lens[-1]
    if total == 0.0:
        return
    targets = np.linspace(0.0, total, len(seg))
    new = []
    j = 0
    for t in targets[1:-1]:
        while j < len(lens) - 2 and lens[j + 1] < t:
            j += 1
        span = lens[j + 1] - lens[j]
        th = 0.0 if span == 0 else (t - lens[j]) / span
        new.append(_State(ev, (1.0 - th) * us[j] + th * us[j + 1]))
    states[lo + 1:hi] = new


def path_minmax(a: SolutionRecord, b: SolutionRecord, params: ChoquardParams, kernel: RieszKernel,
                config: SolverConfig = SolverConfig(), m_eps: float | None = None,
                delta: float | None = None) -> PathMinMaxResult:
    """Climbing-string search for a mountain-pass point between two solutions.

    The path starts as the Nehari projection of the segment from ``a`` to
    ``b``. Interior images move along the component of the Sobolev gradient
    normal to the path; the highest image instead climbs along the path
    tangent.

    A high-energy candidate is reported when the climbing image converges to
    a critical point with energy above ``m_eps + delta`` (defaults: the lower
    endpoint energy and ``0.1 * m_eps``, the localization threshold).
    Otherwise the result is a collapse report; a converged saddle below the
    threshold is still returned in ``saddle`` for inspection.
    """
    grid = a.field.grid
    bary_dist = config.bary_dist_h * min(grid.h)
    same_e = abs(a.energy - b.energy) <= config.energy_rtol * max(a.energy, b.energy)
    same_b = np.linalg.norm(np.subtract(a.barycenter, b.barycenter)) < bary_dist
    if same_e and same_b:
        raise ValueError("path_minmax needs two distinct solution classes")
    ev = EnergyEvaluator(grid, params, kernel)
    m = config.path_images
    ua, ub = a.field.values, b.field.values
    states = [_State(ev, ua)] + [_State(ev, (1 - th) * ua + th * ub)
                                 for th in np.linspace(0, 1, m)[1:-1]] + [_State(ev, ub)]
    e_end = max(a.energy, b.energy)
    alpha = config.step_init
    rel = math.inf
    ci = 0
    it = 0
    warmup = 20
    for it in range(1, config.path_iters + 1):
        energies = [_energy_on_nehari(ev, s) for s in states]
        ci = int(np.argmax(energies[1:-1])) + 1
        climbing = it > warmup
        new_states = list(states)
        for k in range(1, m - 1):
            s = states[k]
            g = s.gradient(ev)
            w = ev.preconditioned(g)
            tau = states[k + 1].u - states[k - 1].u
            tn = math.sqrt(max(_h_inner(ev, tau, tau), 0.0))
            if tn > 0:
                tau = tau / tn
                proj = ev.cell * math.fsum((g * tau)[ev.mask].ravel())  # <w, tau>_H
            else:
                proj = 0.0
            if k == ci and climbing:
                step_dir = w - 2.0 * proj * tau
                gn2 = max(ev.cell * math.fsum((w * g)[ev.mask].ravel()), 0.0)
                rel = math.sqrt(gn2 / s.norm)
            else:
                step_dir = w - proj * tau
            try:
                new_states[k] = _State(ev, s.u - alpha * step_dir)
            except ProjectionError:
                pass
        states = new_states
        if climbing:
            _reparametrize(ev, states, 0, ci)
            _reparametrize(ev, states, ci, m - 1)
            if rel < config.grad_tol:
                break
        else:
            _reparametrize(ev, states, 0, m - 1)
    energies = [_energy_on_nehari(ev, s) for s in states]
    path = PathState(images=[s.u for s in states], energies=energies)
    ci = path.max_index
    m_eps = min(a.energy, b.energy) if m_eps is None else m_eps
    threshold = m_eps + (0.1 * m_eps if delta is None else delta)
    if ci in (0, m - 1):
        return PathMinMaxResult(None, path, True, "path maximum sits at an endpoint", it, threshold=threshold)
    if energies[ci] <= e_end * (1.0 + config.energy_rtol):
        return PathMinMaxResult(None, path, True,
                                f"path maximum {energies[ci]:.8g} is within energy_rtol of the "
                                f"endpoint energy {e_end:.8g}", it, threshold=threshold)
    if rel >= config.grad_tol:
        return PathMinMaxResult(None, path, True,
                                f"climbing image did not converge (relative gradient {rel:.2e})", it,
                                threshold=threshold)
    high = energies[ci] > threshold
    rec = _record(ev, states[ci], it, rel, "path-minmax", True, [energies[ci]],
                  "high_energy" if high else "low_energy")
    if high:
        return PathMinMaxResult(rec, path, False, "high-energy candidate found", it, rec, threshold)
    return PathMinMaxResult(None, path, True,
                            f"climbing image converged to a saddle at {energies[ci]:.8g}, below the "
                            f"high-energy threshold m_eps + delta = {threshold:.8g}", it, rec, threshold)


def nearest_class_pair(classes) -> tuple:
    """The lowest class and the distinct class whose barycenter is closest
    to it: the shortest path, hence the best resolved string."""
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    a = classes[0]
    b = min(classes[1:], key=lambda c: (float(np.linalg.norm(np.subtract(c.barycenter, a.barycenter))),
                                        c.energy))
    return a.representative, b.representative


# -- eps sweep --------------------------------------------------------------

@dataclass
class SweepRow:
    eps: float
    m_eps: float
    barycenter: tuple[float, ...]
    sup_norm: float
    n_classes: int
    ok: bool = True
    message: str = ""


@dataclass
class SweepResult:
    rows: list[SweepRow]
    runs: list[MultistartResult | None]

    @property
    def sup_norm_increasing(self) -> bool:
        s = [r.sup_norm for r in self.rows if r.ok]
        return len(s) == len(self.rows) and all(b > a for a, b in zip(s[:-1], s[1:]))


def eps_sweep(grid: Grid, spec: DomainSpec, params_base: ChoquardParams, kernel: RieszKernel,
              eps_list, config: SolverConfig = SolverConfig()) -> SweepResult:
    """Multi-start at each eps of a strictly decreasing list, warm-started
    from the previous minimizer. Failures become flagged rows."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list[:-1], eps_list[1:])):
        raise ParameterError("eps_list must be strictly decreasing")
    upper = params_base.critical - 1.0
    if any(not 0.0 < e < upper for e in eps_list):
        raise ParameterError(f"every eps must lie in (0, {upper:g})")
    rows, runs = [], []
    warm: list[Field] = []
    for e in eps_list:
        params = params_base.with_eps(e)
        try:
            res = multistart(grid, spec, params, kernel, config, extra_seeds=warm)
        except SolverError as exc:
            rows.append(SweepRow(e, math.nan, (), math.nan, 0, ok=False, message=str(exc)))
            runs.append(None)
            continue
        best = res.classes[0].representative
        rows.append(SweepRow(e, res.m_eps, best.barycenter, best.sup_norm, len(res.classes)))
        runs.append(res)
        warm = [best.field]
    return SweepResult(rows, runs)
