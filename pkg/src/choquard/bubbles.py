"""Bubbles, cut-off seeds and the whole-space critical constants.

The standard bubble in R^N is

    U_{R,a}(x) = C_N (R / (1 + R^2 |x - a|^2))^((N-2)/2),  C_N = (N(N-2))^((N-2)/4).

The constants ``S_HL`` and ``m_star`` are computed from ``int |grad U_1|^2``
and the double integral ``D_crit(U_1)`` by radial quadrature. The double
integral is reduced to ``int int f(r) f(s) r^(N-1) s^(N-1) K_ang(r, s)`` where
the angular kernel ``K_ang`` is itself a 1D quadrature over the polar angle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .energy import critical_exponent
from .errors import ConfigError, ParameterError, QuadratureError
from .grid import DomainSpec, Field, Grid, in_omega_r_minus

TAIL_RTOL = 1e-10
REFINE_RTOL = 1e-6


def sphere_area(N: float) -> float:
    """|S^(N-1)|, the surface measure of the unit sphere in R^N."""
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


def bubble_constant(N: float) -> float:
    return (N * (N - 2.0)) ** ((N - 2.0) / 4.0)


@dataclass(frozen=True)
class BubbleSpec:
    N: int
    R: float = 1.0
    a: tuple[float, ...] = ()

    def __post_init__(self):
        if self.N < 3:
            raise ParameterError(f"bubbles need N >= 3, got {self.N}")
        if not self.R > 0:
            raise ParameterError("R must be positive")

    @property
    def C_N(self) -> float:
        return bubble_constant(self.N)

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, float)
        return self.C_N * (self.R / (1.0 + self.R ** 2 * r * r)) ** ((self.N - 2) / 2.0)

    def radial_derivative(self, r) -> np.ndarray:
        r = np.asarray(r, float)
        N, R = self.N, self.R
        return -self.C_N * (N - 2) * R ** ((N + 2) / 2.0) * r * (1.0 + R * R * r * r) ** (-N / 2.0)


def bubble_eval(spec: BubbleSpec, x) -> float | np.ndarray:
    x = np.asarray(x, float)
    a = np.zeros(x.shape[-1]) if not spec.a else np.asarray(spec.a, float)
    return spec.radial(np.linalg.norm(x - a, axis=-1))


def cutoff_chi(x, x0, r: float):
    """Cut-off equal to 1 on B_{r/2}(x0) and 0 outside B_r(x0).

    On the ramp ``r/2 <= |x - x0| <= r`` it is ``1 - s(tau)`` with
    ``tau = 2|x - x0|/r - 1`` and the cubic smoothstep ``s = 3 tau^2 - 2 tau^3``.
    """
    if not r > 0:
        raise ParameterError("cut-off radius must be positive")
    x = np.asarray(x, float)
    d = np.linalg.norm(x - np.asarray(x0, float), axis=-1)
    tau = np.clip(2.0 * d / r - 1.0, 0.0, 1.0)
    out = 1.0 - tau * tau * (3.0 - 2.0 * tau)
    return out if out.ndim else float(out)


def seed_bubble(grid: Grid, spec_domain: DomainSpec, x0, R: float, N_eff: int | None = None) -> Field:
    """Cut-off bubble ``R^((n-2)/2) C U(R(x - x0)) chi_{B_r(x0)}`` on the grid.

    The profile exponent uses ``N_eff`` (default ``max(n, 3)``) and the
    amplitude uses the grid dimension ``n``, which keeps the gradient energy
    invariant under changes of ``R``. On 3D grids this is exactly the cut-off
    bubble of the whole-space problem. ``r`` is the domain's ``r_margin``.
    """
    if not in_omega_r_minus(spec_domain, x0):
        raise ConfigError(f"seed center {tuple(x0)} is not in the inner neighborhood "
                          f"(distance to the boundary < r_margin={spec_domain.r_margin:g})")
    N = max(grid.n, 3) if N_eff is None else N_eff
    X = grid.coordinates()
    d2 = np.sum((X - np.asarray(x0, float)) ** 2, axis=-1)
    amp = R ** ((grid.n - 2) / 2.0) * bubble_constant(N)
    vals = amp * (1.0 + R * R * d2) ** (-(N - 2) / 2.0) * cutoff_chi(X, x0, spec_domain.r_margin)
    return Field(grid, vals)


def default_seed_R(spec_domain: DomainSpec, grid: Grid, N_eff: int | None = None,
                   fraction: float = 0.99) -> float:
    """Smallest R whose uncut profile keeps ``fraction`` of its gradient energy
    inside B_r, r = r_margin (in the grid dimension)."""
    n = grid.n
    N = max(n, 3) if N_eff is None else N_eff
    a = (N - 2) / 2.0
    # fraction of int rho^(n+1) (1+rho^2)^(-2a-2) d rho lying below t, by quadrature
    prof = RadialProfile.from_function(lambda s: s ** 2 * (1 + s * s) ** (-2 * a - 2), n, 16, 2.0 ** 40)
    total = prof.integral()
    mask_w = prof.weights * prof.values * prof.radii ** (n - 1)
    cum = np.cumsum(mask_w) * sphere_area(n)
    idx = int(np.searchsorted(cum, fraction * total))
    t = float(prof.radii[min(idx, len(prof.radii) - 1)])
    return t / spec_domain.r_margin


# -- radial quadrature ------------------------------------------------------

def _panels(r_max: float, r_first: float = 0.125) -> np.ndarray:
    k = max(0, int(math.ceil(math.log2(r_max / r_first))))
    return np.concatenate([[0.0], r_first * 2.0 ** np.arange(k + 1)])


def _gauss_on(breaks: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(q)
    a, b = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (b - a)
    return (a + half * (x + 1.0)).ravel(), (half * w).ravel()


@dataclass(frozen=True)
class RadialProfile:
    """Samples of a radial function on R^N at composite Gauss nodes.

    ``integral()`` is ``|S^(N-1)| sum w f(r) r^(N-1)``, i.e. the integral of
    the function over R^N truncated at ``r_max``.
    """

    N: int
    radii: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    @classmethod
    def from_function(cls, fn, N: int, q: int, r_max: float) -> "RadialProfile":
        r, w = _gauss_on(_panels(r_max), q)
        return cls(N=N, radii=r, weights=w, values=np.asarray(fn(r), float))

    def integral(self) -> float:
        return sphere_area(self.N) * math.fsum(self.weights * self.values * self.radii ** (self.N - 1))


def _tail_radius(decay: float, coeff: float, scale: float) -> float:
    """Radius beyond which ``coeff * (scale*r)^(-decay)`` drops under TAIL_RTOL."""
    return (coeff / TAIL_RTOL) ** (1.0 / decay) / scale


def angular_kernel(r: np.ndarray, s: np.ndarray, N: int, mu: float, q: int) -> np.ndarray:
    """K_ang(r, s) = |S^(N-2)| int_0^pi sin^(N-2)(t) (r^2 + s^2 - 2 r s cos t)^(-mu/2) dt.

    Composite Gauss-Legendre in the angle, with panels graded geometrically
    toward t = 0 where the integrand peaks when r is close to s.
    """
    breaks = np.concatenate([[0.0], math.pi * 2.0 ** -np.arange(24, -1, -1)])
    t, w = _gauss_on(breaks, q)
    r = np.asarray(r, float)[..., None]
    s = np.asarray(s, float)[..., None]
    dist2 = (r - s) ** 2 + 4.0 * r * s * np.sin(0.5 * t) ** 2
    vals = np.sin(t) ** (N - 2) * dist2 ** (-mu / 2.0)
    return sphere_area(N - 1) * (vals @ w)


def riesz_potential_radial(fn, N: int, mu: float, r_eval: np.ndarray, q: int, r_max: float) -> np.ndarray:
    """(|x|^-mu * f)(r) for radial f, at each radius in ``r_eval``.

    The s-integration mesh is refined geometrically toward s = r on both
    sides, since the angular kernel is only Lipschitz across the diagonal.
    """
    base = _panels(r_max)
    grade = 2.0 ** -np.arange(1, 13)
    out = np.empty(len(r_eval))
    for i, r in enumerate(r_eval):
        extra = np.concatenate([[r], r * (1.0 - grade), r * (1.0 + grade)])
        breaks = np.unique(np.concatenate([base, extra[(extra > 0) & (extra < r_max)]]))
        s, w = _gauss_on(breaks, q)
        k = angular_kernel(np.full_like(s, r), s, N, mu, q)
        out[i] = math.fsum(w * fn(s) * s ** (N - 1) * k)
    return out


def _bubble_integrals(N: int, mu: float, q: int, R: float = 1.0) -> tuple[float, float]:
    """(int |grad U_R|^2, D_crit(U_R)) by radial quadrature with q points per panel."""
    b = BubbleSpec(N=N, R=R)
    crit = critical_exponent(N, mu)
    # gradient tail: |U'|^2 r^(N-1) <= C^2 (N-2)^2 R^(2-N) r^(1-N)
    gtot = 0.5 * math.gamma((N + 2) / 2) * math.gamma((N - 2) / 2) / math.gamma(N)
    rg = _tail_radius(N - 2.0, 1.0 / ((N - 2.0) * gtot), R)
    prof = RadialProfile.from_function(lambda r: b.radial_derivative(r) ** 2, N, q, rg)
    grad = prof.integral()
    # double-integral tail, from the decay of U^crit ~ r^-(2N - mu)
    ftot = 0.5 * math.gamma(N / 2) * math.gamma((N - mu) / 2) / math.gamma((2 * N - mu) / 2)
    rd = _tail_radius(N - mu, 1.0 / ((N - mu) * ftot), R)

    def f(r):
        return b.radial(r) ** crit

    r_out, w_out = _gauss_on(_panels(rd), q)
    pot = riesz_potential_radial(f, N, mu, r_out, q, rd)
    d = sphere_area(N) * math.fsum(w_out * f(r_out) * r_out ** (N - 1) * pot)
    return grad, d


@dataclass(frozen=True)
class CriticalConstants:
    N: int
    mu: float
    grad_U1_sq: float
    d_crit_U1: float
    S_HL: float
    m_star: float
    t_star_U1: float
    quad_points: int
    refinement_change: float

    @property
    def critical(self) -> float:
        return critical_exponent(self.N, self.mu)

    @property
    def m_star_exponent(self) -> float:
        """Exponent 2mu*/(2mu* - 1) of S_HL in the closed form of m_star."""
        c = self.critical
        return c / (c - 1.0)

    @property
    def m_star_projected(self) -> float:
        """Energy of the Nehari-projected bubble: (1/2 - 1/(2 crit)) t^2 int |grad U_1|^2."""
        c = self.critical
        return (0.5 - 0.5 / c) * self.t_star_U1 ** 2 * self.grad_U1_sq

    def projected_bubble_residual(self) -> float:
        """Relative critical Nehari residual of t_star U_1 (zero up to rounding)."""
        t, c = self.t_star_U1, self.critical
        return abs(t * t * self.grad_U1_sq - t ** (2 * c) * self.d_crit_U1) / (t * t * self.grad_U1_sq)


def constants_from_integrals(N: int, mu: float, grad: float, d: float, q: int = 0,
                             change: float = 0.0) -> CriticalConstants:
    crit = critical_exponent(N, mu)
    s_hl = grad / d ** ((N - 2.0) / (2.0 * N - mu))
    m_star = (crit - 1.0) / (2.0 * crit) * s_hl ** (crit / (crit - 1.0))
    t_star = (grad / d) ** (1.0 / (2.0 * crit - 2.0))
    return CriticalConstants(N=N, mu=mu, grad_U1_sq=grad, d_crit_U1=d, S_HL=s_hl, m_star=m_star,
                             t_star_U1=t_star, quad_points=q, refinement_change=change)


@lru_cache(maxsize=None)
def critical_constants(N: int, mu: float, quad_points: int = 8) -> CriticalConstants:
    """Whole-space constants for dimension N and Riesz exponent mu.

    The integrals are computed with ``quad_points`` and ``2*quad_points``
    Gauss points per panel; the refined values are returned.

    Raises
    ------
    QuadratureError
        If the two levels disagree by more than 1e-6 relative.
    """
    if N < 3 or not 0.0 < mu < N:
        raise ParameterError(f"need N >= 3 and 0 < mu < N, got N={N}, mu={mu}")
    g1, d1 = _bubble_integrals(N, mu, quad_points)
    g2, d2 = _bubble_integrals(N, mu, 2 * quad_points)
    change = max(abs(g2 - g1) / abs(g2), abs(d2 - d1) / abs(d2))
    if change > REFINE_RTOL:
        raise QuadratureError(
            f"radial quadrature not converged for N={N}, mu={mu}: q={quad_points} vs "
            f"{2 * quad_points} gives grad {g1!r} vs {g2!r}, D {d1!r} vs {d2!r} "
            f"(relative change {change:.2e} > {REFINE_RTOL:g})")
    return constants_from_integrals(N, mu, g2, d2, 2 * quad_points, change)


def projected_bubble_energy(N: int, mu: float, R: float = 3.0, quad_points: int = 16) -> float:
    """Critical energy of the Nehari projection of U_R, from its own quadrature.

    The value does not depend on R; R != 1 puts the quadrature nodes at
    other points of the profile, which makes this an independent check of
    the closed form for m_star.
    """
    crit = critical_exponent(N, mu)
    g, d = _bubble_integrals(N, mu, quad_points, R)
    t2 = (g / d) ** (1.0 / (crit - 1.0))
    return 0.5 * t2 * g - t2 ** crit * d / (2.0 * crit)


def bubble_nehari_defect(constants: CriticalConstants) -> float:
    """|int |grad U_1|^2 - D_crit(U_1)| / int |grad U_1|^2 for the normalized bubble."""
    return abs(constants.grad_U1_sq - constants.d_crit_U1) / constants.grad_U1_sq


def whole_space_gradient_energy(n: int, N_profile: int, q: int = 16) -> float:
    """int over R^n of |grad (C_Np (1 + |x|^2)^(-(Np-2)/2))|^2.

    With n = N_profile this is ``grad_U1_sq``; on 2D grids it is the
    limiting gradient energy of the seeds built by :func:`seed_bubble`.
    """
    b = BubbleSpec(N=N_profile)
    decay = 2 * N_profile - n - 2
    if decay <= 0:
        raise ParameterError("profile gradient is not square integrable in this dimension")
    r_max = (1.0 / TAIL_RTOL) ** (1.0 / decay)
    return RadialProfile.from_function(lambda r: b.radial_derivative(r) ** 2, n, q, r_max).integral()
