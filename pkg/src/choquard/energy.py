"""The Choquard energy, its gradient and the Nehari constraint.

For exponent ``p`` and Riesz kernel ``K = |x|^{-mu}`` the functional is

    I(u) = 1/2 ||u||_lambda^2 - 1/(2p) D_p(u+),
    D_p(v) = int int v(x)^p v(y)^p K(x - y) dx dy,

with ``||u||_lambda^2 = |grad u|^2 + lambda |u|^2``. ``p = (2N - mu)/(N - 2)``
is the critical (Hardy-Littlewood-Sobolev) exponent; smaller ``p`` is the
subcritical problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, ProjectionError
from .grid import Field, _grad_sq_array, neg_laplacian_array
from .linalg import operator_solver
from .riesz import RieszKernel

CSV_COLUMNS = ("p", "eps", "value", "norm_lambda_sq", "d_term", "nehari_residual", "grad_norm")


def critical_exponent(N: float, mu: float) -> float:
    """2_mu^* = (2N - mu) / (N - 2)."""
    return (2.0 * N - mu) / (N - 2.0)


@dataclass(frozen=True)
class ChoquardParams:
    """Exponents and coefficients of one functional instance.

    ``N_eff`` is the dimension entering the exponent formulas. It is the
    grid dimension on 3D grids, 3 on 2D grids, and the analytic dimension for
    radial computations.
    """

    N_eff: float
    mu: float
    lam: float
    p: float

    def __post_init__(self):
        if self.N_eff < 3:
            raise ParameterError(f"N_eff must be >= 3 for the exponent formulas, got {self.N_eff}")
        if not 0.0 < self.mu < self.N_eff:
            raise ParameterError(f"mu must lie in (0, N_eff) = (0, {self.N_eff}), got {self.mu}")
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        crit = self.critical
        if not 1.0 < self.p <= crit * (1.0 + 1e-15):
            raise ParameterError(f"p must lie in (1, {crit:g}], got {self.p}")

    @classmethod
    def from_eps(cls, N_eff: float, mu: float, lam: float, eps: float) -> "ChoquardParams":
        if eps < 0:
            raise ParameterError(f"eps must be >= 0, got {eps}")
        if N_eff < 3:
            raise ParameterError(f"N_eff must be >= 3 for the exponent formulas, got {N_eff}")
        crit = critical_exponent(N_eff, mu)
        return cls(N_eff=N_eff, mu=mu, lam=lam, p=crit if eps == 0 else crit - eps)

    @property
    def critical(self) -> float:
        return critical_exponent(self.N_eff, self.mu)

    @property
    def eps(self) -> float:
        return max(self.critical - self.p, 0.0)

    @property
    def is_critical(self) -> bool:
        return self.p == self.critical

    def with_eps(self, eps: float) -> "ChoquardParams":
        return ChoquardParams.from_eps(self.N_eff, self.mu, self.lam, eps)

    def critical_mode(self) -> "ChoquardParams":
        return replace(self, p=self.critical)

    @property
    def nehari_factor(self) -> float:
        """(p - 1) / (2p): the energy on the Nehari manifold is this times ||u||_lambda^2."""
        return (self.p - 1.0) / (2.0 * self.p)


@dataclass(frozen=True)
class EnergyReport:
    p: float
    eps: float
    value: float
    norm_lambda_sq: float
    d_term: float
    nehari_residual: float
    gradient_norm: float | None = None

    def csv_row(self) -> list[str]:
        g = "" if self.gradient_norm is None else repr(float(self.gradient_norm))
        return [repr(float(v)) for v in (self.p, self.eps, self.value, self.norm_lambda_sq,
                                         self.d_term, self.nehari_residual)] + [g]


# -- array-level kernels (hot loops) ---------------------------------------

class EnergyEvaluator:
    """Array-level evaluation of the energy pieces for one grid/kernel/params.

    All public functions below go through this class; the solver uses it
    directly to avoid rebuilding Field objects inside its iterations.
    """

    def __init__(self, grid, params: ChoquardParams, kernel: RieszKernel):
        if not kernel.matches(grid):
            raise ValueError("kernel does not match the grid geometry")
        if abs(kernel.mu - params.mu) > 0.0:
            raise ValueError(f"kernel mu={kernel.mu} differs from params mu={params.mu}")
        self.grid = grid
        self.params = params
        self.kernel = kernel
        self.mask = grid.mask
        self.cell = grid.cell_volume

    def norm_sq(self, v: np.ndarray) -> float:
        g = _grad_sq_array(v, self.grid.h)
        lam = self.params.lam
        if lam:
            g += lam * self.cell * math.fsum((v[self.mask] ** 2).ravel())
        return g

    def d_parts(self, v: np.ndarray, p: float | None = None):
        """Return ``(u+^p, K * u+^p, D_p(u+))``."""
        p = self.params.p if p is None else p
        w = np.maximum(v, 0.0) ** p
        conv = self.kernel.convolve_array(w)
        d = self.cell * math.fsum((conv * w)[self.mask].ravel())
        return w, conv, d

    def d_term(self, v: np.ndarray, p: float | None = None) -> float:
        return self.d_parts(v, p)[2]

    def gradient(self, v: np.ndarray) -> np.ndarray:
        p = self.params.p
        up = np.maximum(v, 0.0)
        _, conv, _ = self.d_parts(v)
        g = neg_laplacian_array(v, self.grid.h, self.mask, self.params.lam) - conv * up ** (p - 1.0)
        g[~self.mask] = 0.0
        return g

    def energy_value(self, v: np.ndarray) -> float:
        return 0.5 * self.norm_sq(v) - self.d_term(v) / (2.0 * self.params.p)

    def t_projection(self, v: np.ndarray) -> float:
        d = self.d_term(v)
        if not d > 0.0:
            raise ProjectionError("no Nehari projection for nonpositive u (positive part vanishes)")
        return math.exp((math.log(self.norm_sq(v)) - math.log(d)) / (2.0 * self.params.p - 2.0))

    def preconditioned(self, g: np.ndarray) -> np.ndarray:
        """Sobolev representer ``(-Delta + lambda)^{-1} g`` by cached sparse LU."""
        return operator_solver(self.grid, self.params.lam).solve(g)


def _ev(u: Field, params: ChoquardParams, kernel: RieszKernel) -> EnergyEvaluator:
    return EnergyEvaluator(u.grid, params, kernel)


# -- public API -------------------------------------------------------------

def d_term(u: Field, params: ChoquardParams, kernel: RieszKernel) -> float:
    """D_p(u+) by one FFT convolution and one quadrature."""
    return _ev(u, params, kernel).d_term(u.values)


def energy(u: Field, params: ChoquardParams, kernel: RieszKernel,
           with_gradient_norm: bool = False) -> EnergyReport:
    """Energy and its pieces; the preconditioned gradient norm on request."""
    ev = _ev(u, params, kernel)
    norm = ev.norm_sq(u.values)
    d = ev.d_term(u.values)
    gnorm = None
    if with_gradient_norm:
        g = ev.gradient(u.values)
        w = ev.preconditioned(g)
        gnorm = math.sqrt(max(ev.cell * math.fsum((w * g)[ev.mask].ravel()), 0.0))
    return EnergyReport(p=params.p, eps=params.eps, value=0.5 * norm - d / (2.0 * params.p),
                        norm_lambda_sq=norm, d_term=d, nehari_residual=norm - d,
                        gradient_norm=gnorm)


def gradient(u: Field, params: ChoquardParams, kernel: RieszKernel) -> Field:
    """L^2 representer of I'(u): (-Delta + lambda) u - (K * u+^p) u+^(p-1)."""
    return Field(u.grid, _ev(u, params, kernel).gradient(u.values))


def t_projection(u: Field, params: ChoquardParams, kernel: RieszKernel) -> float:
    """The unique t > 0 with t u on the Nehari manifold:
    t^(2p-2) = ||u||_lambda^2 / D_p(u+), evaluated in log space."""
    return _ev(u, params, kernel).t_projection(u.values)


def nehari_project(u: Field, params: ChoquardParams, kernel: RieszKernel) -> Field:
    return u * t_projection(u, params, kernel)


def nehari_residual(u: Field, params: ChoquardParams, kernel: RieszKernel) -> float:
    """G(u) = ||u||_lambda^2 - D_p(u+)."""
    ev = _ev(u, params, kernel)
    return ev.norm_sq(u.values) - ev.d_term(u.values)


def omega_self_interaction(kernel: RieszKernel) -> float:
    """C(Omega) = int_Omega int_Omega |x - y|^{-mu} dx dy on the grid."""
    one = kernel.mask.astype(float)
    conv = kernel.convolve_array(one)
    return kernel.cell_volume * math.fsum(conv[kernel.mask].ravel())


def holder_interpolation_bound(u: Field, params: ChoquardParams, kernel: RieszKernel,
                               c_omega: float | None = None) -> tuple[float, float]:
    """Both sides of D_p(u+) <= D_crit(u+)^(p/crit) * C(Omega)^(eps/crit).

    ``c_omega`` may be passed to reuse a precomputed C(Omega).
    """
    ev = _ev(u, params, kernel)
    crit = params.critical
    if params.p > crit:
        raise ParameterError("the interpolation bound needs p <= critical exponent")
    lhs = ev.d_term(u.values)
    if params.is_critical:
        return lhs, lhs
    c = omega_self_interaction(kernel) if c_omega is None else c_omega
    dcrit = ev.d_term(u.values, p=crit)
    rhs = dcrit ** (params.p / crit) * c ** ((crit - params.p) / crit)
    return lhs, rhs
