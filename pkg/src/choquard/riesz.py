"""Riesz potential ``|x|^{-mu} * f`` on masked grids.

The kernel is tabulated on the lattice of node offsets. Off the origin it is
the point value ``|o h|^{-mu}``; the origin entry is the cell average of
``|x|^{-mu}``, which is finite because ``mu < n``.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.fft as sfft

from .errors import ParameterError
from .grid import Field, Grid

SUBGRID = 32
DIRECT_MAX_NODES = 100_000


def singular_cell_average(h, mu: float, subgrid: int = SUBGRID) -> float:
    """Average of ``|x|^{-mu}`` over the cell ``prod [-h_i/2, h_i/2]``.

    The cell is split into 4 blocks per axis, each carrying ``subgrid/4``
    Gauss-Legendre points per axis (a ``subgrid**n`` point set). Blocks of
    the central half-size cell are skipped; that part follows from
    self-similarity, as it carries a fraction ``2**(mu - n)`` of the whole
    integral. The remaining integrand is smooth.
    """
    h = np.asarray(h, float)
    n = len(h)
    q = subgrid // 4
    x, w = np.polynomial.legendre.leggauss(q)
    ticks = np.concatenate([-0.5 + 0.25 * (b + 0.5 * (x + 1.0)) for b in range(4)])
    wts = np.tile(0.125 * w, 4)
    grids = np.meshgrid(*[ticks * hx for hx in h], indexing="ij")
    pts = np.stack(grids, -1)
    wprod = math.prod(h) * np.prod(np.meshgrid(*[wts] * n, indexing="ij"), axis=0)
    central = np.all(np.abs(pts) < h / 4, axis=-1)
    r = np.linalg.norm(pts[~central], axis=-1)
    rest = math.fsum((wprod[~central] * r ** (-mu)).ravel())
    return rest / (1.0 - 2.0 ** (mu - n)) / math.prod(h)


class RieszKernel:
    """Tabulated Riesz kernel for one grid geometry and exponent.

    Immutable after construction; the padded kernel spectrum is cached so
    that every convolution costs two real FFTs.
    """

    def __init__(self, grid: Grid, mu: float, singular_cell: str = "average"):
        n = grid.n
        if not 0.0 < mu < n:
            raise ParameterError(f"mu must lie in (0, n) = (0, {n}), got {mu}")
        if singular_cell not in ("average", "zero"):
            raise ValueError("singular_cell must be 'average' or 'zero'")
        self.mu = float(mu)
        self.shape = grid.shape
        self.h = grid.h
        self.cell_volume = grid.cell_volume
        self.mask = grid.mask
        self.origin_index = tuple(m - 1 for m in grid.shape)
        offs = np.meshgrid(*[hx * np.arange(-(m - 1), m) for hx, m in zip(grid.h, grid.shape)],
                           indexing="ij")
        r = np.sqrt(sum(o * o for o in offs))
        r[self.origin_index] = 1.0
        table = r ** (-self.mu)
        table[self.origin_index] = (singular_cell_average(grid.h, self.mu)
                                    if singular_cell == "average" else 0.0)
        table.flags.writeable = False
        self.table = table
        self.fft_shape = tuple(sfft.next_fast_len(2 * m - 1, real=True) for m in grid.shape)
        emb = np.zeros(self.fft_shape)
        emb[tuple(slice(0, 2 * m - 1) for m in grid.shape)] = table
        emb = np.roll(emb, shift=[-(m - 1) for m in grid.shape], axis=tuple(range(n)))
        self._spectrum = sfft.rfftn(emb)

    def value(self, offset) -> float:
        """Kernel entry at an integer lattice offset."""
        return float(self.table[tuple(o + m - 1 for o, m in zip(offset, self.shape))])

    def matches(self, grid: Grid) -> bool:
        return grid.shape == self.shape and grid.h == self.h

    # array-level paths, used in hot loops
    def convolve_array(self, f: np.ndarray) -> np.ndarray:
        spec = sfft.rfftn(f, s=self.fft_shape)
        g = sfft.irfftn(spec * self._spectrum, s=self.fft_shape)
        return self.cell_volume * g[tuple(slice(0, m) for m in self.shape)]

    def convolve_direct_array(self, f: np.ndarray) -> np.ndarray:
        size = f.size
        if size > DIRECT_MAX_NODES:
            raise ValueError(f"direct convolution refuses {size} nodes (limit {DIRECT_MAX_NODES}); "
                             "use convolve_fft or a grid with fewer nodes")
        idx = np.indices(self.shape).reshape(len(self.shape), -1)
        base = np.asarray(self.origin_index)[:, None]
        flat = f.ravel()
        nz = np.flatnonzero(flat)
        src = idx[:, nz]
        vals = flat[nz]
        out = np.empty(size)
        for i in range(size):
            k = self.table[tuple(idx[:, i:i + 1] - src + base)]
            out[i] = math.fsum(k * vals)
        return self.cell_volume * out.reshape(self.shape)


def build_kernel(grid: Grid, mu: float) -> RieszKernel:
    return RieszKernel(grid, mu)


def convolve_fft(kernel: RieszKernel, f: Field) -> Field:
    """``Prod(h) * sum_j K(x_i - x_j) f(x_j)`` by zero-padded FFT."""
    return Field(f.grid, kernel.convolve_array(f.values))


def convolve_direct(kernel: RieszKernel, f: Field) -> Field:
    """Same sum as :func:`convolve_fft`, by an exactly rounded double loop."""
    return Field(f.grid, kernel.convolve_direct_array(f.values))
