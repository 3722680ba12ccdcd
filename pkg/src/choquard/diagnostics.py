"""Barycenters, solution classes and the multiplicity verdict."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DomainSpec, Field, in_omega_r_plus


def gradient_energy_density(u: Field) -> np.ndarray:
    """Nodal share of |grad u|^2: each edge's squared difference quotient is
    split evenly between its interior endpoints, so the density times the
    cell volume sums to the gradient energy."""
    v = u.values
    m = u.grid.mask
    dens = np.zeros_like(v)
    for ax, hx in enumerate(u.grid.h):
        d2 = (np.diff(v, axis=ax) / hx) ** 2
        lo = [slice(None)] * v.ndim
        hi = [slice(None)] * v.ndim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        m_lo, m_hi = m[tuple(lo)], m[tuple(hi)]
        share = np.where(m_lo & m_hi, 0.5, 1.0)
        dens[tuple(lo)] += np.where(m_lo, share * d2, 0.0)
        dens[tuple(hi)] += np.where(m_hi, share * d2, 0.0)
    return dens


def barycenter(u: Field) -> tuple[float, ...]:
    """Gradient-energy weighted center of mass of u.

    Raises
    ------
    ValueError
        If u has no gradient energy (the zero field).
    """
    dens = gradient_energy_density(u)[u.grid.mask]
    total = dens.sum()
    if not total > 0:
        raise ValueError("barycenter of a field with zero gradient energy is undefined")
    pts = u.grid.coordinates()[u.grid.mask]
    return tuple(float(c) for c in (dens @ pts) / total)


@dataclass
class ClassSummary:
    representative: object  # SolutionRecord
    member_count: int
    barycenter: tuple[float, ...]
    in_omega_r_plus: bool | None = None
    members: list = field(default_factory=list, repr=False)

    @property
    def energy(self) -> float:
        return self.representative.energy


def _sort_key(rec):
    return (rec.energy, tuple(rec.barycenter))


def dedup(records, energy_rtol: float, bary_dist: float, spec: DomainSpec | None = None) -> list[ClassSummary]:
    """Group records whose energies agree to ``energy_rtol`` (relative) and
    whose barycenters lie within ``bary_dist``; union-find over all pairs.

    Classes come back sorted by energy. The result is independent of the
    input order.
    """
    recs = sorted(records, key=_sort_key)
    parent = list(range(len(recs)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(recs)):
        for j in range(i + 1, len(recs)):
            ei, ej = recs[i].energy, recs[j].energy
            close_e = abs(ei - ej) <= energy_rtol * max(abs(ei), abs(ej))
            close_b = np.linalg.norm(np.subtract(recs[i].barycenter, recs[j].barycenter)) < bary_dist
            if close_e and close_b:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list] = {}
    for i in range(len(recs)):
        groups.setdefault(find(i), []).append(recs[i])
    classes = []
    for members in groups.values():
        rep = min(members, key=_sort_key)
        classes.append(ClassSummary(
            representative=rep, member_count=len(members), barycenter=tuple(rep.barycenter),
            in_omega_r_plus=None if spec is None else in_omega_r_plus(spec, rep.barycenter),
            members=members))
    classes.sort(key=lambda c: _sort_key(c.representative))
    return classes


@dataclass
class LocalizationReport:
    m_eps: float
    delta: float
    checked: list[tuple[float, tuple[float, ...], bool]]
    violations: list[tuple[float, tuple[float, ...]]]

    @property
    def ok(self) -> bool:
        return not self.violations


def barycenter_localization_check(classes, spec: DomainSpec, m_eps: float,
                                  delta: float | None = None) -> LocalizationReport:
    """Every class with energy below ``m_eps + delta`` must have its
    barycenter within r_margin of the domain. ``delta`` defaults to
    ``0.1 * m_eps``."""
    delta = 0.1 * m_eps if delta is None else delta
    checked, bad = [], []
    for c in classes:
        if c.energy < m_eps + delta:
            inside = in_omega_r_plus(spec, c.barycenter)
            checked.append((c.energy, c.barycenter, inside))
            if not inside:
                bad.append((c.energy, c.barycenter))
    return LocalizationReport(m_eps=m_eps, delta=delta, checked=checked, violations=bad)


@dataclass
class Verdict:
    status: str  # "PASS" or "INCONCLUSIVE"
    low_energy_classes: int
    declared_category: int
    advice: str = ""

    def summary(self) -> str:
        s = (f"verdict {self.status}: {self.low_energy_classes} low-energy class(es), "
             f"declared category {self.declared_category}")
        return s + (f" ({self.advice})" if self.advice else "")


def multiplicity_verdict(classes, spec: DomainSpec, m_eps: float, delta: float | None = None) -> Verdict:
    """PASS when the low-energy classes are at least as many as the declared
    category; otherwise INCONCLUSIVE, since a numerical search can always
    miss solutions."""
    delta = 0.1 * m_eps if delta is None else delta
    low = sum(1 for c in classes if c.energy < m_eps + delta)
    if low >= spec.declared_category:
        return Verdict("PASS", low, spec.declared_category)
    return Verdict("INCONCLUSIVE", low, spec.declared_category,
                   advice="try more seeds, a finer grid or a smaller eps")
