import itertools
from dataclasses import dataclass

import numpy as np
import pytest

from choquard.bubbles import seed_bubble
from choquard.diagnostics import (barycenter, barycenter_localization_check, dedup, gradient_energy_density,
                                  multiplicity_verdict)
from choquard.energy import ChoquardParams
from choquard.grid import DomainSpec, Field, build_grid, grad_sq_integral
from choquard.solver import SolverConfig, multistart


@dataclass
class Rec:
    energy: float
    barycenter: tuple


@pytest.fixture(scope="module")
def disk64():
    spec = DomainSpec.ball((0, 0), 1.0)
    return spec, build_grid(spec, 64)


# -- barycenter -----------------------------------------------------------------

def test_density_sums_to_gradient_energy(disk16, rng):
    u = Field(disk16, rng.standard_normal(disk16.shape))
    total = disk16.cell_volume * gradient_energy_density(u).sum()
    assert total == pytest.approx(grad_sq_integral(u), rel=1e-12)


def test_point_symmetric_field(disk64, rng):
    spec, g = disk64
    v = np.where(g.mask, rng.random(g.shape), 0.0)
    sym = Field(g, v + v[::-1, ::-1])
    assert np.allclose(barycenter(sym), (0.0, 0.0), atol=1e-10)


def test_translation_covariance(disk64):
    spec, g = disk64
    u = seed_bubble(g, spec, (0.1, 0.0), 10.0)
    shifted = Field(g, np.roll(u.values, (3, -2), axis=(0, 1)))
    expected = np.add(barycenter(u), (3 * g.h[0], -2 * g.h[1]))
    assert np.allclose(barycenter(shifted), expected, rtol=0, atol=1e-12)


def test_scale_invariance(disk16, rng):
    u = Field(disk16, rng.standard_normal(disk16.shape))
    b = barycenter(u)
    for s in (-3.0, 1e-5, 7.0):
        assert np.allclose(barycenter(u * s), b, rtol=1e-12, atol=1e-14)


def test_barycenter_in_hull(disk16, rng):
    u = Field(disk16, rng.random(disk16.shape))
    assert np.linalg.norm(barycenter(u)) <= 1.0


def test_zero_field_has_no_barycenter(disk16):
    with pytest.raises(ValueError, match="zero gradient energy"):
        barycenter(Field.zeros(disk16))


@pytest.mark.parametrize("R", [8.0, 16.0])
def test_bubble_barycenter_near_center(disk64, R):
    spec, g = disk64
    x0 = (0.21, -0.13)
    assert np.linalg.norm(np.subtract(barycenter(seed_bubble(g, spec, x0, R)), x0)) < 2 * g.h[0]


# -- dedup ----------------------------------------------------------------------

def test_identical_records_one_class():
    cls = dedup([Rec(1.0, (0.0, 0.0)), Rec(1.0, (0.0, 0.0))], 1e-4, 0.1)
    assert len(cls) == 1 and cls[0].member_count == 2


def test_far_barycenters_two_classes():
    cls = dedup([Rec(1.0, (0.0, 0.0)), Rec(1.0, (1.0, 0.0))], 1e-4, 0.1)
    assert len(cls) == 2


def test_energy_gap_splits():
    cls = dedup([Rec(1.0, (0.0, 0.0)), Rec(1.1, (0.0, 0.0))], 1e-4, 0.1)
    assert [c.energy for c in cls] == [1.0, 1.1]


def test_chain_merges_transitively():
    recs = [Rec(1.0, (0.0, 0.0)), Rec(1.0, (0.08, 0.0)), Rec(1.0, (0.16, 0.0))]
    assert len(dedup(recs, 1e-4, 0.1)) == 1


def test_partition_and_permutation_invariance():
    recs = [Rec(1.0, (0.0, 0.0)), Rec(1.00001, (0.01, 0.0)), Rec(1.0, (0.5, 0.5)),
            Rec(2.0, (0.0, 0.0)), Rec(1.0, (0.5, 0.52))]
    ref = dedup(recs, 1e-4, 0.1)
    assert sum(c.member_count for c in ref) == len(recs)
    assert ref[0].representative.energy == min(m.energy for m in ref[0].members)
    for perm in itertools.permutations(recs):
        out = dedup(list(perm), 1e-4, 0.1)
        assert [(c.energy, c.barycenter, c.member_count) for c in out] == \
               [(c.energy, c.barycenter, c.member_count) for c in ref]


def test_annulus_multistart_permutation(annulus, annulus27, kernel_ann):
    params = ChoquardParams.from_eps(3, 1.0, 0.0, 0.1)
    cfg = SolverConfig(seed_count=8)
    res = multistart(annulus27, annulus, params, kernel_ann, cfg)
    bary = cfg.bary_dist_h * min(annulus27.h)
    n = len(res.classes)
    rng = np.random.default_rng(4)
    for _ in range(5):
        perm = [res.converged[i] for i in rng.permutation(len(res.converged))]
        assert len(dedup(perm, cfg.energy_rtol, bary, annulus)) == n


# -- localization and verdict -----------------------------------------------------

def test_localization_disk_and_negative_control(disk):
    ok = barycenter_localization_check(dedup([Rec(2.0, (0.0, 0.0))], 1e-4, 0.1, disk), disk, 2.0)
    assert ok.ok and ok.delta == pytest.approx(0.2)
    far = dedup([Rec(2.0, (0.0, 0.0)), Rec(2.1, (3.0, 0.0)), Rec(9.0, (5.0, 0.0))], 1e-4, 0.1, disk)
    rep = barycenter_localization_check(far, disk, 2.0)
    assert not rep.ok
    assert rep.violations == [(2.1, (3.0, 0.0))]
    assert len(rep.checked) == 2


def test_translated_field_is_flagged(disk64):
    # shift a seeded bubble far right so its barycenter leaves the outer neighborhood
    spec, g = disk64
    u = seed_bubble(g, spec, (0.0, 0.0), 10.0)
    wide = build_grid(DomainSpec.box((-1.0, -1.0), (3.0, 1.0)), 64)
    v = np.zeros(wide.shape)
    c = wide.index_of((2.0, 0.0))
    half = [s // 2 for s in g.shape]
    v[c[0] - half[0]:c[0] - half[0] + g.shape[0], c[1] - half[1]:c[1] - half[1] + g.shape[1]] = u.values
    b = barycenter(Field(wide, v))
    assert b[0] > 1.5
    classes = dedup([Rec(1.0, (0.0, 0.0)), Rec(1.0, b)], 1e-4, 0.1, spec)
    assert not barycenter_localization_check(classes, spec, 1.0).ok


def test_verdicts(annulus, disk):
    one = dedup([Rec(1.0, (0.7, 0.0))], 1e-4, 0.1, annulus)
    v = multiplicity_verdict(one, annulus, 1.0)
    assert v.status == "INCONCLUSIVE" and "more seeds" in v.advice and "finer grid" in v.advice
    two = dedup([Rec(1.0, (0.7, 0.0)), Rec(1.0, (-0.7, 0.0))], 1e-4, 0.1, annulus)
    assert multiplicity_verdict(two, annulus, 1.0).status == "PASS"
    assert multiplicity_verdict(dedup([Rec(1.0, (0.0, 0.0))], 1e-4, 0.1, disk), disk, 1.0).status == "PASS"
    # classes above the band do not count
    high = dedup([Rec(1.0, (0.7, 0.0)), Rec(5.0, (-0.7, 0.0))], 1e-4, 0.1, annulus)
    v = multiplicity_verdict(high, annulus, 1.0)
    assert v.status == "INCONCLUSIVE" and v.low_energy_classes == 1
    assert "INCONCLUSIVE" in v.summary()
