"""Conformal targets, twist modulation, and weak-limit diagnostics."""

import numpy as np
import pytest

from latmech.energy import LatticeMap, domain_energy
from latmech.mechanisms import twist_mechanism
from latmech.softmodes import (
    ConformalTarget,
    default_target,
    mechanism_state_table,
    modulate,
    soft_mode_report,
    weak_limit_check,
)


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------


def test_target_validation():
    with pytest.raises(ValueError):
        ConformalTarget(coeffs=(0.0, 0.5), domain=(1.0, 1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        # f(z) = z / (z - 0.5) has a pole inside the domain
        ConformalTarget(coeffs=(0.0, 1.0), domain=(0.0, 1.0, -0.5, 0.5),
                        denom=(-0.5, 1.0))
    with pytest.raises(ValueError):
        # |f'| = 1.5 > 1 everywhere
        ConformalTarget(coeffs=(0.0, 1.5), domain=(0.0, 1.0, 0.0, 1.0))


def test_target_rational_map():
    # f(z) = z / (2 - z): |f'| = 2 / |2 - z|^2 <= 8/9 on the domain
    tgt = ConformalTarget(coeffs=(0.0, 1.0), domain=(0.0, 0.5, -0.2, 0.2),
                          denom=(2.0, -1.0))
    z = 0.3 + 0.1j
    assert abs(tgt.value(z) - z / (2 - z)) <= 1e-14
    assert abs(tgt.derivative(z) - 2 / (2 - z) ** 2) <= 1e-14
    assert tgt.max_derivative <= 8 / 9 + 1e-12


def test_default_target_shape():
    tgt = default_target()
    assert tgt.domain == (0.2, 1.2, -0.5, 0.5)
    assert tgt.area == 1.0
    assert tgt.polygon.shape == (4, 2)
    z = 0.5 - 0.2j
    assert abs(tgt.value(z) - (z - z**2 / 4)) <= 1e-14
    assert abs(tgt.derivative(z) - (1 - z / 2)) <= 1e-14
    # |f'(z)| = |1 - z/2| spans about [0.40, 0.94] over the rectangle
    assert abs(tgt.min_derivative - 0.4) <= 1e-12
    assert abs(tgt.max_derivative - abs(1 - (0.2 + 0.5j) / 2)) <= 1e-12
    assert tgt.max_derivative < 1.0


# ---------------------------------------------------------------------------
# modulation
# ---------------------------------------------------------------------------


def test_uniform_target_is_reproduced_exactly(kagome):
    # constant |f'| needs no spatial modulation: the map is an exact
    # mechanism up to rounding, before and after relaxation
    tgt = ConformalTarget(coeffs=(0.0, 0.7), domain=(-0.4, 0.4, -0.4, 0.4))
    for sweeps in (0, 50):
        lmap = modulate(kagome, tgt, 1 / 8, relax_sweeps=sweeps)
        rep = domain_energy(lmap, tgt.polygon, 0.05)
        assert rep.total <= 1e-16
        assert rep.n_cells > 0


def test_modulate_rejects_unreachable_contraction(kagome):
    tgt = ConformalTarget(coeffs=(0.0, 1e-5), domain=(-0.4, 0.4, -0.4, 0.4))
    with pytest.raises(ValueError, match="reachable mechanism contraction"):
        modulate(kagome, tgt, 1 / 8)


def test_soft_mode_energy_decays(kagome):
    rep = soft_mode_report(kagome, default_target(), eps_list=(1 / 8, 1 / 16))
    assert len(rep.maps) == 2
    assert rep.energy_densities[1] < rep.energy_densities[0]
    assert rep.monotone_violation_fraction == 0.0
    assert rep.final_over_first < 1.0
    assert rep.exponent_defined
    assert rep.fitted_exponent > 0.5
    assert rep.n_cells[1] > rep.n_cells[0]
    rows = list(rep.rows())
    assert len(rows) == 2
    assert rows[0][0] == 1 / 8
    # per-cell worst case controls the density
    for _, dens, mx, n in rows:
        assert dens <= mx * n / default_target().area + 1e-18


def test_uniform_target_marks_exponent_undefined(kagome):
    tgt = ConformalTarget(coeffs=(0.0, 0.7), domain=(-0.4, 0.4, -0.4, 0.4))
    rep = soft_mode_report(kagome, tgt, eps_list=(1 / 8, 1 / 16))
    assert not rep.exponent_defined
    assert max(rep.energy_densities) <= 1e-12


# ---------------------------------------------------------------------------
# weak-limit diagnostics
# ---------------------------------------------------------------------------


def test_weak_limit_check_converges(kagome):
    rep = soft_mode_report(kagome, default_target(), eps_list=(1 / 8, 1 / 16))
    wl = weak_limit_check(rep.maps, default_target())
    assert wl.n_probe == 144
    assert wl.l2_decreasing
    assert wl.cr_decreasing
    assert wl.l2_errors[-1] < 0.05
    assert all(f <= 1.0 + 0.05 for f in wl.max_factors)
    assert all(n > 0 for n in wl.n_boxes)


def test_weak_limit_check_flags_corruption(kagome):
    rep = soft_mode_report(kagome, default_target(), eps_list=(1 / 16,))
    lm = rep.maps[0]
    squeeze = np.diag([1.3, 0.7])
    bad = LatticeMap(lm.spec, lm.epsilon,
                     {k: squeeze @ v for k, v in lm.values.items()})
    good = weak_limit_check([lm], default_target())
    worse = weak_limit_check([bad], default_target())
    assert worse.cr_residuals[0] > 0.2 > good.cr_residuals[0]
    assert worse.l2_errors[0] > 0.1 > good.l2_errors[0]


def test_weak_limit_check_validation():
    with pytest.raises(ValueError):
        weak_limit_check([], default_target())


def test_modulated_cells_preserve_orientation(kagome):
    # every penalized triangle in every counted cell keeps its orientation
    # (the soft hinge regions between units are allowed to shear freely)
    lmap = modulate(kagome, default_target(), 1 / 16)
    rep = domain_energy(lmap, default_target().polygon, 0.05)
    assert rep.n_cells > 0
    for (ci, cj) in rep.cells:
        for t in kagome.penalized_triangles:
            keys = [(n, (o1 + ci, o2 + cj)) for n, (o1, o2) in t.nodes]
            p0, p1, p2 = (lmap.values[k] for k in keys)
            q0, q1, q2 = (kagome.node_position(r) for r in t.nodes)
            ref = (q1 - q0)[0] * (q2 - q0)[1] - (q1 - q0)[1] * (q2 - q0)[0]
            defc = (p1 - p0)[0] * (p2 - p0)[1] - (p1 - p0)[1] * (p2 - p0)[0]
            assert defc / ref > 0


# ---------------------------------------------------------------------------
# state tables
# ---------------------------------------------------------------------------


def test_state_table_from_twist_family(kagome):
    mechs = [twist_mechanism(kagome, th) for th in np.linspace(0.08, 1.5, 13)]
    table = mechanism_state_table(kagome, mechs)
    assert table.k == 1
    assert table.c_min < 0.1 and table.c_max > 0.99
    assert sorted(table.angles) == sorted(table.offsets)
    # interpolated angle at a tabulated contraction matches the table
    c5 = float(table.cs[5])
    res = sorted(table.angles)[0]
    ang, off = table.state(res, c5)
    assert abs(ang - table.angles[res][5]) <= 1e-12
    assert np.allclose(off, table.offsets[res][5], atol=1e-12)


def test_state_table_modulation_matches_builtin_path(kagome):
    mechs = [twist_mechanism(kagome, th) for th in np.linspace(0.08, 1.5, 13)]
    table = mechanism_state_table(kagome, mechs)
    via_table = modulate(kagome, default_target(), 1 / 8, states=table)
    builtin = modulate(kagome, default_target(), 1 / 8)
    assert set(via_table.values) == set(builtin.values)
    gap = max(np.linalg.norm(via_table.values[k] - builtin.values[k])
              for k in builtin.values)
    assert gap <= 1e-3
    e1 = domain_energy(via_table, default_target().polygon, 0.05).total
    e2 = domain_energy(builtin, default_target().polygon, 0.05).total
    assert abs(e1 - e2) <= 0.2 * max(e1, e2)


def test_state_table_rejects_mixed_or_anisotropic(kagome):
    with pytest.raises(ValueError):
        mechanism_state_table(kagome, [])
    m1 = twist_mechanism(kagome, 0.3, k=1)
    m2 = twist_mechanism(kagome, 0.6, k=2)
    with pytest.raises(ValueError):
        mechanism_state_table(kagome, [m1, m2])
    with pytest.raises(ValueError):
        # duplicate contractions cannot be interpolated
        mechanism_state_table(kagome, [m1, m1])
