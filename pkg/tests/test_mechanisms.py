"""Rigid units, twist mechanisms, search, and the kagome domain wall."""

import numpy as np
import pytest

from latmech.energy import energy_breakdown, triangle_dets
from latmech.lattice import Supercell, build_variant
from latmech.mechanisms import (
    MechanismError,
    assemble_rotated_units,
    certify,
    domain_wall_angles,
    domain_wall_mechanism,
    mechanism_search,
    mechanism_tangent_rank,
    rigid_units,
    search_mechanisms,
    twist_admissible_range,
    twist_mechanism,
)

from conftest import random_deformation


# ---------------------------------------------------------------------------
# rigid units
# ---------------------------------------------------------------------------


def test_rigid_units_two_colored(all_specs):
    for spec in all_specs:
        units = rigid_units(spec)
        assert len(units) == 2
        assert sorted(u.parity for u in units) == [0, 1]
        covered = {t for u in units for (t, _) in u.triangles}
        assert covered == set(range(len(spec.penalized_triangles)))


def test_rigid_unit_sizes(kagome, rotating_squares):
    # kagome triangles are their own units; each square glues two triangles
    assert sorted(len(u.triangles) for u in rigid_units(kagome)) == [1, 1]
    assert sorted(len(u.triangles) for u in rigid_units(rotating_squares)) == [2, 2]


def test_assemble_zero_rotation_reproduces_reference(kagome):
    units = rigid_units(kagome)
    cells = [(i, j) for i in range(3) for j in range(3)]
    pos, misfit = assemble_rotated_units(kagome, units, cells, lambda u, ci, cj: 0.0)
    assert misfit <= 1e-14
    for key, y in pos.items():
        assert np.allclose(y, kagome.node_position(key), atol=1e-14)


# ---------------------------------------------------------------------------
# counter-rotation mechanisms
# ---------------------------------------------------------------------------


def test_twist_zero_angle_is_reference(all_specs):
    for spec in all_specs:
        mech = twist_mechanism(spec, 0.0)
        assert np.allclose(mech.deformation.lam, np.eye(2), atol=1e-14)
        assert np.max(np.abs(mech.deformation.psi)) <= 1e-12


def test_twist_certificates_on_builtins(kagome, rotating_squares):
    for spec in (kagome, rotating_squares):
        for theta in (0.1, 0.4, 0.8, 1.2):
            mech = twist_mechanism(spec, theta, k=1)
            cert = mech.certificate
            assert cert.energy <= 1e-12
            assert cert.max_spring_residual <= 1e-10
            assert cert.min_det > 0
            # the affine part is the isotropic contraction cos(theta) * I
            assert np.allclose(
                mech.deformation.lam, np.cos(theta) * np.eye(2), atol=1e-12)
            assert cert.isotropy_defect <= 1e-12
            assert cert.sigma1 <= 1 + 1e-8


def test_twist_certificates_on_variants(twist_specs):
    for spec in twist_specs[2:]:
        mech = twist_mechanism(spec, 0.6, k=2)
        cert = mech.certificate
        assert cert.energy <= 1e-12
        assert cert.min_det > 0
        assert cert.isotropy_defect <= 1e-8
        assert cert.sigma1 <= 1 + 1e-8


def test_twist_respects_supercell_period(kagome):
    m1 = twist_mechanism(kagome, 0.5, k=1)
    m3 = twist_mechanism(kagome, 0.5, k=3)
    assert np.allclose(m1.deformation.lam, m3.deformation.lam, atol=1e-12)
    assert m3.certificate.energy <= 1e-12


def test_twist_admissible_range_symmetric(twist_specs):
    for spec in twist_specs:
        lo, hi = twist_admissible_range(spec, probe_step=0.05)
        assert lo == -hi
        assert hi > 0.5
        # the contraction decreases strictly on the admissible branch
        cs = [twist_mechanism(spec, t).certificate.sigma1
              for t in np.linspace(0.05, hi, 6)]
        assert all(a > b for a, b in zip(cs, cs[1:]))


def test_twist_closure_failure_raises():
    # breaking the side-length balance of the quad stops the pin chase
    spec = build_variant("quad-squares", alpha=1.2, s=0.3, q=0.6)
    with pytest.raises(MechanismError):
        twist_mechanism(spec, 0.2)


# ---------------------------------------------------------------------------
# certification of arbitrary deformations
# ---------------------------------------------------------------------------


def test_certify_rejects_random_deformation(kagome):
    rng = np.random.default_rng(5)
    defm = random_deformation(kagome, 2, rng)
    cert = certify(defm, eta_ref=0.1)
    bd = energy_breakdown(defm, 0.1)
    assert cert.energy == bd.averaged
    assert cert.energy > 1e-6
    assert cert.max_spring_residual > 1e-6
    assert cert.min_det == min(float(np.min(d)) for d in triangle_dets(defm))
    assert np.array_equal(cert.lam, defm.lam)


# ---------------------------------------------------------------------------
# numerical search
# ---------------------------------------------------------------------------


def test_search_finds_mechanisms(kagome):
    hits = search_mechanisms(kagome, 1, restarts=6, rng_seed=0)
    assert hits
    for mech in hits:
        assert mech.certificate.energy <= 1e-12
        assert mech.certificate.min_det > 0
        assert mech.certificate.sigma1 <= 1 + 1e-8
    energies = [m.certificate.energy for m in hits]
    assert energies == sorted(energies)


def test_search_accepts_twist_seed(rotating_squares):
    seed = twist_mechanism(rotating_squares, 0.7, k=1).deformation
    best = mechanism_search(rotating_squares, 1, seed=seed, restarts=1)
    assert best is not None
    assert best.certificate.energy <= 1e-12
    # the seeded start stays near the seeded contraction
    assert abs(best.certificate.sigma1 - np.cos(0.7)) <= 1e-4


# ---------------------------------------------------------------------------
# first-order mechanism space dimensions
# ---------------------------------------------------------------------------


def test_tangent_ranks(kagome, rotating_squares):
    assert mechanism_tangent_rank(kagome, 1) == (4, 1)
    assert mechanism_tangent_rank(kagome, 2) == (7, 4)
    assert mechanism_tangent_rank(rotating_squares, 1) == (4, 1)
    assert mechanism_tangent_rank(rotating_squares, 2) == (4, 1)


# ---------------------------------------------------------------------------
# domain wall
# ---------------------------------------------------------------------------


def test_wall_angles_flat_column_is_fixed_point():
    th = domain_wall_angles(2 * np.pi / 3, n=20)
    assert np.max(np.abs(th - 2 * np.pi / 3)) <= 1e-14


def test_wall_angles_validation():
    with pytest.raises(ValueError):
        domain_wall_angles(2 * np.pi / 3 - 0.01)
    with pytest.raises(ValueError):
        domain_wall_angles(np.pi)


def test_wall_angles_saturate():
    th = domain_wall_angles(2.2, n=25)
    assert np.all(np.diff(th) >= -1e-14)        # monotone outward
    assert abs(th[20] - th[10]) < 1e-3          # convergence to the limit
    assert th[-1] < np.pi


def test_wall_strip_assembles():
    wall = domain_wall_mechanism(2.2, half_width=6, rows=3)
    assert wall.max_misfit <= 1e-10
    assert wall.max_spring_residual <= 1e-10
    assert wall.min_det > 0
    assert 0 < wall.compression_right <= 1.0
    assert wall.far_field_gap <= 1e-8
    # compression profile is mirror symmetric about the wall
    prof = wall.compression_profile
    for col in prof:
        if -col in prof:
            assert abs(prof[col] - prof[-col]) <= 1e-10
    # the far field contracts like the limiting twist state
    c_limit = abs(np.cos(wall.theta_limit - 2 * np.pi / 3))
    assert abs(wall.compression_right - c_limit) <= 1e-2
    assert abs(wall.vertical_compression - wall.compression_right) <= 1e-3
