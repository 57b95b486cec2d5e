"""Marker averages, commutator identities, brackets, and triangle rigidity."""

import numpy as np
import pytest

from latmech.geometry import (
    averaged_vectors,
    commutator_closed_form,
    commutator_direct,
    conformal_check,
    direction_stretch,
    isotropy_defect,
    lambda_from_averages,
    lower_bracket,
    principal_stretches,
    rigidity_constant,
    sample_triangle_deformations,
    scalar_inequality_report,
    signed_svd,
    triangle_deviation,
    triangle_reference,
    triangle_spring_energy,
)
from latmech.lattice import PeriodicDeformation, Supercell

from conftest import random_deformation


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------------------
# averaged marker vectors
# ---------------------------------------------------------------------------


def test_affine_part_recovered_from_averages(all_specs):
    rng = np.random.default_rng(7)
    for spec in all_specs:
        for k in (1, 2, 3):
            defm = random_deformation(spec, k, rng)
            lam_hat = lambda_from_averages(defm)
            scale = 1.0 + np.linalg.norm(defm.lam)
            assert np.max(np.abs(lam_hat - defm.lam)) <= 1e-12 * scale


def test_averages_reduce_to_reference_at_identity(all_specs):
    for spec in all_specs:
        cell = Supercell(spec, 2)
        defm = PeriodicDeformation(cell, np.eye(2), np.zeros((cell.n_nodes, 2)))
        a1, a2, at1, at2 = averaged_vectors(defm)
        assert np.allclose(at1, a1, atol=1e-14)
        assert np.allclose(at2, a2, atol=1e-14)
        # the reference averages are the summed marker vectors
        b_sum = sum(spec.marker_vectors(m)[0] for m in range(len(spec.marker_edges)))
        r_sum = sum(spec.marker_vectors(m)[1] for m in range(len(spec.marker_edges)))
        assert np.allclose(a1, b_sum, atol=1e-14)
        assert np.allclose(a2, r_sum, atol=1e-14)


# ---------------------------------------------------------------------------
# commutator with a rotation
# ---------------------------------------------------------------------------


def test_commutator_closed_form_matches_direct():
    rng = np.random.default_rng(11)
    for _ in range(200):
        lam = rng.uniform(-2, 2, size=(2, 2))
        alpha = rng.uniform(0.1, np.pi - 0.1)
        phi = rng.uniform(0, 2 * np.pi)
        e = np.array([np.cos(phi), np.sin(phi)])
        direct = commutator_direct(lam, alpha, e)
        closed = float(commutator_closed_form(lam, alpha))
        assert abs(direct - closed) <= 1e-12 * (1.0 + closed)


def test_commutator_closed_form_svd_branches():
    rng = np.random.default_rng(12)
    for _ in range(100):
        lam = rng.uniform(-2, 2, size=(2, 2))
        alpha = rng.uniform(0.1, np.pi - 0.1)
        s = np.linalg.svd(lam, compute_uv=False)
        if np.linalg.det(lam) >= 0:
            expect = abs(np.sin(alpha)) * (s[0] - s[1])
        else:
            expect = abs(np.sin(alpha)) * (s[0] + s[1])
        assert abs(float(commutator_closed_form(lam, alpha)) - expect) <= 1e-12


def test_commutator_closed_form_batched():
    rng = np.random.default_rng(13)
    lams = rng.uniform(-2, 2, size=(7, 2, 2))
    batch = commutator_closed_form(lams, 1.1)
    assert batch.shape == (7,)
    for lam, val in zip(lams, batch):
        assert abs(float(commutator_closed_form(lam, 1.1)) - val) == 0.0


def test_commutator_vanishes_on_scaled_rotations():
    for theta in (0.0, 0.4, np.pi / 2, 2.0):
        assert float(commutator_closed_form(1.7 * _rot(theta), 1.0)) <= 1e-15


# ---------------------------------------------------------------------------
# stretches, signed SVD, brackets
# ---------------------------------------------------------------------------


def test_principal_stretches_match_numpy():
    rng = np.random.default_rng(21)
    lams = rng.uniform(-3, 3, size=(500, 2, 2))
    s1, s2, ds = principal_stretches(lams)
    sv = np.linalg.svd(lams, compute_uv=False)
    dets = np.linalg.det(lams)
    assert np.max(np.abs(s1 - sv[:, 0])) <= 1e-12
    assert np.max(np.abs(s2 - sv[:, 1])) <= 1e-12
    assert np.all(ds[dets > 0] == 1.0)
    assert np.all(ds[dets < 0] == -1.0)


def test_signed_svd_reconstructs():
    rng = np.random.default_rng(22)
    for _ in range(100):
        lam = rng.uniform(-2, 2, size=(2, 2))
        dat = signed_svd(lam)
        rebuilt = dat.U @ np.diag([dat.sigma1, dat.sigma2]) @ dat.V.T
        assert np.max(np.abs(rebuilt - lam)) <= 1e-12
        assert abs(np.linalg.det(dat.V) - 1.0) <= 1e-12
        assert abs(np.linalg.det(dat.U) - dat.det_sign) <= 1e-12
        assert dat.sigma1 >= dat.sigma2 >= 0


def test_isotropy_defect():
    assert abs(float(isotropy_defect(0.7 * _rot(1.2)))) <= 1e-15
    assert abs(float(isotropy_defect(np.diag([2.0, 1.0]))) - 1.0) <= 1e-14


def test_lower_bracket_values():
    assert float(lower_bracket(np.eye(2))) == 0.0
    # compressive scaled rotations sit exactly on the floor
    assert float(lower_bracket(0.5 * _rot(0.9))) <= 1e-15
    # diag(2, 1): anisotropy 1 plus one unit of over-stretch
    assert abs(float(lower_bracket(np.diag([2.0, 1.0]))) - 2.0) <= 1e-12
    # orientation-reversing isometries pay (sigma1 + sigma2)^2
    refl = np.diag([1.0, -1.0]) @ _rot(0.3)
    assert abs(float(lower_bracket(refl)) - 4.0) <= 1e-12
    # expansive scaled rotations pay only the over-stretch parts
    assert abs(float(lower_bracket(1.5 * _rot(0.2))) - 0.5) <= 1e-12


def test_lower_bracket_batched():
    rng = np.random.default_rng(23)
    lams = rng.uniform(-2, 2, size=(50, 2, 2))
    vals = lower_bracket(lams)
    assert vals.shape == (50,)
    assert np.all(vals >= 0)
    for lam, v in zip(lams, vals):
        assert float(lower_bracket(lam)) == v


def test_direction_stretch_axes():
    assert abs(direction_stretch(2.0, 0.5, 0.0) - 2.0) <= 1e-15
    assert abs(direction_stretch(2.0, 0.5, np.pi / 2) - 0.5) <= 1e-15
    # against the direct |diag(l1,l2) e| formula
    th = 0.77
    e = np.array([np.cos(th), np.sin(th)])
    direct = np.linalg.norm(np.diag([1.3, 0.6]) @ e)
    assert abs(direction_stretch(1.3, 0.6, th) - direct) <= 1e-14


# ---------------------------------------------------------------------------
# scalar inequality certificates (coarse grids; the dense run is in
# the acceptance suite)
# ---------------------------------------------------------------------------


def test_scalar_inequalities_on_coarse_grids():
    reports = scalar_inequality_report(lam_step=0.05, theta_step=0.01)
    names = [r.name for r in reports]
    assert names == [
        "three-direction-max",
        "two-direction-max",
        "three-direction-compression",
        "commutator-compression-three",
        "commutator-compression-two",
    ]
    for r in reports:
        assert r.min_slack >= -1e-12, r.name


def test_direction_max_witnesses():
    reports = {r.name: r for r in scalar_inequality_report(0.1, 0.05)}
    angle, value = reports["three-direction-max"].witness
    assert abs(angle - np.pi / 2) <= 1e-15
    assert abs(value - 0.75) <= 1e-15
    angle, value = reports["two-direction-max"].witness
    assert abs(angle - np.pi / 4) <= 1e-15
    assert abs(value - 0.5) <= 1e-12


# ---------------------------------------------------------------------------
# single-triangle rigidity sampling
# ---------------------------------------------------------------------------


def test_triangle_reference_geometry():
    for alpha in (np.pi / 3, 1.1, 2.0):
        A, B, C = triangle_reference(alpha)
        b = B - C
        r = B - A
        assert abs(np.linalg.norm(b) - 1.0) <= 1e-15
        assert abs(np.linalg.norm(r) - 1.0) <= 1e-15
        assert abs(float(b @ r) - np.cos(alpha)) <= 1e-14
        # r is b rotated by +alpha
        assert np.allclose(r, _rot(alpha) @ b, atol=1e-14)


def test_triangle_energy_and_deviation_vanish_on_isometries():
    alpha = np.pi / 3
    ref = triangle_reference(alpha)
    moved = (_rot(0.8) @ ref.T).T + np.array([3.0, -1.0])
    assert float(triangle_spring_energy(moved, alpha)) <= 1e-24
    assert np.linalg.norm(triangle_deviation(moved, alpha)) <= 1e-12
    # reflections are isometries too; the deviation flips its rotation sign
    mirrored = moved @ np.diag([1.0, -1.0])
    assert float(triangle_spring_energy(mirrored, alpha)) <= 1e-24
    assert np.linalg.norm(triangle_deviation(mirrored, alpha)) <= 1e-12


def test_triangle_deviation_oriented_formula():
    alpha = 1.2
    pts = triangle_reference(alpha) + 0.05 * np.array(
        [[0.3, -0.1], [-0.2, 0.4], [0.1, 0.2]])
    A, B, C = pts
    b, r = B - C, B - A
    if b[0] * r[1] - b[1] * r[0] >= 0:
        expect = r - _rot(alpha) @ b
    else:
        expect = r - _rot(-alpha) @ b
    assert np.allclose(triangle_deviation(pts, alpha), expect, atol=1e-14)


def test_sampled_rigidity_constants_positive():
    est = rigidity_constant(alpha=np.pi / 3, n_samples=20000, seed=0)
    assert est.c > 0
    assert est.cos_coeff > 0
    assert 0 < est.n_admissible <= est.n_samples
    # fresh samples respect both sampled estimates
    pts = sample_triangle_deformations(np.pi / 3, 5000, seed=99)
    E = triangle_spring_energy(pts, np.pi / 3)
    keep = E <= est.energy_cap
    z2 = np.sum(triangle_deviation(pts[keep], np.pi / 3) ** 2, axis=-1)
    assert np.all(E[keep] >= est.c * z2 - 1e-15)


def test_rigidity_constant_rejects_bad_angle():
    with pytest.raises(ValueError):
        rigidity_constant(alpha=0.0, n_samples=10)
    with pytest.raises(ValueError):
        rigidity_constant(alpha=np.pi, n_samples=10)


# ---------------------------------------------------------------------------
# conformality diagnostics for gradient fields
# ---------------------------------------------------------------------------


def test_conformal_check_exact_scaled_rotations():
    rng = np.random.default_rng(31)
    cs = rng.uniform(0.2, 0.9, size=40)
    ths = rng.uniform(0, 2 * np.pi, size=40)
    grads = np.array([c * _rot(t) for c, t in zip(cs, ths)])
    rep = conformal_check(grads)
    assert rep.cr_residual <= 1e-12
    assert rep.fit_residual <= 1e-12
    assert rep.max_anisotropy <= 1e-12
    assert abs(rep.max_factor - cs.max()) <= 1e-12
    assert rep.compressive
    assert rep.n_fields == 40


def test_conformal_check_flags_anisotropy():
    rep = conformal_check([np.diag([1.2, 0.8])])
    assert abs(rep.cr_residual_1 - 0.4) <= 1e-14
    assert rep.cr_residual_2 == 0.0
    assert abs(rep.max_anisotropy - 0.4) <= 1e-14
    # best scaled-rotation fit has modulus (1.2 + 0.8) / 2 = 1
    assert abs(rep.max_factor - 1.0) <= 1e-14
    assert abs(rep.fit_residual - np.sqrt(0.5 * 0.4**2)) <= 1e-14


def test_conformal_check_orientation_reversal():
    # a reflection is anti-conformal: the cR fit collapses
    rep = conformal_check([np.diag([1.0, -1.0])])
    assert abs(rep.max_factor - 0.0) <= 1e-14
    assert abs(rep.cr_residual_1 - 2.0) <= 1e-14


def test_conformal_check_expansive_not_compressive():
    rep = conformal_check([1.5 * _rot(0.3)])
    assert not rep.compressive
    assert abs(rep.max_factor - 1.5) <= 1e-12


def test_conformal_check_weights_and_validation():
    grads = [np.eye(2), np.diag([2.0, 1.0])]
    heavy_first = conformal_check(grads, areas=[0.99, 0.01])
    heavy_second = conformal_check(grads, areas=[0.01, 0.99])
    assert heavy_first.cr_residual < heavy_second.cr_residual
    with pytest.raises(ValueError):
        conformal_check(np.zeros((0, 2, 2)))
    with pytest.raises(ValueError):
        conformal_check(grads, areas=[1.0])
    with pytest.raises(ValueError):
        conformal_check(grads, areas=[-1.0, 2.0])
