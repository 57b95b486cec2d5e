"""Marker geometry: averaged vectors, commutators, stretches, inequalities.

The load-bearing identity: for any deformation ``u = lam x + psi`` with
``psi`` periodic on a ``k x k`` supercell, the cell averages of the
deformed marker vectors satisfy ``atilde_i = lam a_i`` -- the periodic
part telescopes away along the straight spring lines the markers sit on.
Combined with ``r = c R(alpha) b`` this forces ``lam R(alpha) a1 =
R(alpha) lam a1`` for mechanisms, and the size of the commutator
``lam R - R lam`` is what the closed form here measures.

Also provided: an orientation-aware singular value decomposition, the
lower-bound bracket built from principal stretches, grid certificates for
the scalar inequalities used by the lower-bound argument, and sampled
rigidity constants for a single spring triangle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lattice import PeriodicDeformation, rotation

__all__ = [
    "averaged_vectors",
    "lambda_from_averages",
    "commutator_direct",
    "commutator_closed_form",
    "principal_stretches",
    "StretchData",
    "signed_svd",
    "isotropy_defect",
    "lower_bracket",
    "ScalarInequalityReport",
    "scalar_inequality_report",
    "direction_stretch",
    "triangle_reference",
    "triangle_spring_energy",
    "triangle_deviation",
    "RigidityEstimate",
    "rigidity_constant",
    "sample_triangle_deformations",
    "ConformalFieldReport",
    "conformal_check",
]


# ---------------------------------------------------------------------------
# averaged marker vectors
# ---------------------------------------------------------------------------


def averaged_vectors(defm: PeriodicDeformation):
    """Reference and deformed cell averages of the marker vectors.

    Returns ``(a1, a2, at1, at2)`` where ``a_i`` sum the reference ``b``
    and ``r`` vectors over markers and ``at_i`` average the deformed ones
    over all cells (divided by ``k^2`` only, matching the reference
    normalization).
    """
    cell = defm.cell
    lam, psi = defm.lam, defm.psi
    kk = cell.k * cell.k
    a1 = np.zeros(2)
    a2 = np.zeros(2)
    at1 = np.zeros(2)
    at2 = np.zeros(2)
    for table in cell.marker_tables:
        a1 += table.b_dx
        a2 += table.r_dx
        bt = psi[table.b_head] - psi[table.b_tail] + (lam @ table.b_dx)[None, :]
        rt = psi[table.r_head] - psi[table.r_tail] + (lam @ table.r_dx)[None, :]
        at1 += bt.sum(axis=0) / kk
        at2 += rt.sum(axis=0) / kk
    return a1, a2, at1, at2


def lambda_from_averages(defm: PeriodicDeformation) -> np.ndarray:
    """Recover the affine part from averaged marker vectors: the unique
    matrix with ``atilde_i = lam a_i``."""
    a1, a2, at1, at2 = averaged_vectors(defm)
    A = np.column_stack([a1, a2])
    At = np.column_stack([at1, at2])
    return At @ np.linalg.inv(A)


# ---------------------------------------------------------------------------
# commutator with a rotation
# ---------------------------------------------------------------------------


def commutator_direct(lam, alpha: float, e=None) -> float:
    """``|(lam R(alpha) - R(alpha) lam) e|`` for a unit vector ``e``."""
    R = rotation(alpha)
    C = lam @ R - R @ lam
    if e is None:
        e = np.array([1.0, 0.0])
    return float(np.linalg.norm(C @ e))


def commutator_closed_form(lam, alpha: float):
    """Closed form of the commutator norm, independent of the unit vector:

    ``|sin(alpha)| * (sigma1 - sigma2)``  when ``det lam >= 0``,
    ``|sin(alpha)| * (sigma1 + sigma2)``  when ``det lam < 0``.

    Both branches equal ``|sin(alpha)| * hypot(a - d, b + c)``, which is
    what is evaluated; accepts stacked matrices ``(..., 2, 2)``.
    """
    lam = np.asarray(lam, dtype=float)
    a, b = lam[..., 0, 0], lam[..., 0, 1]
    c, d = lam[..., 1, 0], lam[..., 1, 1]
    return np.abs(np.sin(alpha)) * np.hypot(a - d, b + c)


# ---------------------------------------------------------------------------
# stretches and the lower-bound bracket
# ---------------------------------------------------------------------------


def principal_stretches(lam):
    """Singular values and determinant sign, vectorized over ``(..., 2, 2)``.

    Returns ``(sigma1, sigma2, det_sign)`` with ``sigma1 >= sigma2 >= 0``
    and ``det_sign`` +1 for ``det >= 0``, else -1.
    """
    lam = np.asarray(lam, dtype=float)
    a, b = lam[..., 0, 0], lam[..., 0, 1]
    c, d = lam[..., 1, 0], lam[..., 1, 1]
    P = np.hypot(a + d, b - c)
    M = np.hypot(a - d, b + c)
    sigma1 = 0.5 * (P + M)
    sigma2 = 0.5 * np.abs(P - M)
    det_sign = np.where(a * d - b * c >= 0, 1.0, -1.0)
    return sigma1, sigma2, det_sign


def isotropy_defect(lam) -> float:
    """``sigma1 - sigma2``; zero exactly on scalar multiples of rotations."""
    s1, s2, _ = principal_stretches(lam)
    return s1 - s2


@dataclass
class StretchData:
    """Orientation-aware SVD ``lam = U diag(sigma1, sigma2) V^T`` with
    ``V`` always a rotation; ``U`` is a rotation iff ``det lam >= 0`` and
    a reflection (``det U = -1``) otherwise."""

    sigma1: float
    sigma2: float
    det_sign: float
    U: np.ndarray
    V: np.ndarray


def signed_svd(lam) -> StretchData:
    lam = np.asarray(lam, dtype=float).reshape(2, 2)
    U, S, Vt = np.linalg.svd(lam)
    if np.linalg.det(Vt) < 0:
        flip = np.diag([1.0, -1.0])
        Vt = flip @ Vt
        U = U @ flip
    det_sign = 1.0 if np.linalg.det(lam) >= 0 else -1.0
    return StretchData(float(S[0]), float(S[1]), det_sign, U, Vt.T)


def _relu(x):
    return np.maximum(x, 0.0)


def lower_bracket(lam):
    """The quantity the effective energy density is bounded below by a
    multiple of: ``(sigma1 -+ sigma2)^2 + (sigma1 - 1)_+^2 +
    (sigma2 - 1)_+^2`` with ``-`` for ``det >= 0`` and ``+`` otherwise.
    Vectorized over stacked matrices."""
    s1, s2, ds = principal_stretches(lam)
    first = np.where(ds >= 0, (s1 - s2) ** 2, (s1 + s2) ** 2)
    return first + _relu(s1 - 1) ** 2 + _relu(s2 - 1) ** 2


# ---------------------------------------------------------------------------
# scalar inequality certificates
# ---------------------------------------------------------------------------


def direction_stretch(l1, l2, theta):
    """``|diag(l1, l2) e_theta|`` for the unit direction at angle theta
    measured from the first principal axis."""
    return np.sqrt(l2**2 + (l1**2 - l2**2) * np.cos(theta) ** 2)


@dataclass
class ScalarInequalityReport:
    name: str
    min_slack: float
    argmin: tuple
    witness: Optional[tuple] = None


def _pair_grid(step):
    vals = np.arange(0.0, 3.0 + 0.5 * step, step)
    l1, l2 = np.meshgrid(vals, vals, indexing="ij")
    keep = l1 >= l2
    return l1[keep], l2[keep]


def scalar_inequality_report(lam_step: float = 0.01, theta_step: float = 0.001):
    """Certify the scalar inequalities behind the lower bound on dense
    grids; returns a list of :class:`ScalarInequalityReport`.

    Grids: ``0 <= l2 <= l1 <= 3`` in steps of ``lam_step`` and directions
    ``theta in [0, 2 pi)`` in steps of ``theta_step``.
    """
    reports = []
    l1, l2 = _pair_grid(lam_step)
    theta = np.arange(0.0, 2 * np.pi, theta_step)

    # direction maxima: max_d cos^2(theta + offsets) with its floor
    for name, offsets, floor, witness_angle in (
        ("three-direction-max", (0.0, np.pi / 3, 2 * np.pi / 3), 0.75, np.pi / 2),
        ("two-direction-max", (0.0, np.pi / 2), 0.5, np.pi / 4),
    ):
        tmax = np.max([np.cos(theta + o) ** 2 for o in offsets], axis=0)
        arg = int(np.argmin(tmax))
        wit = max(np.cos(witness_angle + o) ** 2 for o in offsets)
        reports.append(
            ScalarInequalityReport(
                name, float(np.min(tmax) - floor), (float(theta[arg]),),
                witness=(float(witness_angle), float(wit)),
            )
        )

    # sum of three direction compressions dominates one quadratic mean
    best = (np.inf, (0.0, 0.0, 0.0))
    rhs = _relu(np.sqrt(0.75 * l1**2 + 0.25 * l2**2) - 1.0) ** 2
    chunk = 256
    for s in range(0, len(theta), chunk):
        th = theta[s:s + chunk][:, None]
        lhs = np.zeros((th.shape[0], l1.shape[0]))
        for o in (0.0, np.pi / 3, 2 * np.pi / 3):
            lhs += _relu(direction_stretch(l1[None, :], l2[None, :], th + o) - 1.0) ** 2
        slack = lhs - rhs[None, :]
        i, j = np.unravel_index(np.argmin(slack), slack.shape)
        if slack[i, j] < best[0]:
            best = (float(slack[i, j]), (float(l1[j]), float(l2[j]), float(theta[s + i])))
    reports.append(ScalarInequalityReport("three-direction-compression", best[0], best[1]))

    # commutator + compression dominate the positive-part bracket
    for name, w1 in (
        ("commutator-compression-three", 0.75),
        ("commutator-compression-two", 0.5),
    ):
        lhs = (l1 - l2) ** 2 + _relu(np.sqrt(w1 * l1**2 + (1 - w1) * l2**2) - 1.0) ** 2
        rhs2 = 0.25 * (_relu(l1 - 1.0) ** 2 + _relu(l2 - 1.0) ** 2)
        slack = lhs - rhs2
        j = int(np.argmin(slack))
        reports.append(
            ScalarInequalityReport(name, float(slack[j]), (float(l1[j]), float(l2[j])))
        )
    return reports


# ---------------------------------------------------------------------------
# single-triangle rigidity
# ---------------------------------------------------------------------------


def triangle_reference(alpha: float) -> np.ndarray:
    """Vertices ``(A, B, C)`` of the marker triangle: unit legs ``CB`` and
    ``AB`` meeting at ``B`` with angle ``alpha``; ``b = B - C``,
    ``r = B - A = R(alpha) b``."""
    return np.array([
        [-np.cos(alpha), -np.sin(alpha)],   # A
        [0.0, 0.0],                        # B
        [-1.0, 0.0],                       # C
    ])


def triangle_spring_energy(pts, alpha: float):
    """Three-spring energy of deformed triangles ``pts`` with shape
    ``(..., 3, 2)``: springs along ``AB``, ``CB`` (rest 1) and ``AC``."""
    A, B, C = pts[..., 0, :], pts[..., 1, :], pts[..., 2, :]
    ref = triangle_reference(alpha)
    ac_rest = float(np.linalg.norm(ref[0] - ref[2]))
    e = (np.linalg.norm(B - A, axis=-1) - 1.0) ** 2
    e += (np.linalg.norm(B - C, axis=-1) - 1.0) ** 2
    e += (np.linalg.norm(A - C, axis=-1) - ac_rest) ** 2
    return e


def triangle_deviation(pts, alpha: float):
    """Deviation ``z = r_def - R(+-alpha) b_def`` with the rotation sign
    matching the deformed orientation; shape ``(..., 2)``."""
    A, B, C = pts[..., 0, :], pts[..., 1, :], pts[..., 2, :]
    b = B - C
    r = B - A
    s = np.where(b[..., 0] * r[..., 1] - b[..., 1] * r[..., 0] >= 0, 1.0, -1.0)
    ca, sa = np.cos(alpha), np.sin(alpha)
    rot_b = np.stack([
        ca * b[..., 0] - s * sa * b[..., 1],
        s * sa * b[..., 0] + ca * b[..., 1],
    ], axis=-1)
    return r - rot_b


def sample_triangle_deformations(alpha: float, n: int, seed: int,
                                 noise_scales=(0.01, 0.05, 0.1)):
    """Random rigid motions (half of them composed with a reflection) of
    the reference triangle plus vertex noise; returns deformed vertices
    of shape ``(n, 3, 2)``."""
    rng = np.random.default_rng(seed)
    ref = triangle_reference(alpha)
    scales = rng.choice(noise_scales, size=n)
    pts = ref[None, :, :] + scales[:, None, None] * rng.uniform(-1, 1, size=(n, 3, 2))
    reflect = rng.random(n) < 0.5
    pts[reflect, :, 1] *= -1.0
    ang = rng.uniform(0, 2 * np.pi, size=n)
    ca, sa = np.cos(ang), np.sin(ang)
    R = np.empty((n, 2, 2))
    R[:, 0, 0], R[:, 0, 1] = ca, -sa
    R[:, 1, 0], R[:, 1, 1] = sa, ca
    pts = np.einsum("nij,nkj->nki", R, pts)
    pts += rng.uniform(-1, 1, size=(n, 1, 2))
    return pts


@dataclass
class RigidityEstimate:
    """Sampled constants for the triangle rigidity estimates

    ``E >= c |z|^2``  and  ``|cos(gamma) - cos(alpha)| <= cos_coeff * sqrt(E)``

    valid for deformed triangles with ``E <= energy_cap``; ``gamma`` is the
    unsigned deformed angle between the marker legs.  ``c`` keeps a 10%
    safety margin below the worst sampled ratio, ``cos_coeff`` 10% above.
    """

    alpha: float
    c: float
    cos_coeff: float
    energy_cap: float
    n_samples: int
    n_admissible: int
    seed: int


def rigidity_constant(alpha: float = np.pi / 3, n_samples: int = 100000,
                      energy_cap: float = 1.0 / 36.0, seed: int = 0) -> RigidityEstimate:
    """Estimate the rigidity constants of the marker triangle by sampling."""
    if not 0 < alpha < np.pi:
        raise ValueError(f"alpha must be in (0, pi), got {alpha:g}")
    pts = sample_triangle_deformations(alpha, n_samples, seed)
    E = triangle_spring_energy(pts, alpha)
    keep = E <= energy_cap
    E = E[keep]
    pts = pts[keep]
    z2 = np.sum(triangle_deviation(pts, alpha) ** 2, axis=-1)

    b = pts[:, 1] - pts[:, 2]
    r = pts[:, 1] - pts[:, 0]
    cosg = np.sum(b * r, axis=1) / (
        np.linalg.norm(b, axis=1) * np.linalg.norm(r, axis=1))
    cos_dev = np.abs(cosg - np.cos(alpha))

    nz = z2 > 1e-24
    ratios = E[nz] / z2[nz]
    c = 0.9 * float(np.min(ratios)) if nz.any() else np.inf
    pos = E > 1e-24
    cos_coeff = 1.1 * float(np.max(cos_dev[pos] / np.sqrt(E[pos]))) if pos.any() else 0.0
    return RigidityEstimate(
        alpha=alpha, c=c, cos_coeff=cos_coeff, energy_cap=energy_cap,
        n_samples=n_samples, n_admissible=int(keep.sum()), seed=seed,
    )


# ---------------------------------------------------------------------------
# conformality of gradient fields
# ---------------------------------------------------------------------------


@dataclass
class ConformalFieldReport:
    """Cauchy-Riemann diagnostics of a sampled gradient field.

    ``cr_residual_1`` and ``cr_residual_2`` are the weighted L2 norms of
    ``g00 - g11`` and ``g01 + g10``; ``max_factor`` is the largest
    conformal factor ``(sigma1 + sigma2) / 2`` (the modulus of the
    complex derivative when the field is conformal), ``max_anisotropy``
    the largest ``sigma1 - sigma2``, and ``fit_residual`` the weighted
    L2 distance to the best local ``c R`` (scaled-rotation) field.
    """

    cr_residual_1: float
    cr_residual_2: float
    max_factor: float
    max_anisotropy: float
    fit_residual: float
    compressive: bool
    n_fields: int

    @property
    def cr_residual(self) -> float:
        return float(np.hypot(self.cr_residual_1, self.cr_residual_2))


def conformal_check(grads, areas=None, tol: float = 1e-9) -> ConformalFieldReport:
    """Measure how far a field of 2x2 gradients is from compressive
    conformal: Cauchy-Riemann residuals, conformal factors, and the
    residual of the pointwise scaled-rotation fit, all area-weighted."""
    grads = np.asarray(grads, dtype=float).reshape(-1, 2, 2)
    if len(grads) == 0:
        raise ValueError("need at least one gradient sample")
    if areas is None:
        w = np.full(len(grads), 1.0 / len(grads))
    else:
        w = np.asarray(areas, dtype=float).reshape(-1)
        if len(w) != len(grads) or (w < 0).any() or w.sum() <= 0:
            raise ValueError("areas must be nonnegative weights, one per gradient")
        w = w / w.sum()
    r1 = grads[:, 0, 0] - grads[:, 1, 1]
    r2 = grads[:, 0, 1] + grads[:, 1, 0]
    s1, s2, det_sign = principal_stretches(grads)
    factor = 0.5 * (s1 + det_sign * s2)      # modulus of the best cR fit
    fit2 = 0.5 * (s1 - det_sign * s2) ** 2   # |g - cR|_F^2 at the best fit
    return ConformalFieldReport(
        cr_residual_1=float(np.sqrt(np.sum(w * r1**2))),
        cr_residual_2=float(np.sqrt(np.sum(w * r2**2))),
        max_factor=float(np.max(factor)),
        max_anisotropy=float(np.max(s1 - s2)),
        fit_residual=float(np.sqrt(np.sum(w * fit2))),
        compressive=bool(np.max(factor) <= 1 + tol),
        n_fields=len(grads),
    )
