"""Soft modes: spatial modulation of the twist by a conformal target.

A compressive conformal map (holomorphic ``f`` with ``|f'| <= 1``) can be
tracked by the lattice at asymptotically vanishing cost: each rigid unit
is put into the local twist state whose contraction matches ``|f'|`` at
the unit's scaled position, rotated by ``arg f'`` and anchored at ``f``.
A short, strictly local spring relaxation (fixed sweep budget, each node
tethered to its constructed placement so nothing drifts globally)
reconciles neighboring units.  The area-averaged energy of the resulting
maps decays as the cell size ``epsilon`` shrinks, and their
coarse-grained gradients approach scaled rotations with vanishing
Cauchy-Riemann residuals.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .cellsolver import _twist_contraction_table
from .energy import LatticeMap, domain_energy
from .geometry import conformal_check, signed_svd
from .lattice import LatticeSpec
from .mechanisms import Mechanism, rigid_units

__all__ = [
    "ConformalTarget",
    "default_target",
    "MechanismStateTable",
    "mechanism_state_table",
    "modulate",
    "SoftModeReport",
    "soft_mode_report",
    "WeakLimitReport",
    "weak_limit_check",
]


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConformalTarget:
    """A rational holomorphic map on a rectangle, with ``|f'| <= 1``.

    ``coeffs`` (and optionally ``denom``) are ascending complex
    polynomial coefficients of the numerator and denominator of ``f``;
    ``domain`` is ``(x0, x1, y0, y1)``.  Compressiveness and pole
    freeness are checked on a sampling grid at construction.
    """

    coeffs: tuple
    domain: tuple
    denom: tuple = (1.0,)

    def __post_init__(self):
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"empty target domain {self.domain!r}")
        zs = self._sample_grid()
        if np.abs(np.polyval(list(self.denom[::-1]), zs)).min() < 1e-12:
            raise ValueError("target denominator vanishes on the domain")
        if self.max_derivative > 1.0 + 1e-9:
            raise ValueError(
                f"target is not compressive: max |f'| = {self.max_derivative:.6f} > 1"
            )

    def _sample_grid(self, samples: int = 101):
        x0, x1, y0, y1 = self.domain
        xs, ys = np.meshgrid(np.linspace(x0, x1, samples),
                             np.linspace(y0, y1, samples))
        return xs + 1j * ys

    def value(self, z):
        z = np.asarray(z, dtype=complex)
        num = np.polyval(list(self.coeffs[::-1]), z)
        return num / np.polyval(list(self.denom[::-1]), z)

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)

        def ev(c):
            return np.polyval(list(c[::-1]), z)

        def dcoef(c):
            return tuple(n * v for n, v in enumerate(c))[1:] or (0.0,)

        P, Q = ev(self.coeffs), ev(self.denom)
        dP, dQ = ev(dcoef(self.coeffs)), ev(dcoef(self.denom))
        return (dP * Q - P * dQ) / Q**2

    @property
    def max_derivative(self) -> float:
        return float(np.abs(self.derivative(self._sample_grid())).max())

    @property
    def min_derivative(self) -> float:
        return float(np.abs(self.derivative(self._sample_grid())).min())

    @property
    def polygon(self) -> np.ndarray:
        x0, x1, y0, y1 = self.domain
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.domain
        return (x1 - x0) * (y1 - y0)


def default_target() -> ConformalTarget:
    """The built-in non-constant target ``f(z) = z - z^2/4`` on
    ``[0.2, 1.2] x [-0.5, 0.5]``, where ``|f'|`` stays within about
    ``[0.40, 0.94]`` -- strictly inside the reachable twist range."""
    return ConformalTarget(coeffs=(0.0, 1.0, -0.25),
                           domain=(0.2, 1.2, -0.5, 0.5))


# ---------------------------------------------------------------------------
# local state tables
# ---------------------------------------------------------------------------


def _rotation(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def _wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass
class MechanismStateTable:
    """Per-unit rigid states of a one-parameter isotropic mechanism
    family, indexed by contraction.

    ``angles[r]`` and ``offsets[r]`` give, for the unit instance with
    residue ``r`` inside the ``k x k`` supercell, its rotation angle and
    centroid offset (relative to ``c x``) at each tabulated contraction
    ``cs`` (ascending).  Built from e.g. ``search_mechanisms`` output to
    modulate a k-periodic family instead of the on-the-fly twist.
    """

    k: int
    cs: np.ndarray
    angles: Dict[tuple, np.ndarray]
    offsets: Dict[tuple, np.ndarray]

    def state(self, residue, c):
        ang = PchipInterpolator(self.cs, self.angles[residue])(c)
        off = np.array([
            PchipInterpolator(self.cs, self.offsets[residue][:, d])(c)
            for d in (0, 1)
        ])
        return float(ang), off

    @property
    def c_min(self) -> float:
        return float(self.cs[0])

    @property
    def c_max(self) -> float:
        return float(self.cs[-1])


def mechanism_state_table(spec: LatticeSpec, mechanisms: Sequence[Mechanism],
                          iso_tol: float = 1e-8) -> MechanismStateTable:
    """Extract a contraction-indexed table of per-unit rigid states from
    a family of isotropic mechanisms on a common ``k x k`` supercell.

    Each mechanism must have ``lam = c R`` with positive determinant
    (isotropy defect below ``iso_tol``); it is rotation-normalized to
    ``lam = c I`` before the per-unit rotation angles and centroid
    offsets are read off.  Angles are unwrapped along the family.
    """
    if not mechanisms:
        raise ValueError("need at least one mechanism")
    units = rigid_units(spec)
    k = mechanisms[0].deformation.cell.k
    rows = []
    for m in mechanisms:
        cert = m.certificate
        if m.deformation.cell.k != k:
            raise ValueError("mechanisms live on different supercells")
        if cert.det_sign <= 0 or cert.isotropy_defect > iso_tol:
            raise ValueError(
                f"mechanism with lam={np.round(cert.lam, 6).tolist()} is not "
                f"an orientation-preserving scaled rotation"
            )
        dat = signed_svd(cert.lam)
        c = 0.5 * (dat.sigma1 + dat.sigma2)
        R = dat.U @ dat.V.T
        beta = float(np.arctan2(R[1, 0], R[0, 0]))
        defm = m.deformation.rotate(_rotation(-beta))
        row_ang, row_off = {}, {}
        for u, unit in enumerate(units):
            for mi in range(k):
                for mj in range(k):
                    refs = [(node, (o1 + mi, o2 + mj)) for node, (o1, o2) in unit.nodes]
                    X = np.asarray([spec.node_position(r) for r in refs])
                    Y = np.asarray([defm.evaluate(r) for r in refs])
                    xb, yb = X.mean(axis=0), Y.mean(axis=0)
                    H = (Y - yb).T @ (X - xb)
                    U, _, Vt = np.linalg.svd(H)
                    if np.linalg.det(U @ Vt) < 0:
                        U[:, -1] *= -1
                    Ru = U @ Vt
                    row_ang[(u, mi, mj)] = float(np.arctan2(Ru[1, 0], Ru[0, 0]))
                    row_off[(u, mi, mj)] = yb - c * xb
        rows.append((c, row_ang, row_off))
    rows.sort(key=lambda t: t[0])
    cs = np.asarray([r[0] for r in rows])
    if len(cs) < 2 or np.any(np.diff(cs) <= 1e-12):
        raise ValueError("mechanism contractions must be distinct to form a table")
    residues = rows[0][1].keys()
    angles, offsets = {}, {}
    for res in residues:
        angles[res] = np.unwrap(np.asarray([r[1][res] for r in rows]))
        offsets[res] = np.asarray([r[2][res] for r in rows])
    # translation gauge: offsets are only meaningful relative to their mean
    mean_off = np.mean([offsets[res] for res in residues], axis=0)
    for res in residues:
        offsets[res] = offsets[res] - mean_off
    return MechanismStateTable(k=k, cs=cs, angles=angles, offsets=offsets)


# ---------------------------------------------------------------------------
# modulation
# ---------------------------------------------------------------------------


def modulate(
    spec: LatticeSpec,
    target: ConformalTarget,
    epsilon: float,
    relax_sweeps: int = 200,
    omega: float = 0.5,
    tether: float = 0.5,
    states: Optional[MechanismStateTable] = None,
) -> LatticeMap:
    """Build the modulated deformation at cell size ``epsilon``.

    Every rigid unit whose nodes touch the target domain is placed
    rigidly: twisted by the angle whose contraction matches ``|f'|`` at
    the unit center (inverted through a monotone spline of the twist's
    contraction table, or through ``states`` when a custom mechanism
    family is supplied), rotated by the tree-unwrapped argument of
    ``f'``, and anchored at ``f`` of the center.  Nodes shared by
    several units take the average placement, followed by
    ``relax_sweeps`` damped Jacobi spring sweeps.  Each sweep pulls a
    node toward local spring equilibrium while a ``tether`` weight holds
    it near its constructed position, so the relaxation stays local and
    the ``epsilon``-scaling reflects the construction rather than global
    optimization.

    Raises :class:`ValueError` when ``|f'|`` falls below the reachable
    contraction range at a unit inside the domain (the location is
    reported); boundary-overhanging units are clamped instead.
    """
    if epsilon <= 0:
        raise ValueError(f"cell size epsilon must be positive, got {epsilon:g}")
    units = rigid_units(spec)
    if states is None:
        thetas, cs = _twist_contraction_table(spec)
        c_min, c_max = float(cs.min()), 1.0
        invert = PchipInterpolator(cs[::-1], thetas[::-1])
    else:
        c_min, c_max = states.c_min, states.c_max

    x0, x1, y0, y1 = target.domain

    def inside(p) -> bool:
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    # candidate unit instances: any node inside the domain, enumerated
    # over a lattice-coordinate bounding box of the target rectangle
    Minv = np.linalg.inv(spec.cell_matrix)
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]]) / epsilon
    lat = corners @ Minv.T
    i_rng = range(int(np.floor(lat[:, 0].min())) - 2, int(np.ceil(lat[:, 0].max())) + 3)
    j_rng = range(int(np.floor(lat[:, 1].min())) - 2, int(np.ceil(lat[:, 1].max())) + 3)

    insts = []
    inst_keys = {}
    inst_ref = {}
    key_pos = {}
    for ci in i_rng:
        for cj in j_rng:
            for u, unit in enumerate(units):
                keys, pts = [], []
                for node, (o1, o2) in unit.nodes:
                    key = (node, (o1 + ci, o2 + cj))
                    if key not in key_pos:
                        key_pos[key] = epsilon * spec.node_position(key)
                    keys.append(key)
                    pts.append(key_pos[key])
                pts = np.asarray(pts)
                if any(inside(p) for p in pts):
                    inst = (u, ci, cj)
                    insts.append(inst)
                    inst_keys[inst] = keys
                    inst_ref[inst] = pts
    if not insts:
        raise ValueError("target domain contains no lattice cells at this epsilon")

    owner = {}
    for inst, keys in inst_keys.items():
        for key in keys:
            owner.setdefault(key, []).append(inst)

    # local contraction per unit, clamped only for boundary overhang
    centers = {inst: inst_ref[inst].mean(axis=0) for inst in insts}
    fp = {inst: complex(target.derivative(c[0] + 1j * c[1]))
          for inst, c in centers.items()}
    c_loc = {}
    for inst in insts:
        c = abs(fp[inst])
        if c < c_min - 1e-9:
            z = centers[inst]
            if inside(z):
                raise ValueError(
                    f"|f'| = {c:.6f} at ({z[0]:.4f}, {z[1]:.4f}) is below the "
                    f"reachable mechanism contraction {c_min:.6f}"
                )
            c = c_min
        c_loc[inst] = min(max(c, c_min), c_max)

    # unwrap arg f' along a spanning tree of the unit adjacency
    phi = {}
    start = insts[0]
    phi[start] = float(np.angle(fp[start]))
    queue = deque([start])
    while queue:
        inst = queue.popleft()
        for key in inst_keys[inst]:
            for other in owner[key]:
                if other not in phi:
                    raw = float(np.angle(fp[other]))
                    phi[other] = phi[inst] + _wrap_angle(raw - phi[inst])
                    queue.append(other)
    for inst in insts:
        if inst not in phi:  # disconnected pocket: principal branch
            phi[inst] = float(np.angle(fp[inst]))

    # rigid placement and node averaging
    sums: Dict[tuple, np.ndarray] = {}
    counts: Dict[tuple, int] = {}
    for inst in insts:
        u, ci, cj = inst
        z = centers[inst]
        if states is None:
            sigma = 1.0 if units[u].parity == 0 else -1.0
            ang = sigma * float(invert(c_loc[inst]))
            off = np.zeros(2)
        else:
            ang, off = states.state((u, ci % states.k, cj % states.k), c_loc[inst])
        Rg = _rotation(phi[inst])
        R = Rg @ _rotation(ang)
        w = target.value(complex(z[0], z[1]))
        anchor = np.array([w.real, w.imag]) + Rg @ off * epsilon
        for key, p in zip(inst_keys[inst], inst_ref[inst]):
            y = anchor + R @ (p - z)
            if key in sums:
                sums[key] += y
                counts[key] += 1
            else:
                sums[key] = y.copy()
                counts[key] = 1

    keys = sorted(sums)
    index = {key: i for i, key in enumerate(keys)}
    pos0 = np.asarray([sums[key] / counts[key] for key in keys])
    pos = pos0.copy()

    # tethered damped-Jacobi relaxation of the spring network
    ia, ib, rest, stiff = [], [], [], []
    for s in spec.springs:
        for ci in i_rng:
            for cj in j_rng:
                a = (s.a[0], (s.a[1][0] + ci, s.a[1][1] + cj))
                b = (s.b[0], (s.b[1][0] + ci, s.b[1][1] + cj))
                if a in index and b in index:
                    ia.append(index[a])
                    ib.append(index[b])
                    rest.append(epsilon * s.rest_length)
                    stiff.append(s.stiffness)
    ia = np.asarray(ia, dtype=int)
    ib = np.asarray(ib, dtype=int)
    rest = np.asarray(rest)
    stiff = np.asarray(stiff)
    wsum = np.full(len(keys), float(tether))
    np.add.at(wsum, ia, stiff)
    np.add.at(wsum, ib, stiff)
    for _ in range(relax_sweeps):
        d = pos[ia] - pos[ib]
        lengths = np.maximum(np.linalg.norm(d, axis=1), 1e-300)
        unit_d = d / lengths[:, None]
        pull = tether * pos0.copy()
        np.add.at(pull, ia, stiff[:, None] * (pos[ib] + rest[:, None] * unit_d))
        np.add.at(pull, ib, stiff[:, None] * (pos[ia] - rest[:, None] * unit_d))
        pos = (1 - omega) * pos + omega * pull / wsum[:, None]
    return LatticeMap(spec, epsilon, {key: pos[index[key]] for key in keys})


# ---------------------------------------------------------------------------
# scaling and weak-limit reports
# ---------------------------------------------------------------------------


@dataclass
class SoftModeReport:
    """Area-averaged energy of the modulated maps across cell sizes.

    ``fitted_exponent`` is the least-squares slope of ``log energy``
    against ``log epsilon`` (positive = decay); it is flagged undefined
    when the energies are too small to carry a meaningful trend, e.g.
    for uniform targets that the mechanism matches exactly.
    """

    eps_list: tuple
    eta: float
    energy_densities: tuple
    max_cell_energies: tuple
    n_cells: tuple
    fitted_exponent: float
    exponent_defined: bool
    maps: tuple

    @property
    def monotone_violation_fraction(self) -> float:
        e = np.asarray(self.energy_densities)
        if len(e) < 2:
            return 0.0
        return float(np.mean(e[1:] > e[:-1]))

    @property
    def final_over_first(self) -> float:
        return self.energy_densities[-1] / self.energy_densities[0]

    def rows(self):
        for eps, dens, mx, n in zip(self.eps_list, self.energy_densities,
                                    self.max_cell_energies, self.n_cells):
            yield eps, dens, mx, n


def soft_mode_report(
    spec: LatticeSpec,
    target: ConformalTarget,
    eps_list: Sequence[float] = (1 / 8, 1 / 16, 1 / 32, 1 / 64),
    eta: float = 0.05,
    relax_sweeps: int = 200,
    states: Optional[MechanismStateTable] = None,
) -> SoftModeReport:
    """Modulate at each ``epsilon`` and tabulate the domain energy per
    target area, the worst per-cell energy, and the fitted decay
    exponent.  The maps themselves ride along for further checks."""
    densities, max_cells, n_cells, maps = [], [], [], []
    for eps in eps_list:
        lmap = modulate(spec, target, eps, relax_sweeps=relax_sweeps, states=states)
        rep = domain_energy(lmap, target.polygon, eta)
        densities.append(rep.total / target.area)
        max_cells.append(rep.max_cell)
        n_cells.append(rep.n_cells)
        maps.append(lmap)
    e = np.asarray(densities)
    defined = bool(len(e) >= 2 and (e > 1e-10).all())
    if defined:
        slope = float(np.polyfit(np.log(np.asarray(eps_list, dtype=float)),
                                 np.log(e), 1)[0])
    else:
        slope = float("nan")
    return SoftModeReport(
        eps_list=tuple(float(x) for x in eps_list),
        eta=eta,
        energy_densities=tuple(densities),
        max_cell_energies=tuple(max_cells),
        n_cells=tuple(n_cells),
        fitted_exponent=slope,
        exponent_defined=defined,
        maps=tuple(maps),
    )


@dataclass
class WeakLimitReport:
    """Distance of the modulated maps from the target, across scales.

    ``l2_errors`` are rms distances to the target on a fixed probe grid;
    ``cr_residuals`` are Cauchy-Riemann residuals of gradients
    coarse-grained over boxes of side ``sqrt(epsilon)``."""

    eps_list: tuple
    n_probe: int
    l2_errors: tuple
    cr_residuals: tuple
    max_factors: tuple
    n_boxes: tuple

    @property
    def l2_decreasing(self) -> bool:
        e = self.l2_errors
        return all(b <= a for a, b in zip(e, e[1:]))

    @property
    def cr_decreasing(self) -> bool:
        e = self.cr_residuals
        return all(b <= a for a, b in zip(e, e[1:]))


def _box_gradients(lmap: LatticeMap, bounds, box_size: float):
    """Least-squares affine gradient per box of side ``box_size`` over
    the nodes inside; boxes with fewer than six nodes are skipped."""
    x0, x1, y0, y1 = bounds
    keys = list(lmap.values)
    refs = np.asarray([lmap.reference_position(k) for k in keys])
    vals = np.asarray([lmap.values[k] for k in keys])
    nx = max(int(np.floor((x1 - x0) / box_size)), 1)
    ny = max(int(np.floor((y1 - y0) / box_size)), 1)
    grads = []
    for bi in range(nx):
        for bj in range(ny):
            lo = np.array([x0 + bi * box_size, y0 + bj * box_size])
            hi = np.minimum(lo + box_size, [x1, y1])
            mask = np.all((refs >= lo) & (refs < hi), axis=1)
            if int(mask.sum()) < 6:
                continue
            X = np.column_stack([refs[mask], np.ones(int(mask.sum()))])
            coef, *_ = np.linalg.lstsq(X, vals[mask], rcond=None)
            grads.append(coef[:2].T)
    if not grads:
        raise ValueError("no box contained enough nodes for a gradient fit")
    return np.asarray(grads)


def weak_limit_check(
    lmaps: Sequence[LatticeMap],
    target: ConformalTarget,
    probe: int = 12,
) -> WeakLimitReport:
    """Check that the maps converge to the target: rms distance on a
    fixed ``probe x probe`` interior grid, and conformality of the
    gradients coarse-grained over mesoscale boxes of side
    ``sqrt(epsilon)``, both expected to decrease along the list."""
    if not lmaps:
        raise ValueError("need at least one lattice map")
    x0, x1, y0, y1 = target.domain
    eps_list = [lmap.epsilon for lmap in lmaps]

    # probe margin: the coarsest map must cover every probe point
    edge = 0.0
    spec = lmaps[0].spec
    for tri in spec.triangulation:
        pts = [spec.node_position(r) for r in tri]
        for a in range(3):
            edge = max(edge, float(np.linalg.norm(pts[a] - pts[(a + 1) % 3])))
    margin = 1.25 * max(eps_list) * edge
    if x1 - x0 <= 2 * margin or y1 - y0 <= 2 * margin:
        raise ValueError("target domain too small for the probe margin")
    px = np.linspace(x0 + margin, x1 - margin, probe)
    py = np.linspace(y0 + margin, y1 - margin, probe)
    points = np.column_stack([m.ravel() for m in np.meshgrid(px, py)])
    fz = target.value(points[:, 0] + 1j * points[:, 1])
    fvals = np.column_stack([fz.real, fz.imag])

    l2s, crs, facs, boxes = [], [], [], []
    for lmap in lmaps:
        values, _ = lmap.interpolate(points)
        l2s.append(float(np.sqrt(np.mean(np.sum((values - fvals) ** 2, axis=1)))))
        grads = _box_gradients(lmap, target.domain, float(np.sqrt(lmap.epsilon)))
        rep = conformal_check(grads, tol=0.05)
        crs.append(rep.cr_residual)
        facs.append(rep.max_factor)
        boxes.append(rep.n_fields)
    return WeakLimitReport(
        eps_list=tuple(float(e) for e in eps_list),
        n_probe=len(points),
        l2_errors=tuple(l2s),
        cr_residuals=tuple(crs),
        max_factors=tuple(facs),
        n_boxes=tuple(boxes),
    )
