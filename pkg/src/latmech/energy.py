"""Penalized spring energies.

The energy of a deformation ``u = lam x + psi`` on a ``k x k`` supercell is

    E = sum_springs  stiffness * (|deformed length| - rest)^2
      + sum_penalized_triangles  area * f_eta(det grad u)

with the hard orientation step ``f_eta(t) = 1/eta`` for ``t <= 0`` and ``0``
for ``t > 0``.  Reported energies always use the exact step; the smoothed
sigmoid version (with temperature ``tau``) exists only as a solver
surrogate and is exposed separately.

Every spring's energy is attributed to penalized triangles (see
:func:`latmech.lattice.spring_attribution`), which makes the per-triangle
breakdown sum to the totals exactly -- the totals are *defined* as sums of
the exposed per-part arrays.

The module also evaluates energies of deformations given directly as nodal
maps on an ``epsilon``-scaled lattice: single-cell scaled energies and
their sum over all cells compactly contained in a polygonal domain.
"""

from __future__ import annotations

def _cross2(a, b):
    """z-component of the planar cross product over the trailing axis."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.special import expit

from .lattice import LatticeSpec, PeriodicDeformation, Supercell, rotation

__all__ = [
    "EnergyBreakdown",
    "energy_breakdown",
    "spring_energy",
    "penalty_energy",
    "averaged_energy",
    "spring_energy_grad",
    "smoothed_energy_grad",
    "barrier_grad",
    "triangle_dets",
    "LatticeMap",
    "scaled_cell_energy",
    "DomainEnergyReport",
    "domain_energy",
    "CellBoundsReport",
    "check_cell_bounds",
]

_LEN_FLOOR = 1e-12  # guards normalization of nearly collapsed springs


# ---------------------------------------------------------------------------
# periodic supercell energies
# ---------------------------------------------------------------------------


def _spring_vectors(cell: Supercell, lam, psi, table):
    return psi[table.head] - psi[table.tail] + (lam @ table.dx)[None, :]


def _triangle_crosses(cell: Supercell, lam, psi, table):
    s0, s1, s2 = table.slots
    d1 = psi[s1] - psi[s0] + (lam @ table.d1)[None, :]
    d2 = psi[s2] - psi[s0] + (lam @ table.d2)[None, :]
    return d1, d2, d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]


def triangle_dets(defm: PeriodicDeformation) -> list:
    """Per penalized-triangle class, the array of ``det(grad u)`` over cells."""
    out = []
    for table in defm.cell.penalized_tables:
        _, _, cross = _triangle_crosses(defm.cell, defm.lam, defm.psi, table)
        out.append(cross / table.cross0)
    return out


@dataclass
class EnergyBreakdown:
    """Exact energy of one deformation, split by penalized triangle.

    ``spring_total`` is the sum of ``per_triangle_spring``;
    ``penalty_total`` is ``sum_t reversed_counts[t] * penalty_unit[t]`` with
    ``penalty_unit = area / eta``, so the penalty is an integer combination
    of the per-class units by construction.
    """

    eta: float
    k: int
    cell_area: float
    per_triangle_spring: np.ndarray     # (n_pen, k*k)
    per_triangle_penalty: np.ndarray    # (n_pen, k*k)
    orientation_ok: np.ndarray          # (n_pen, k*k) bool, det > 0
    reversed_counts: np.ndarray         # (n_pen,)
    penalty_unit: np.ndarray            # (n_pen,)
    spring_total: float = field(init=False)
    penalty_total: float = field(init=False)

    def __post_init__(self):
        self.spring_total = float(np.sum(self.per_triangle_spring))
        self.penalty_total = float(
            sum(int(c) * float(u) for c, u in zip(self.reversed_counts, self.penalty_unit))
        )

    @property
    def total(self) -> float:
        return self.spring_total + self.penalty_total

    @property
    def averaged(self) -> float:
        """Energy density: total over supercell area."""
        return self.total / self.cell_area

    def rows(self):
        """Yield ``(i, j, t, spring_energy, penalty_energy)`` per triangle."""
        k = self.k
        for t in range(self.per_triangle_spring.shape[0]):
            for c in range(k * k):
                yield (c // k, c % k, t,
                       float(self.per_triangle_spring[t, c]),
                       float(self.per_triangle_penalty[t, c]))


def energy_breakdown(defm: PeriodicDeformation, eta: float) -> EnergyBreakdown:
    """Exact penalized energy with the per-triangle decomposition."""
    if eta <= 0:
        raise ValueError(f"penalty strength eta must be positive, got {eta:g}")
    cell = defm.cell
    lam, psi = defm.lam, defm.psi
    kk = cell.k * cell.k

    spring_e = []
    for table in cell.spring_tables:
        d = _spring_vectors(cell, lam, psi, table)
        lengths = np.linalg.norm(d, axis=1)
        spring_e.append(table.stiffness * (lengths - table.rest) ** 2)

    n_pen = len(cell.penalized_tables)
    per_spring = np.zeros((n_pen, kk))
    for t, rows in enumerate(cell.attribution):
        for idx, cmap, w in rows:
            per_spring[t] += w * spring_e[idx][cmap]

    ok = np.empty((n_pen, kk), dtype=bool)
    unit = np.empty(n_pen)
    for t, table in enumerate(cell.penalized_tables):
        _, _, cross = _triangle_crosses(cell, lam, psi, table)
        ok[t] = cross / table.cross0 > 0.0
        unit[t] = table.area / eta
    reversed_counts = (~ok).sum(axis=1)
    per_penalty = np.where(ok, 0.0, unit[:, None])

    return EnergyBreakdown(
        eta=eta,
        k=cell.k,
        cell_area=cell.cell_area,
        per_triangle_spring=per_spring,
        per_triangle_penalty=per_penalty,
        orientation_ok=ok,
        reversed_counts=reversed_counts,
        penalty_unit=unit,
    )


def spring_energy(defm: PeriodicDeformation) -> float:
    """Total spring energy, summed directly over spring instances."""
    cell = defm.cell
    total = 0.0
    for table in cell.spring_tables:
        d = _spring_vectors(cell, defm.lam, defm.psi, table)
        lengths = np.linalg.norm(d, axis=1)
        total += float(table.stiffness * np.sum((lengths - table.rest) ** 2))
    return total


def penalty_energy(defm: PeriodicDeformation, eta: float) -> float:
    return energy_breakdown(defm, eta).penalty_total


def averaged_energy(defm: PeriodicDeformation, eta: float) -> float:
    """Exact energy density ``E / (k^2 |U|)``."""
    return energy_breakdown(defm, eta).averaged


# ---------------------------------------------------------------------------
# gradients (solver surrogates)
# ---------------------------------------------------------------------------


def spring_energy_grad(cell: Supercell, lam, psi):
    """Spring energy with gradients in ``lam`` and ``psi``."""
    E = 0.0
    glam = np.zeros((2, 2))
    gpsi = np.zeros_like(psi)
    for table in cell.spring_tables:
        d = _spring_vectors(cell, lam, psi, table)
        lengths = np.linalg.norm(d, axis=1)
        E += float(table.stiffness * np.sum((lengths - table.rest) ** 2))
        coeff = 2.0 * table.stiffness * (1.0 - table.rest / np.maximum(lengths, _LEN_FLOOR))
        g = coeff[:, None] * d
        np.add.at(gpsi, table.head, g)
        np.add.at(gpsi, table.tail, -g)
        glam += np.outer(g.sum(axis=0), table.dx)
    return E, glam, gpsi


def smoothed_energy_grad(cell: Supercell, lam, psi, eta: float, tau: float):
    """Spring energy plus the sigmoid-smoothed orientation penalty.

    The smoothed penalty is ``area / eta * expit(-det / tau)``; it tends to
    the exact step as ``tau -> 0`` and exists only to give descent methods
    a usable gradient.  Reported energies must use
    :func:`energy_breakdown` instead.
    """
    E, glam, gpsi = spring_energy_grad(cell, lam, psi)
    for table in cell.penalized_tables:
        d1, d2, cross = _triangle_crosses(cell, lam, psi, table)
        det = cross / table.cross0
        sig = expit(-det / tau)
        E += float(table.area / eta * np.sum(sig))
        dE_ddet = -(table.area / (eta * tau)) * sig * (1.0 - sig)
        dE_dcross = dE_ddet / table.cross0
        g1 = dE_dcross[:, None] * np.column_stack([d2[:, 1], -d2[:, 0]])
        g2 = dE_dcross[:, None] * np.column_stack([-d1[:, 1], d1[:, 0]])
        s0, s1, s2 = table.slots
        np.add.at(gpsi, s1, g1)
        np.add.at(gpsi, s2, g2)
        np.add.at(gpsi, s0, -(g1 + g2))
        glam += np.outer(g1.sum(axis=0), table.d1) + np.outer(g2.sum(axis=0), table.d2)
    return E, glam, gpsi


def barrier_grad(cell: Supercell, lam, psi, mu: float):
    """Log-barrier ``-mu * sum log det`` keeping triangle orientations
    positive; returns ``(inf, 0, 0)`` when infeasible."""
    B = 0.0
    glam = np.zeros((2, 2))
    gpsi = np.zeros_like(psi)
    for table in cell.penalized_tables:
        d1, d2, cross = _triangle_crosses(cell, lam, psi, table)
        det = cross / table.cross0
        if np.any(det <= 0):
            return np.inf, glam, gpsi
        B += float(-mu * np.sum(np.log(det)))
        dE_dcross = (-mu / det) / table.cross0
        g1 = dE_dcross[:, None] * np.column_stack([d2[:, 1], -d2[:, 0]])
        g2 = dE_dcross[:, None] * np.column_stack([-d1[:, 1], d1[:, 0]])
        s0, s1, s2 = table.slots
        np.add.at(gpsi, s1, g1)
        np.add.at(gpsi, s2, g2)
        np.add.at(gpsi, s0, -(g1 + g2))
        glam += np.outer(g1.sum(axis=0), table.d1) + np.outer(g2.sum(axis=0), table.d2)
    return B, glam, gpsi


# ---------------------------------------------------------------------------
# scaled lattices and domain energies
# ---------------------------------------------------------------------------


@dataclass
class LatticeMap:
    """A deformation given by nodal values on an ``epsilon``-scaled lattice.

    ``values`` maps node references (absolute offsets; see
    :mod:`latmech.lattice`) to deformed positions.  The reference position
    of a node is ``epsilon`` times its unscaled position.
    """

    spec: LatticeSpec
    epsilon: float
    values: Dict[tuple, np.ndarray]

    def reference_position(self, ref) -> np.ndarray:
        return self.epsilon * self.spec.node_position(ref)

    @classmethod
    def from_periodic(cls, defm: PeriodicDeformation, epsilon: float, cells) -> "LatticeMap":
        """Sample ``u_eps(x) = eps * u(x / eps)`` over the given cells."""
        values = {}
        spec = defm.spec
        refs = set()
        for tri in spec.triangulation:
            refs.update(tri)
        for s in spec.springs:
            refs.update((s.a, s.b))
        for (i, j) in cells:
            for node, (o1, o2) in refs:
                key = (node, (o1 + i, o2 + j))
                if key not in values:
                    values[key] = epsilon * defm.evaluate(key)
        return cls(spec, epsilon, values)

    def interpolate(self, points):
        """Piecewise-affine value and gradient at reference points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        spec = self.spec
        Minv = np.linalg.inv(spec.cell_matrix) / self.epsilon
        values = np.empty((len(points), 2))
        grads = np.empty((len(points), 2, 2))
        cover = [
            (tri, np.linalg.inv(np.column_stack([
                spec.node_position(tri[1]) - spec.node_position(tri[0]),
                spec.node_position(tri[2]) - spec.node_position(tri[0]),
            ]) * self.epsilon))
            for tri in spec.triangulation
        ]
        for n, p in enumerate(points):
            base = np.floor(Minv @ p).astype(int)
            hit = False
            for di in (0, -1, 1, -2, 2):
                for dj in (0, -1, 1, -2, 2):
                    ci, cj = int(base[0]) + di, int(base[1]) + dj
                    for tri, dinv in cover:
                        keys = [(r[0], (r[1][0] + ci, r[1][1] + cj)) for r in tri]
                        if keys[0] not in self.values:
                            continue
                        p0 = self.reference_position(keys[0])
                        bary = dinv @ (p - p0)
                        if bary[0] < -1e-9 or bary[1] < -1e-9 or bary.sum() > 1 + 1e-9:
                            continue
                        try:
                            u0, u1, u2 = (self.values[kk] for kk in keys)
                        except KeyError:
                            continue
                        values[n] = (1 - bary.sum()) * u0 + bary[0] * u1 + bary[1] * u2
                        grads[n] = np.column_stack([u1 - u0, u2 - u0]) @ dinv
                        hit = True
                        break
                    if hit:
                        break
                if hit:
                    break
            if not hit:
                raise ValueError(f"point {p} is not covered by stored nodal values")
        return values, grads


def scaled_cell_energy(lmap: LatticeMap, eta: float, cell=(0, 0)) -> float:
    """Scaled energy of one cell: springs at rest ``eps * rest`` plus the
    orientation penalty weighted by ``eps^2`` times reference areas."""
    if eta <= 0:
        raise ValueError(f"penalty strength eta must be positive, got {eta:g}")
    spec = lmap.spec
    eps = lmap.epsilon
    i, j = cell

    def value(ref):
        key = (ref[0], (ref[1][0] + i, ref[1][1] + j))
        try:
            return lmap.values[key]
        except KeyError:
            raise KeyError(
                f"node {key} missing from the lattice map but needed for cell {cell}"
            ) from None

    E = 0.0
    for s in spec.springs:
        d = value(s.b) - value(s.a)
        E += s.stiffness * (float(np.linalg.norm(d)) - eps * s.rest_length) ** 2
    for t in spec.penalized_triangles:
        p0, p1, p2 = (value(r) for r in t.nodes)
        q0, q1, q2 = (spec.node_position(r) for r in t.nodes)
        cross_ref = float(_cross2(q1 - q0, q2 - q0)) * eps * eps
        cross_def = float(_cross2(p1 - p0, p2 - p0))
        if cross_def / cross_ref <= 0:
            E += eps * eps * t.area / eta
    return E


# -- polygon helpers ---------------------------------------------------------


def _points_in_polygon(points, poly):
    """Even-odd ray casting; points exactly on the boundary are unreliable
    and callers should not depend on them."""
    points = np.atleast_2d(points)
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < np.where(crosses, xint, np.inf))
    return inside


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _convex_hull(points):
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.asarray(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and (
                (out[-1][0] - out[-2][0]) * (p[1] - out[-2][1])
                - (out[-1][1] - out[-2][1]) * (p[0] - out[-2][0])
            ) <= 0:
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    return np.asarray(lower[:-1] + upper[:-1])


@dataclass
class DomainEnergyReport:
    total: float
    cells: list
    per_cell: dict
    n_cells: int
    max_cell: float


def domain_energy(lmap: LatticeMap, polygon, eta: float) -> DomainEnergyReport:
    """Sum of scaled cell energies over every lattice cell whose region is
    compactly contained in the polygon.

    Containment is tested on the convex hull of the cell's cover vertices:
    all vertices strictly inside the polygon and no polygon edge crossing
    the hull.  For non-convex cell regions this is slightly conservative.
    """
    polygon = np.asarray(polygon, dtype=float)
    spec = lmap.spec
    eps = lmap.epsilon
    verts = []
    for tri in spec.triangulation:
        verts.extend(spec.node_position(r) for r in tri)
    verts = np.unique(np.asarray(verts).round(12), axis=0)

    # candidate integer cells from the polygon's bounding box
    Minv = np.linalg.inv(spec.cell_matrix)
    corners = polygon / eps
    frac = corners @ Minv.T
    lo = np.floor(frac.min(axis=0)).astype(int) - 2
    hi = np.ceil(frac.max(axis=0)).astype(int) + 2

    poly_edges = [(polygon[k], polygon[(k + 1) % len(polygon)]) for k in range(len(polygon))]
    cells = []
    per_cell = {}
    total = 0.0
    for i in range(lo[0], hi[0] + 1):
        for j in range(lo[1], hi[1] + 1):
            pts = eps * (verts + i * spec.v1 + j * spec.v2)
            if not _points_in_polygon(pts, polygon).all():
                continue
            hull = _convex_hull(pts)
            crossed = False
            for a, b in poly_edges:
                for m in range(len(hull)):
                    if _segments_cross(a, b, hull[m], hull[(m + 1) % len(hull)]):
                        crossed = True
                        break
                if crossed:
                    break
            if crossed:
                continue
            e = scaled_cell_energy(lmap, eta, (i, j))
            cells.append((i, j))
            per_cell[(i, j)] = e
            total += e
    if not cells:
        raise ValueError("no lattice cell is compactly contained in the polygon")
    return DomainEnergyReport(
        total=total,
        cells=cells,
        per_cell=per_cell,
        n_cells=len(cells),
        max_cell=max(per_cell.values()),
    )


# ---------------------------------------------------------------------------
# cell-level energy bounds
# ---------------------------------------------------------------------------


@dataclass
class CellBoundsReport:
    """Fitted constants for the single-cell energy sandwich

    ``max(C2 * (|grad u|^2 - D2 |U|), 0)  <=  E  <=  C1 * (|grad u|^2 + |U|)``

    where ``|grad u|^2`` is the squared L2 norm over the cover and ``D2``
    is calibrated on the zero-energy (mechanism) samples supplied."""

    C1: float
    C2: float
    D2: float
    n_samples: int
    n_zero_energy: int
    eta: float


def check_cell_bounds(
    spec: LatticeSpec,
    n_samples: int = 10000,
    eta: float = 0.05,
    seed: int = 0,
    extra_deformations: Iterable[PeriodicDeformation] = (),
) -> CellBoundsReport:
    """Sample single-cell deformations and fit the sandwich constants.

    Samples are ``u = lam x + noise`` with matrix entries and nodal noise
    componentwise uniform in ``[-3, 3]``, plus the identity, a few pure
    rotations, and any supplied zero-energy deformations (restricted to
    one cell).  All fitted constants must come out finite and positive.
    """
    rng = np.random.default_rng(seed)
    cell = Supercell(spec, 1)

    refs = set()
    for s in spec.springs:
        refs.update((s.a, s.b))
    for tri in spec.triangulation:
        refs.update(tri)
    refs = sorted(refs)
    index = {r: m for m, r in enumerate(refs)}
    X = np.asarray([spec.node_position(r) for r in refs])
    nr = len(refs)

    lam = rng.uniform(-3, 3, size=(n_samples, 2, 2))
    noise = rng.uniform(-3, 3, size=(n_samples, nr, 2))
    U = np.einsum("sab,nb->sna", lam, X) + noise

    # deterministic zero-energy states: identity, rotations, supplied modes
    special = [X.copy()]
    for ang in (0.4, 1.1, 2.5):
        special.append(X @ rotation(ang).T)
    for defm in extra_deformations:
        special.append(np.asarray([defm.evaluate(r) for r in refs]))
    U = np.concatenate([U, np.asarray(special)], axis=0)
    n_tot = U.shape[0]

    E = np.zeros(n_tot)
    for s in spec.springs:
        d = U[:, index[s.b]] - U[:, index[s.a]]
        lengths = np.linalg.norm(d, axis=1)
        E += s.stiffness * (lengths - s.rest_length) ** 2
    for t in spec.penalized_triangles:
        i0, i1, i2 = (index[r] for r in t.nodes)
        cross = _cross2(U[:, i1] - U[:, i0], U[:, i2] - U[:, i0])
        E += np.where(cross > 0, 0.0, t.area / eta)

    grad2 = np.zeros(n_tot)
    for tri in spec.triangulation:
        i0, i1, i2 = (index[r] for r in tri)
        p0, p1, p2 = (spec.node_position(r) for r in tri)
        dref = np.column_stack([p1 - p0, p2 - p0])
        area = 0.5 * float(_cross2(p1 - p0, p2 - p0))
        dinv = np.linalg.inv(dref)
        G = np.einsum("snk,kl->snl", np.stack(
            [U[:, i1] - U[:, i0], U[:, i2] - U[:, i0]], axis=2), dinv)
        grad2 += area * np.einsum("sij,sij->s", G, G)

    area_U = spec.cell_area
    zero = E <= 1e-18
    D2 = float(np.max(grad2[zero]) / area_U) if np.any(zero) else 0.0
    C1 = float(np.max(E / (grad2 + area_U)))
    slack = grad2 - D2 * area_U
    pos = (~zero) & (slack > 1e-9)
    C2 = float(np.min(E[pos] / slack[pos])) if np.any(pos) else np.inf
    return CellBoundsReport(
        C1=C1, C2=C2, D2=D2, n_samples=n_tot,
        n_zero_energy=int(zero.sum()), eta=eta,
    )
