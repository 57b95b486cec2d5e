"""Exact mechanisms: counter-rotations, searched modes, and domain walls.

The penalized triangles of a lattice glue into *rigid units* wherever two
of them share a full edge (two common nodes).  Units touch at single-node
pin joints, and when the unit adjacency is two-colorable the signature
zero-energy deformation rotates one color class by ``+theta`` and the
other by ``-theta``, with translations determined by chasing the pins.
This module derives the units from the spec, assembles such rotations into
certified periodic deformations, and also assembles the non-periodic
domain wall that interpolates between two one-periodic twist states
through a column-by-column angle recursion.

A numerical mechanism search (spring energy plus annealed determinant
barrier over ``(lam, psi)`` jointly) complements the exact constructions.
"""

from __future__ import annotations

def _cross2(a, b):
    """z-component of the planar cross product over the trailing axis."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


from collections import Counter, deque
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.optimize import minimize

from .energy import barrier_grad, energy_breakdown, spring_energy_grad, triangle_dets
from .geometry import signed_svd
from .lattice import (
    DegenerateGeometryError,
    LatticeSpec,
    PeriodicDeformation,
    Supercell,
    build_kagome,
    rotation,
)

__all__ = [
    "MechanismError",
    "RigidUnit",
    "rigid_units",
    "assemble_rotated_units",
    "MechanismCertificate",
    "certify",
    "Mechanism",
    "twist_mechanism",
    "twist_admissible_range",
    "search_mechanisms",
    "mechanism_search",
    "mechanism_tangent_rank",
    "domain_wall_angles",
    "DomainWall",
    "domain_wall_mechanism",
]


class MechanismError(RuntimeError):
    """An exact construction failed to close up to tolerance."""


# ---------------------------------------------------------------------------
# rigid units
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidUnit:
    """A maximal edge-glued cluster of penalized triangles.

    ``triangles`` lists ``(triangle_class, (d1, d2))`` cell offsets relative
    to the unit's anchor cell; ``nodes`` the node references covered;
    ``parity`` the color of the unit in the two-coloring of the pin-joint
    adjacency (0 or 1).
    """

    triangles: tuple
    nodes: tuple
    parity: int


def _triangle_node_keys(spec: LatticeSpec, t: int, ci: int, cj: int):
    return [
        (node, (o1 + ci, o2 + cj))
        for node, (o1, o2) in spec.penalized_triangles[t].nodes
    ]


@lru_cache(maxsize=64)
def rigid_units(spec: LatticeSpec):
    """Derive the rigid units of a lattice and two-color them.

    Raises if a unit glues to its own lattice translate (a percolating
    rigid line has no counter-rotation) or if the pin adjacency is not
    two-colorable with a one-cell period.  Results are cached per spec
    instance.
    """
    npen = len(spec.penalized_triangles)
    win = range(-2, 3)
    insts = [(t, i, j) for t in range(npen) for i in win for j in win]
    by_node = {}
    for inst in insts:
        for key in _triangle_node_keys(spec, *inst):
            by_node.setdefault(key, []).append(inst)
    shared = Counter()
    for lst in by_node.values():
        for a, b in combinations(sorted(lst), 2):
            shared[(a, b)] += 1

    parent = {inst: inst for inst in insts}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (a, b), cnt in shared.items():
        if cnt >= 2:
            parent[find(a)] = find(b)

    comps = {}
    for inst in insts:
        comps.setdefault(find(inst), []).append(inst)

    units = []
    seen = set()
    for t in range(npen):
        comp = comps[find((t, 0, 0))]
        t0, i0, j0 = min(comp)
        tris = tuple(sorted((tt, (ii - i0, jj - j0)) for tt, ii, jj in comp))
        if tris in seen:
            continue
        seen.add(tris)
        classes = [x[0] for x in tris]
        if len(set(classes)) != len(classes):
            raise DegenerateGeometryError(
                "a rigid unit contains a lattice translate of itself"
            )
        nodes = set()
        for tt, (di, dj) in tris:
            nodes.update(_triangle_node_keys(spec, tt, di, dj))
        units.append(RigidUnit(tris, tuple(sorted(nodes)), -1))

    # two-color the pin adjacency of unit instances on a window
    unit_nodes = {
        (u, ci, cj): frozenset(
            (n, (o1 + ci, o2 + cj)) for n, (o1, o2) in unit.nodes
        )
        for u, unit in enumerate(units)
        for ci in win
        for cj in win
    }
    node_owner = {}
    for inst, keys in unit_nodes.items():
        for key in keys:
            node_owner.setdefault(key, []).append(inst)
    color = {}
    start = (0, 0, 0)
    color[start] = 0
    queue = deque([start])
    while queue:
        inst = queue.popleft()
        for key in unit_nodes[inst]:
            for other in node_owner[key]:
                if other == inst:
                    continue
                if other not in color:
                    color[other] = 1 - color[inst]
                    queue.append(other)
                elif color[other] == color[inst]:
                    raise DegenerateGeometryError(
                        "pin adjacency of rigid units is not two-colorable"
                    )
    out = []
    for u, unit in enumerate(units):
        cols = {color[(u, ci, cj)] for ci in (0, 1) for cj in (0, 1)
                if (u, ci, cj) in color}
        if len(cols) != 1:
            raise DegenerateGeometryError(
                "unit coloring is not one-cell periodic; no one-periodic "
                "counter-rotation exists"
            )
        out.append(RigidUnit(unit.triangles, unit.nodes, cols.pop()))
    return tuple(out)


# ---------------------------------------------------------------------------
# assembly of prescribed unit rotations
# ---------------------------------------------------------------------------


def assemble_rotated_units(
    spec: LatticeSpec,
    units,
    cells: Iterable,
    angle_fn: Callable[[int, int, int], float],
):
    """Place every unit instance ``(u, cell)`` rigidly rotated by
    ``angle_fn(u, ci, cj)``, chaining translations through shared pins.

    Returns ``(positions, misfit)``: deformed positions per node reference
    and the largest disagreement between the placements of a shared node.
    The instance graph must be connected over ``cells``.
    """
    cells = list(cells)
    insts = [(u, ci, cj) for (ci, cj) in cells for u in range(len(units))]
    inst_keys = {}
    inst_refpos = {}
    for inst in insts:
        u, ci, cj = inst
        keys = [(n, (o1 + ci, o2 + cj)) for n, (o1, o2) in units[u].nodes]
        inst_keys[inst] = keys
        inst_refpos[inst] = np.asarray([spec.node_position(k) for k in keys])
    owner = {}
    for inst, keys in inst_keys.items():
        for key in keys:
            owner.setdefault(key, []).append(inst)

    pos = {}
    misfit = 0.0
    placed = set()
    start = insts[0]
    queue = deque()

    def place(inst, R, tau):
        nonlocal misfit
        placed.add(inst)
        for key, x in zip(inst_keys[inst], inst_refpos[inst]):
            y = R @ x + tau
            if key in pos:
                misfit = max(misfit, float(np.linalg.norm(pos[key] - y)))
            else:
                pos[key] = y
        queue.append(inst)

    R0 = rotation(angle_fn(*start))
    centroid = inst_refpos[start].mean(axis=0)
    place(start, R0, centroid - R0 @ centroid)
    while queue:
        inst = queue.popleft()
        for key in inst_keys[inst]:
            for other in owner[key]:
                if other in placed:
                    continue
                R = rotation(angle_fn(*other))
                pin = next(kk for kk in inst_keys[other] if kk in pos)
                place(other, R, pos[pin] - R @ spec.node_position(pin))
    if len(placed) != len(insts):
        raise MechanismError("unit instance graph is disconnected over the given cells")
    return pos, misfit


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------


@dataclass
class MechanismCertificate:
    """Exact evidence that a deformation is (or is not) a mechanism."""

    energy: float                 # exact averaged energy at eta_ref
    eta_ref: float
    max_spring_residual: float    # max | |deformed| - rest | over springs
    min_det: float                # min det(grad u) over penalized triangles
    lam: np.ndarray
    sigma1: float
    sigma2: float
    det_sign: float

    @property
    def isotropy_defect(self) -> float:
        return self.sigma1 - self.sigma2


def certify(defm: PeriodicDeformation, eta_ref: float = 0.1) -> MechanismCertificate:
    bd = energy_breakdown(defm, eta_ref)
    resid = 0.0
    for table in defm.cell.spring_tables:
        d = defm.psi[table.head] - defm.psi[table.tail] + (defm.lam @ table.dx)[None, :]
        lengths = np.linalg.norm(d, axis=1)
        resid = max(resid, float(np.max(np.abs(lengths - table.rest))))
    min_det = min(float(np.min(d)) for d in triangle_dets(defm))
    sd = signed_svd(defm.lam)
    return MechanismCertificate(
        energy=bd.averaged,
        eta_ref=eta_ref,
        max_spring_residual=resid,
        min_det=min_det,
        lam=defm.lam.copy(),
        sigma1=sd.sigma1,
        sigma2=sd.sigma2,
        det_sign=sd.det_sign,
    )


@dataclass
class Mechanism:
    kind: str
    params: dict
    deformation: PeriodicDeformation
    certificate: MechanismCertificate


# ---------------------------------------------------------------------------
# counter-rotation (twist) mechanisms
# ---------------------------------------------------------------------------


def twist_mechanism(spec: LatticeSpec, theta: float, k: int = 1,
                    tol: float = 1e-12, eta_ref: float = 0.1) -> Mechanism:
    """The counter-rotation by ``+-theta`` as a certified k-periodic
    deformation.  Raises :class:`MechanismError` when the pin chase does
    not close (not every parameter slice of every family rotates)."""
    units = rigid_units(spec)
    cells = [(i, j) for i in range(-1, k + 1) for j in range(-1, k + 1)]

    def angle_fn(u, ci, cj):
        return theta if units[u].parity == 0 else -theta

    pos, misfit = assemble_rotated_units(spec, units, cells, angle_fn)
    if misfit > tol:
        raise MechanismError(
            f"counter-rotation by {theta:g} does not close: misfit {misfit:.3e}"
        )

    # macroscopic matrix from the deformed periods of any covered node
    base = None
    for node in range(spec.n_basic):
        keys = [(node, (0, 0)), (node, (k, 0)), (node, (0, k))]
        if all(kk in pos for kk in keys):
            base = keys
            break
    if base is None:
        raise MechanismError("assembly window too small to read off periods")
    y0, y1, y2 = (pos[kk] for kk in base)
    per = np.column_stack([k * spec.v1, k * spec.v2])
    lam = np.column_stack([y1 - y0, y2 - y0]) @ np.linalg.inv(per)

    cell = Supercell(spec, k)
    psi = np.zeros((cell.n_nodes, 2))
    filled = np.zeros(cell.n_nodes, dtype=bool)
    drift = 0.0
    for (node, (o1, o2)), y in pos.items():
        slot = cell.slot(node, o1, o2)
        val = y - lam @ spec.node_position((node, (o1, o2)))
        if filled[slot]:
            drift = max(drift, float(np.linalg.norm(psi[slot] - val)))
        else:
            psi[slot] = val
            filled[slot] = True
    if not filled.all():
        raise MechanismError("assembly window left supercell nodes unplaced")
    if drift > tol:
        raise MechanismError(
            f"counter-rotation is not {k}-periodic: period drift {drift:.3e}"
        )
    defm = PeriodicDeformation(cell, lam, psi)
    return Mechanism(
        kind="twist",
        params={"theta": float(theta), "k": int(k)},
        deformation=defm,
        certificate=certify(defm, eta_ref),
    )


def twist_admissible_range(spec: LatticeSpec, probe_step: float = 0.01,
                           det_floor: float = 1e-8):
    """Numerically probe the symmetric interval of twist angles on which
    the counter-rotation closes, ``det lam`` stays above ``det_floor``,
    and the contraction ``c(theta) = sigma1(lam)`` is strictly decreasing
    (the branch the soft-mode inversion needs).  Returns
    ``(-theta_max, theta_max)``."""
    theta = 0.0
    good = 0.0
    c_prev = 1.0
    while theta + probe_step < np.pi:
        theta += probe_step
        try:
            mech = twist_mechanism(spec, theta)
        except MechanismError:
            break
        cert = mech.certificate
        det = cert.det_sign * cert.sigma1 * cert.sigma2
        if cert.sigma1 >= c_prev or det <= det_floor:
            break
        c_prev = cert.sigma1
        good = theta
    if good == 0.0:
        raise MechanismError("no admissible twist angle found")
    return (-good, good)


# ---------------------------------------------------------------------------
# numerical mechanism search
# ---------------------------------------------------------------------------


def _pack(lam, psi):
    return np.concatenate([np.asarray(lam).ravel(), np.asarray(psi)[1:].ravel()])


def _unpack(x, n_nodes):
    lam = x[:4].reshape(2, 2)
    psi = np.zeros((n_nodes, 2))
    psi[1:] = x[4:].reshape(n_nodes - 1, 2)
    return lam, psi


def search_mechanisms(
    spec: LatticeSpec,
    k: int,
    seed: Optional[PeriodicDeformation] = None,
    restarts: int = 32,
    tol: float = 1e-12,
    rng_seed: int = 0,
    eta_ref: float = 0.1,
):
    """Joint minimization of spring energy over ``(lam, psi)`` with an
    annealed log-barrier keeping triangle orientations positive.

    Returns every accepted :class:`Mechanism` (exact averaged energy at
    ``eta_ref`` at most ``tol`` and strictly positive orientations),
    sorted by ``(energy, spring energy, restart index)``.  The first node's
    ``psi`` is pinned to remove translations.
    """
    cell = Supercell(spec, k)
    n = cell.n_nodes
    rng = np.random.default_rng(rng_seed)

    def objective(x, mu):
        lam, psi = _unpack(x, n)
        E, gl, gp = spring_energy_grad(cell, lam, psi)
        if mu > 0:
            B, gl2, gp2 = barrier_grad(cell, lam, psi, mu)
            if not np.isfinite(B):
                return np.inf, np.zeros_like(x)
            E += B
            gl = gl + gl2
            gp = gp + gp2
        return E, np.concatenate([gl.ravel(), gp[1:].ravel()])

    starts = []
    if seed is not None:
        if seed.cell.k != k:
            seed = seed.tile(k)
        starts.append(_pack(seed.lam, seed.psi - seed.psi[0]))
    while len(starts) < restarts:
        i = len(starts)
        if i % 2 == 0:
            c = rng.uniform(0.2, 0.99)
            lam0 = c * rotation(rng.uniform(0, 2 * np.pi))
            lam0 += 0.02 * rng.standard_normal((2, 2))
        else:
            lam0 = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
        psi0 = 0.2 * rng.standard_normal((n, 2))
        psi0[0] = 0.0
        starts.append(_pack(lam0, psi0))

    found = []
    for si, x0 in enumerate(starts):
        x = x0
        for mu in (1e-2, 1e-4, 1e-6, 0.0):
            res = minimize(
                objective, x, args=(mu,), jac=True, method="L-BFGS-B",
                options={"maxiter": 400, "ftol": 1e-18, "gtol": 1e-14},
            )
            x = res.x
        lam, psi = _unpack(x, n)
        defm = PeriodicDeformation(cell, lam, psi)
        cert = certify(defm, eta_ref)
        if cert.energy <= tol and cert.min_det > 0:
            spring = energy_breakdown(defm, eta_ref).spring_total
            found.append((cert.energy, spring, si,
                          Mechanism("searched", {"restart": si, "k": k}, defm, cert)))
    found.sort(key=lambda rec: rec[:3])
    return [rec[3] for rec in found]


def mechanism_search(spec, k, seed=None, restarts=32, tol=1e-12,
                     rng_seed=0, eta_ref=0.1) -> Optional[Mechanism]:
    """Best accepted mechanism from :func:`search_mechanisms`, or ``None``."""
    hits = search_mechanisms(spec, k, seed, restarts, tol, rng_seed, eta_ref)
    return hits[0] if hits else None


def mechanism_tangent_rank(spec: LatticeSpec, k: int):
    """Dimension of the first-order mechanism space at the reference state.

    Linearizes all spring-length constraints in ``(lam, psi)`` and returns
    ``(raw, quotiented)``: the raw kernel dimension and the dimension after
    removing the three-parameter trivial family (two translations and the
    rotation tangent, which lives in the skew part of ``lam``).
    """
    cell = Supercell(spec, k)
    n = cell.n_nodes
    rows = []
    for table in cell.spring_tables:
        u = table.dx / np.linalg.norm(table.dx)
        for c in range(cell.k * cell.k):
            row = np.zeros(4 + 2 * n)
            row[:4] = np.outer(u, table.dx).ravel()
            h, t = table.head[c], table.tail[c]
            row[4 + 2 * h:6 + 2 * h] += u
            row[4 + 2 * t:6 + 2 * t] -= u
            rows.append(row)
    J = np.asarray(rows)
    sv = np.linalg.svd(J, compute_uv=False)
    rank = int(np.sum(sv > 1e-9 * sv[0]))
    raw = J.shape[1] - rank
    return raw, raw - 3


# ---------------------------------------------------------------------------
# domain wall
# ---------------------------------------------------------------------------


def domain_wall_angles(theta1: float, n: int = 30) -> np.ndarray:
    """Solve the column-angle recursion

        sin(theta_k - pi/3) = sin(theta_{k+1} - pi/3)
                              - sin(theta_{k+1}) + sin(theta_{k+2})

    outward from ``theta_0 = 2 pi / 3`` (the flat wall column) and the
    chosen ``theta_1``.  Of the two arcsine branches the one closer to the
    previous angle is taken.  Returns ``theta_0 .. theta_n``.
    """
    if not 2 * np.pi / 3 <= theta1 < np.pi:
        raise ValueError(
            f"theta1 must lie in [2*pi/3, pi), got {theta1:g}"
        )
    th = np.empty(n + 1)
    th[0] = 2 * np.pi / 3
    th[1] = theta1
    for k in range(n - 1):
        s = np.sin(th[k] - np.pi / 3) - np.sin(th[k + 1] - np.pi / 3) + np.sin(th[k + 1])
        if abs(s) > 1:
            raise ValueError(f"angle recursion left [-1, 1] at step {k + 2}")
        a = float(np.arcsin(s))
        th[k + 2] = min((a, np.pi - a), key=lambda cand: abs(cand - th[k + 1]))
    return th


@dataclass
class DomainWall:
    """An assembled strip of the wall between two twist states."""

    theta: np.ndarray             # column angles 0..2*half_width
    positions: dict               # node reference -> deformed position
    half_width: int
    rows: int
    max_misfit: float
    max_spring_residual: float
    min_det: float
    compression_left: float
    compression_right: float
    compression_profile: dict     # column -> horizontal compression
    vertical_compression: float
    theta_limit: float

    @property
    def far_field_gap(self) -> float:
        return abs(self.compression_left - self.compression_right)


def domain_wall_mechanism(theta1: float, half_width: int = 15,
                          rows: int = 4, tol: float = 1e-10) -> DomainWall:
    """Assemble the kagome wall: triangle rotations follow the angle
    recursion column by column, mirrored about the wall, with positions
    chased through the pin joints.

    The wall lives on the standard kagome lattice; column ``m`` of pinch
    joints rotates its down-triangle by ``+(theta_|m| - 2 pi / 3)`` and its
    up-triangle by the opposite angle, with the sign mirrored for
    ``m < 0``.  Every spring with both ends in the strip is checked.
    """
    spec = build_kagome()
    K = 2 * half_width
    th = domain_wall_angles(theta1, K)
    phi = th - 2 * np.pi / 3

    units = rigid_units(spec)
    # Rotation signs: a down-pointing triangle (body above its pinch
    # node, which is basic node 1) rotates by +phi on the right half.
    down_sign = {}
    for u, unit in enumerate(units):
        pts = np.asarray([spec.node_position(r) for r in unit.nodes])
        pinch_y = next(spec.node_position(r)[1] for r in unit.nodes if r[0] == 1)
        down_sign[u] = 1.0 if pts[:, 1].mean() > pinch_y else -1.0

    cells = []
    for j in range(rows):
        i_lo = int(np.floor((-K - j) / 2))
        i_hi = int(np.ceil((K - j) / 2))
        for i in range(i_lo, i_hi + 1):
            if abs(2 * i + j) <= K:
                cells.append((i, j))

    def angle_fn(u, ci, cj):
        col = 2 * ci + cj
        side = 1.0 if col >= 0 else -1.0
        return down_sign[u] * side * phi[abs(col)]

    pos, misfit = assemble_rotated_units(spec, units, cells, angle_fn)
    if misfit > tol:
        raise MechanismError(f"domain wall does not close: misfit {misfit:.3e}")

    # check all springs and orientations inside the strip
    resid = 0.0
    for s in spec.springs:
        for (ci, cj) in cells:
            a = (s.a[0], (s.a[1][0] + ci, s.a[1][1] + cj))
            b = (s.b[0], (s.b[1][0] + ci, s.b[1][1] + cj))
            if a in pos and b in pos:
                resid = max(resid, abs(float(np.linalg.norm(pos[b] - pos[a])) - s.rest_length))
    min_det = np.inf
    for t in spec.penalized_triangles:
        q0, q1, q2 = (spec.node_position(r) for r in t.nodes)
        cross0 = float(_cross2(q1 - q0, q2 - q0))
        for (ci, cj) in cells:
            keys = [(r[0], (r[1][0] + ci, r[1][1] + cj)) for r in t.nodes]
            if all(kk in pos for kk in keys):
                p0, p1, p2 = (pos[kk] for kk in keys)
                min_det = min(min_det, float(_cross2(p1 - p0, p2 - p0)) / cross0)

    # pinch-joint compression profile along a middle row
    j0 = rows // 2
    pinches = {}
    for (ci, cj) in cells:
        if cj == j0:
            pinches[2 * ci + cj] = pos.get((1, (ci, cj)))
    profile = {}
    for col in sorted(pinches):
        if col - 2 in pinches and pinches[col] is not None and pinches[col - 2] is not None:
            profile[col - 1] = float(np.linalg.norm(pinches[col] - pinches[col - 2])) / 2.0
    left = profile[min(profile)]
    right = profile[max(profile)]

    # vertical compression at the right edge (one vertical period = -v1+2v2)
    vert = np.nan
    for (ci, cj) in sorted(cells, key=lambda c: -(2 * c[0] + c[1])):
        a = (1, (ci, cj))
        b = (1, (ci - 1, cj + 2))
        if a in pos and b in pos:
            vert = float(np.linalg.norm(pos[b] - pos[a])) / (2 * np.sqrt(3.0))
            break

    return DomainWall(
        theta=th,
        positions=pos,
        half_width=half_width,
        rows=rows,
        max_misfit=misfit,
        max_spring_residual=resid,
        min_det=min_det,
        compression_left=left,
        compression_right=right,
        compression_profile=profile,
        vertical_compression=vert,
        theta_limit=float(th[-1]),
    )
