"""Reference geometry of periodic spring lattices.

A lattice is described by two independent period vectors ``v1, v2``, a
finite list of *basic nodes* (positions of the nodes owned by one unit
cell), springs connecting lattice translates of basic nodes, a conforming
triangulation of the unit-cell region, and a distinguished subset of the
triangulation -- the *penalized triangles* -- whose orientation is
penalized by the energy.  Each structure also carries *marker edges*: pairs
``(b, r)`` of spring-aligned edge vectors satisfying ``r = c * R(alpha) b``
with one constant ``c`` and one angle ``alpha`` shared by every marker.
These markers drive the averaged-vector identities in
:mod:`latmech.geometry`.

Node references are pairs ``(node_index, (o1, o2))``: basic node
``node_index`` translated by ``o1 * v1 + o2 * v2``.  All springs and
triangles are stored per unit cell with offsets chosen so that every
endpoint lies in the closure of the triangulated cell region.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "DegenerateGeometryError",
    "Spring",
    "PenalizedTriangle",
    "MarkerPair",
    "LatticeSpec",
    "Supercell",
    "PeriodicDeformation",
    "build_kagome",
    "build_rotating_squares",
    "build_variant",
    "rotation",
    "VARIANT_KINDS",
]

# A node reference: (basic node index, (offset1, offset2)).
NodeRef = tuple


class DegenerateGeometryError(ValueError):
    """Requested parameters produce a degenerate or inconsistent lattice."""


def rotation(angle: float) -> np.ndarray:
    """Counterclockwise rotation matrix through ``angle`` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _cross(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _as_ref(obj) -> NodeRef:
    node, (o1, o2) = obj
    return (int(node), (int(o1), int(o2)))


# ---------------------------------------------------------------------------
# data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Spring:
    """A spring class: one spring per unit cell between two node references.

    ``rest_length`` always equals the reference distance of the endpoints;
    it is derived from positions, never entered independently.
    """

    a: NodeRef
    b: NodeRef
    rest_length: float
    stiffness: float = 1.0


@dataclass(frozen=True)
class PenalizedTriangle:
    """An oriented triangle (counterclockwise) carrying the orientation
    penalty, with its reference area."""

    nodes: tuple
    area: float


@dataclass(frozen=True)
class MarkerPair:
    """Marker edges ``b`` and ``r`` (spring-aligned, ``r = c R(alpha) b``)
    together with the index of the penalized triangle they decorate."""

    b_edge: tuple
    r_edge: tuple
    triangle: int


def _seg_key(a: NodeRef, b: NodeRef):
    """Translation-invariant, orientation-free key of a lattice segment."""
    (ia, oa), (ib, ob) = a, b
    rep1 = (ia, ib, ob[0] - oa[0], ob[1] - oa[1])
    rep2 = (ib, ia, oa[0] - ob[0], oa[1] - ob[1])
    return min(rep1, rep2)


@dataclass(eq=False)
class LatticeSpec:
    """Immutable description of one periodic spring lattice."""

    name: str
    v1: np.ndarray
    v2: np.ndarray
    basic_nodes: np.ndarray
    springs: tuple
    penalized_triangles: tuple
    marker_edges: tuple
    alpha: float
    c_marker: float
    triangulation: tuple

    def __post_init__(self):
        self.v1 = np.asarray(self.v1, dtype=float).reshape(2)
        self.v2 = np.asarray(self.v2, dtype=float).reshape(2)
        self.basic_nodes = np.asarray(self.basic_nodes, dtype=float).reshape(-1, 2)
        for arr in (self.v1, self.v2, self.basic_nodes):
            arr.setflags(write=False)
        self.springs = tuple(self.springs)
        self.penalized_triangles = tuple(self.penalized_triangles)
        self.marker_edges = tuple(self.marker_edges)
        self.triangulation = tuple(self.triangulation)
        _validate_spec(self)

    # -- basic geometry -----------------------------------------------------

    @property
    def n_basic(self) -> int:
        return self.basic_nodes.shape[0]

    @property
    def cell_matrix(self) -> np.ndarray:
        """Columns are the period vectors."""
        return np.column_stack([self.v1, self.v2])

    @property
    def cell_area(self) -> float:
        return abs(_cross(self.v1, self.v2))

    def node_position(self, ref: NodeRef) -> np.ndarray:
        node, (o1, o2) = ref
        if not 0 <= node < self.n_basic:
            raise ValueError(f"unknown node reference {ref!r}")
        return self.basic_nodes[node] + o1 * self.v1 + o2 * self.v2

    def edge_vector(self, edge) -> np.ndarray:
        a, b = edge
        return self.node_position(b) - self.node_position(a)

    def marker_vectors(self, m: int):
        """Reference ``(b, r)`` vectors of marker ``m``."""
        mk = self.marker_edges[m]
        return self.edge_vector(mk.b_edge), self.edge_vector(mk.r_edge)

    @property
    def averaged_reference(self):
        """Reference averaged vectors ``a1 = sum_t b_t``, ``a2 = sum_t r_t``."""
        a1 = np.zeros(2)
        a2 = np.zeros(2)
        for m in range(len(self.marker_edges)):
            b, r = self.marker_vectors(m)
            a1 += b
            a2 += r
        return a1, a2

    # -- serialization -------------------------------------------------------

    def to_json(self, path=None) -> str:
        """Serialize to the documented JSON format (see ``docs/formats.md``)."""

        def ref(r):
            return [int(r[0]), int(r[1][0]), int(r[1][1])]

        pen_sets = [frozenset(t.nodes) for t in self.penalized_triangles]
        triangles = []
        for tri in self.triangulation:
            triangles.append(
                {"nodes": [ref(r) for r in tri], "penalized": frozenset(tri) in pen_sets}
            )
        data = {
            "name": self.name,
            "v1": list(self.v1),
            "v2": list(self.v2),
            "basic_nodes": [list(p) for p in self.basic_nodes],
            "springs": [
                {"a": ref(s.a), "b": ref(s.b), "k_spring": s.stiffness}
                for s in self.springs
            ],
            "triangles": triangles,
            "markers": [
                {
                    "b": [ref(m.b_edge[0]), ref(m.b_edge[1])],
                    "r": [ref(m.r_edge[0]), ref(m.r_edge[1])],
                    "t": m.triangle,
                }
                for m in self.marker_edges
            ],
            "alpha": self.alpha,
            "c_marker": self.c_marker,
        }
        text = json.dumps(data, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "LatticeSpec":
        """Load a spec from a JSON string or file path.

        Unknown keys are rejected; spring rest lengths and triangle areas
        are recomputed from node positions rather than read from the file.
        """
        text = source
        if "\n" not in str(source) and str(source).endswith(".json"):
            with open(source) as fh:
                text = fh.read()
        data = json.loads(text)
        required = {
            "name", "v1", "v2", "basic_nodes", "springs",
            "triangles", "markers", "alpha", "c_marker",
        }
        got = set(data)
        if got != required:
            extra, missing = got - required, required - got
            raise ValueError(
                f"bad lattice JSON: unknown keys {sorted(extra)}, missing {sorted(missing)}"
            )

        def ref(lst):
            i, o1, o2 = lst
            return (int(i), (int(o1), int(o2)))

        v1 = np.asarray(data["v1"], dtype=float)
        v2 = np.asarray(data["v2"], dtype=float)
        basic = np.asarray(data["basic_nodes"], dtype=float)

        def pos(r):
            return basic[r[0]] + r[1][0] * v1 + r[1][1] * v2

        springs = []
        for s in data["springs"]:
            if set(s) != {"a", "b", "k_spring"}:
                raise ValueError(f"bad spring entry keys {sorted(s)}")
            a, b = ref(s["a"]), ref(s["b"])
            springs.append(
                Spring(a, b, float(np.linalg.norm(pos(b) - pos(a))), float(s["k_spring"]))
            )
        triangulation = []
        penalized = []
        for t in data["triangles"]:
            if set(t) != {"nodes", "penalized"}:
                raise ValueError(f"bad triangle entry keys {sorted(t)}")
            nodes = tuple(ref(r) for r in t["nodes"])
            triangulation.append(nodes)
            if t["penalized"]:
                p0, p1, p2 = (pos(r) for r in nodes)
                penalized.append(
                    PenalizedTriangle(nodes, 0.5 * _cross(p1 - p0, p2 - p0))
                )
        markers = []
        for m in data["markers"]:
            if set(m) != {"b", "r", "t"}:
                raise ValueError(f"bad marker entry keys {sorted(m)}")
            markers.append(
                MarkerPair(
                    (ref(m["b"][0]), ref(m["b"][1])),
                    (ref(m["r"][0]), ref(m["r"][1])),
                    int(m["t"]),
                )
            )
        return cls(
            name=str(data["name"]),
            v1=v1,
            v2=v2,
            basic_nodes=basic,
            springs=tuple(springs),
            penalized_triangles=tuple(penalized),
            marker_edges=tuple(markers),
            alpha=float(data["alpha"]),
            c_marker=float(data["c_marker"]),
            triangulation=tuple(triangulation),
        )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _point_in_cover(spec: LatticeSpec, p: np.ndarray, tol: float = 1e-9) -> bool:
    for tri in spec.triangulation:
        p0, p1, p2 = (spec.node_position(r) for r in tri)
        d = np.column_stack([p1 - p0, p2 - p0])
        b = np.linalg.solve(d, p - p0)
        if b[0] >= -tol and b[1] >= -tol and b[0] + b[1] <= 1 + tol:
            return True
    return False


def _validate_spec(spec: LatticeSpec) -> None:
    scale = max(np.linalg.norm(spec.v1), np.linalg.norm(spec.v2))
    if abs(_cross(spec.v1, spec.v2)) <= 1e-12 * scale**2:
        raise DegenerateGeometryError("period vectors are linearly dependent")
    if spec.n_basic == 0:
        raise DegenerateGeometryError("lattice has no basic nodes")

    # basic nodes must be distinct modulo the lattice
    M = spec.cell_matrix
    for i in range(spec.n_basic):
        for j in range(i + 1, spec.n_basic):
            frac = np.linalg.solve(M, spec.basic_nodes[i] - spec.basic_nodes[j])
            if np.max(np.abs(frac - np.round(frac))) < 1e-9:
                raise DegenerateGeometryError(
                    f"basic nodes {i} and {j} coincide modulo the lattice"
                )

    # triangulation: counterclockwise triangles tiling one cell area
    total = 0.0
    seen_nodes = set()
    for tri in spec.triangulation:
        if len(tri) != 3:
            raise ValueError(f"triangle {tri!r} does not have three vertices")
        p0, p1, p2 = (spec.node_position(r) for r in tri)
        area2 = _cross(p1 - p0, p2 - p0)
        if area2 <= 1e-12 * scale**2:
            raise DegenerateGeometryError(
                f"triangle {tri!r} is degenerate or clockwise (2*area={area2:g})"
            )
        total += 0.5 * area2
        seen_nodes.update(r[0] for r in tri)
    if abs(total - spec.cell_area) > 1e-9 * scale**2:
        raise DegenerateGeometryError(
            f"cover area {total:g} does not match cell area {spec.cell_area:g}"
        )
    if seen_nodes != set(range(spec.n_basic)):
        raise DegenerateGeometryError("some basic node never appears in the cover")

    # penalized triangles must be cover triangles with matching areas
    cover_sets = {frozenset(t) for t in spec.triangulation}
    for t in spec.penalized_triangles:
        if frozenset(t.nodes) not in cover_sets:
            raise DegenerateGeometryError(
                f"penalized triangle {t.nodes!r} is not part of the cover"
            )
        p0, p1, p2 = (spec.node_position(r) for r in t.nodes)
        if abs(0.5 * _cross(p1 - p0, p2 - p0) - t.area) > 1e-12 * scale**2:
            raise DegenerateGeometryError("penalized triangle area mismatch")

    # springs: positive rest length equal to reference distance, endpoints
    # inside the closed cell region (springs never cross the cell boundary)
    spring_keys = {}
    for idx, s in enumerate(spec.springs):
        d = np.linalg.norm(spec.edge_vector((s.a, s.b)))
        if d <= 1e-12 * scale:
            raise DegenerateGeometryError(f"spring {idx} has zero length")
        if abs(d - s.rest_length) > 1e-9 * scale:
            raise DegenerateGeometryError(
                f"spring {idx} rest length {s.rest_length:g} != distance {d:g}"
            )
        if s.stiffness <= 0:
            raise DegenerateGeometryError(f"spring {idx} has non-positive stiffness")
        key = _seg_key(s.a, s.b)
        if key in spring_keys:
            raise DegenerateGeometryError(
                f"springs {spring_keys[key]} and {idx} are lattice translates"
            )
        spring_keys[key] = idx
        for end in (s.a, s.b):
            if not _point_in_cover(spec, spec.node_position(end)):
                raise DegenerateGeometryError(
                    f"spring {idx} endpoint {end!r} lies outside the cell region"
                )

    # markers: spring-aligned edges with r = c R(alpha) b
    R = rotation(spec.alpha)
    for m, mk in enumerate(spec.marker_edges):
        if not 0 <= mk.triangle < len(spec.penalized_triangles):
            raise ValueError(f"marker {m} points to invalid triangle {mk.triangle}")
        for edge in (mk.b_edge, mk.r_edge):
            if _seg_key(*edge) not in spring_keys:
                raise DegenerateGeometryError(
                    f"marker {m} edge {edge!r} does not lie along a spring"
                )
        b, r = spec.marker_vectors(m)
        if np.linalg.norm(r - spec.c_marker * (R @ b)) > 1e-9 * scale:
            raise DegenerateGeometryError(
                f"marker {m} violates r = c R(alpha) b"
            )
    if not spec.marker_edges:
        raise DegenerateGeometryError("lattice carries no marker edges")


# ---------------------------------------------------------------------------
# spring-to-triangle attribution
# ---------------------------------------------------------------------------


def spring_attribution(spec: LatticeSpec):
    """Assign every spring's energy to penalized triangles.

    A spring claimed as a side by ``m`` penalized triangles contributes the
    fraction ``1 / m`` of its energy to each; springs that are a side of no
    penalized triangle go wholesale to the lowest-index penalized triangle
    sharing one of their endpoints.  Returns, per penalized triangle, a
    list of ``(spring_index, (d1, d2), weight)``: the triangle in cell
    ``(i, j)`` owns that share of the spring instance in cell
    ``(i + d1, j + d2)``.  Weights per spring class always sum to one, so
    per-triangle energies sum to the spring total exactly.
    """
    keys = {_seg_key(s.a, s.b): i for i, s in enumerate(spec.springs)}
    claims = [[] for _ in spec.penalized_triangles]
    counts = np.zeros(len(spec.springs), dtype=int)
    for t, tri in enumerate(spec.penalized_triangles):
        for u, v in ((0, 1), (1, 2), (2, 0)):
            a, b = tri.nodes[u], tri.nodes[v]
            idx = keys.get(_seg_key(a, b))
            if idx is None:
                continue
            s = spec.springs[idx]
            # align the side with the spring class to find the cell offset
            if a[0] == s.a[0] and b[0] == s.b[0] and (
                a[1][0] - s.a[1][0] == b[1][0] - s.b[1][0]
                and a[1][1] - s.a[1][1] == b[1][1] - s.b[1][1]
            ):
                delta = (a[1][0] - s.a[1][0], a[1][1] - s.a[1][1])
            else:
                delta = (a[1][0] - s.b[1][0], a[1][1] - s.b[1][1])
            claims[t].append((idx, delta))
            counts[idx] += 1
    out = [[] for _ in spec.penalized_triangles]
    for t, lst in enumerate(claims):
        for idx, delta in lst:
            out[t].append((idx, delta, 1.0 / counts[idx]))
    # leftover springs: attach to the first penalized triangle sharing a node
    for idx, s in enumerate(spec.springs):
        if counts[idx]:
            continue
        placed = False
        for t, tri in enumerate(spec.penalized_triangles):
            for vert in tri.nodes:
                for end in (s.a, s.b):
                    if vert[0] == end[0]:
                        delta = (vert[1][0] - end[1][0], vert[1][1] - end[1][1])
                        out[t].append((idx, delta, 1.0))
                        placed = True
                        break
                if placed:
                    break
            if placed:
                break
        if not placed:
            raise DegenerateGeometryError(
                f"spring {idx} shares no endpoint with any penalized triangle"
            )
    return out


# ---------------------------------------------------------------------------
# supercells
# ---------------------------------------------------------------------------


class _SpringTable:
    __slots__ = ("tail", "head", "dx", "rest", "stiffness")

    def __init__(self, tail, head, dx, rest, stiffness):
        self.tail = tail
        self.head = head
        self.dx = dx
        self.rest = rest
        self.stiffness = stiffness


class _TriangleTable:
    __slots__ = ("slots", "d1", "d2", "cross0", "area", "dinv")

    def __init__(self, slots, d1, d2, cross0, area):
        self.slots = slots          # (3, k*k) node slots
        self.d1 = d1                # reference edge P1 - P0
        self.d2 = d2                # reference edge P2 - P0
        self.cross0 = cross0        # 2 * reference area (positive)
        self.area = area
        self.dinv = np.linalg.inv(np.column_stack([d1, d2]))


class _MarkerTable:
    __slots__ = ("b_tail", "b_head", "b_dx", "r_tail", "r_head", "r_dx",
                 "b_spring", "r_spring", "triangle")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


class Supercell:
    """Assembled index tables for a ``k x k`` periodic tiling of a spec.

    Node slots are numbered ``(node * k + i) * k + j`` for basic node
    ``node`` in cell ``(i, j)``; cells are enumerated ``c = i * k + j``.
    """

    def __init__(self, spec: LatticeSpec, k: int):
        k = int(k)
        if k < 1:
            raise ValueError(f"supercell size must be >= 1, got {k}")
        self.spec = spec
        self.k = k
        kk = k * k
        nb = spec.n_basic
        self.n_nodes = nb * kk
        self.cell_area = kk * spec.cell_area

        ci = np.repeat(np.arange(k), k)
        cj = np.tile(np.arange(k), k)
        self._ci, self._cj = ci, cj
        shifts = ci[:, None] * spec.v1 + cj[:, None] * spec.v2
        self.ref_positions = (
            spec.basic_nodes[:, None, :] + shifts[None, :, :]
        ).reshape(self.n_nodes, 2)

        def slots(ref):
            node, (o1, o2) = ref
            return (node * k + (ci + o1) % k) * k + (cj + o2) % k

        self._slots_of = slots

        self.spring_tables = []
        for s in spec.springs:
            self.spring_tables.append(
                _SpringTable(
                    slots(s.a), slots(s.b), spec.edge_vector((s.a, s.b)),
                    s.rest_length, s.stiffness,
                )
            )

        def triangle_table(nodes):
            p0, p1, p2 = (spec.node_position(r) for r in nodes)
            d1, d2 = p1 - p0, p2 - p0
            cross0 = _cross(d1, d2)
            return _TriangleTable(
                np.stack([slots(r) for r in nodes]), d1, d2, cross0, 0.5 * cross0
            )

        self.penalized_tables = [triangle_table(t.nodes) for t in spec.penalized_triangles]
        self.cover_tables = [triangle_table(t) for t in spec.triangulation]

        # spring attribution, as gather maps between cell enumerations
        self.attribution = []
        for entries in spring_attribution(spec):
            rows = []
            for idx, (d1, d2), w in entries:
                cmap = ((ci + d1) % k) * k + (cj + d2) % k
                rows.append((idx, cmap, w))
            self.attribution.append(rows)

        keys = {_seg_key(s.a, s.b): i for i, s in enumerate(spec.springs)}
        self.marker_tables = []
        for mk in spec.marker_edges:
            self.marker_tables.append(
                _MarkerTable(
                    b_tail=slots(mk.b_edge[0]), b_head=slots(mk.b_edge[1]),
                    b_dx=spec.edge_vector(mk.b_edge),
                    r_tail=slots(mk.r_edge[0]), r_head=slots(mk.r_edge[1]),
                    r_dx=spec.edge_vector(mk.r_edge),
                    b_spring=spec.springs[keys[_seg_key(*mk.b_edge)]],
                    r_spring=spec.springs[keys[_seg_key(*mk.r_edge)]],
                    triangle=mk.triangle,
                )
            )

    def slot(self, node: int, o1: int, o2: int) -> int:
        k = self.k
        return (node * k + o1 % k) * k + o2 % k

    def zero_deformation(self, lam=None) -> "PeriodicDeformation":
        lam = np.eye(2) if lam is None else lam
        return PeriodicDeformation(self, lam, np.zeros((self.n_nodes, 2)))


# ---------------------------------------------------------------------------
# deformations
# ---------------------------------------------------------------------------


@dataclass
class PeriodicDeformation:
    """A deformation ``u(x) = lam x + psi(x)`` with ``psi`` periodic on a
    ``k x k`` supercell; ``psi`` holds one 2-vector per node slot."""

    cell: Supercell
    lam: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float).reshape(2, 2)
        self.psi = np.asarray(self.psi, dtype=float).reshape(self.cell.n_nodes, 2)

    @property
    def spec(self) -> LatticeSpec:
        return self.cell.spec

    def evaluate(self, ref: NodeRef, cell=(0, 0)) -> np.ndarray:
        """Deformed position of node ``ref`` translated by ``cell``."""
        node, (o1, o2) = ref
        o1, o2 = o1 + cell[0], o2 + cell[1]
        x = self.spec.node_position((node, (o1, o2)))
        return self.lam @ x + self.psi[self.cell.slot(node, o1, o2)]

    def node_values(self) -> np.ndarray:
        """Deformed positions of all canonical supercell nodes."""
        return self.cell.ref_positions @ self.lam.T + self.psi

    def translate(self, shift) -> "PeriodicDeformation":
        return PeriodicDeformation(self.cell, self.lam, self.psi + np.asarray(shift))

    def rotate(self, R) -> "PeriodicDeformation":
        """Left-compose with a linear map (typically a rotation)."""
        R = np.asarray(R, dtype=float)
        return PeriodicDeformation(self.cell, R @ self.lam, self.psi @ R.T)

    def tile(self, k: int) -> "PeriodicDeformation":
        """Re-express on a finer ``k x k`` supercell (``k`` need not be a
        multiple of the current period; ``psi`` wraps periodically)."""
        big = Supercell(self.spec, k)
        psi = np.empty((big.n_nodes, 2))
        for node in range(self.spec.n_basic):
            for i in range(k):
                for j in range(k):
                    psi[big.slot(node, i, j)] = self.psi[self.cell.slot(node, i, j)]
        return PeriodicDeformation(big, self.lam, psi)

    def interpolate(self, points):
        """Piecewise-affine interpolation of ``u`` over the cover.

        Returns ``(values, grads)`` with shapes ``(m, 2)`` and
        ``(m, 2, 2)``.  Raises :class:`ValueError` for points not covered
        by any cell triangle.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        Minv = np.linalg.inv(self.spec.cell_matrix)
        values = np.empty((len(points), 2))
        grads = np.empty((len(points), 2, 2))
        for n, p in enumerate(points):
            base = np.floor(Minv @ p).astype(int)
            hit = False
            for di in (0, -1, 1, -2, 2):
                for dj in (0, -1, 1, -2, 2):
                    cellij = (int(base[0]) + di, int(base[1]) + dj)
                    for tri, table in zip(self.spec.triangulation, self.cell.cover_tables):
                        p0 = self.spec.node_position(tri[0]) + \
                            cellij[0] * self.spec.v1 + cellij[1] * self.spec.v2
                        bary = table.dinv @ (p - p0)
                        if bary[0] < -1e-9 or bary[1] < -1e-9 or bary.sum() > 1 + 1e-9:
                            continue
                        u0 = self.evaluate(tri[0], cellij)
                        u1 = self.evaluate(tri[1], cellij)
                        u2 = self.evaluate(tri[2], cellij)
                        values[n] = (1 - bary.sum()) * u0 + bary[0] * u1 + bary[1] * u2
                        grads[n] = np.column_stack([u1 - u0, u2 - u0]) @ table.dinv
                        hit = True
                        break
                    if hit:
                        break
                if hit:
                    break
            if not hit:
                raise ValueError(f"point {p} not covered by the cell triangulation")
        return values, grads


# ---------------------------------------------------------------------------
# built-in structures
# ---------------------------------------------------------------------------


def _spring(pos, a, b, stiffness=1.0) -> Spring:
    a, b = _as_ref(a), _as_ref(b)
    return Spring(a, b, float(np.linalg.norm(pos(b) - pos(a))), stiffness)


def _triangle(pos, refs) -> PenalizedTriangle:
    refs = tuple(_as_ref(r) for r in refs)
    p0, p1, p2 = (pos(r) for r in refs)
    return PenalizedTriangle(refs, 0.5 * _cross(p1 - p0, p2 - p0))


def build_kagome() -> LatticeSpec:
    """Triangles of unit side on the kagome arrangement.

    The cell ``[0, 2] x [0, sqrt(3)]`` holds one upward and one downward
    triangle joined at a pinch node, the surrounding hexagonal holes split
    into four cover triangles.  Markers point along the horizontal spring
    lines (``b``) and their 60-degree partners (``r``).
    """
    rt3 = np.sqrt(3.0)
    v1 = np.array([2.0, 0.0])
    v2 = np.array([1.0, rt3])
    basic = np.array([[1.0, 0.0], [0.5, 0.5 * rt3], [1.0, rt3]])
    A, O, D = 0, 1, 2

    def pos(ref):
        node, (o1, o2) = ref
        return basic[node] + o1 * v1 + o2 * v2

    springs = (
        _spring(pos, (A, (0, 0)), (O, (0, 0))),     # A-O
        _spring(pos, (D, (0, -1)), (O, (0, 0))),    # B-O
        _spring(pos, (A, (-1, 1)), (O, (0, 0))),    # C-O
        _spring(pos, (D, (0, 0)), (O, (0, 0))),     # D-O
        _spring(pos, (A, (0, 0)), (D, (1, -1))),    # A-F
        _spring(pos, (D, (0, 0)), (A, (0, 1))),     # D-E
    )
    penalized = (
        _triangle(pos, ((A, (-1, 1)), (O, (0, 0)), (D, (0, 0)))),   # down: C O D
        _triangle(pos, ((A, (0, 0)), (O, (0, 0)), (D, (0, -1)))),   # up:   A O B
    )
    markers = (
        MarkerPair(((A, (-1, 1)), (D, (0, 0))), ((O, (0, 0)), (D, (0, 0))), 0),
        MarkerPair(((D, (0, -1)), (A, (0, 0))), ((D, (0, -1)), (O, (0, 0))), 1),
    )
    triangulation = (
        penalized[0].nodes,
        penalized[1].nodes,
        ((D, (0, -1)), (O, (0, 0)), (A, (-1, 1))),   # B O C
        ((A, (0, 0)), (D, (1, -1)), (O, (0, 0))),    # A F O
        ((D, (1, -1)), (A, (0, 1)), (D, (0, 0))),    # F E D
        ((D, (1, -1)), (D, (0, 0)), (O, (0, 0))),    # F D O
    )
    return LatticeSpec(
        name="kagome",
        v1=v1,
        v2=v2,
        basic_nodes=basic,
        springs=springs,
        penalized_triangles=penalized,
        marker_edges=markers,
        alpha=np.pi / 3,
        c_marker=1.0,
        triangulation=triangulation,
    )


def build_rotating_squares() -> LatticeSpec:
    """Unit squares joined at corners, diagonally braced.

    Each square is split by its braced diagonal (stiffness 2) into two
    penalized triangles; the square holes between them are covered but not
    penalized.  Markers run along the horizontal spring lines (``b``) and
    the vertical ones (``r``)."""
    v1 = np.array([2.0, 0.0])
    v2 = np.array([0.0, 2.0])
    basic = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    A, B, D, O = 0, 1, 2, 3

    def pos(ref):
        node, (o1, o2) = ref
        return basic[node] + o1 * v1 + o2 * v2

    springs = (
        _spring(pos, (A, (0, 0)), (B, (0, 0))),             # A-B
        _spring(pos, (A, (0, 0)), (O, (0, 0)), 2.0),        # A-O brace
        _spring(pos, (A, (0, 0)), (D, (0, 0))),             # A-D
        _spring(pos, (B, (0, 0)), (A, (1, 0))),             # B-C
        _spring(pos, (B, (0, 0)), (O, (0, 0))),             # B-O
        _spring(pos, (D, (0, 0)), (O, (0, 0))),             # D-O
        _spring(pos, (O, (0, 0)), (D, (1, 0))),             # O-E
        _spring(pos, (D, (0, 0)), (A, (0, 1))),             # D-F
        _spring(pos, (O, (0, 0)), (B, (0, 1))),             # O-G
        _spring(pos, (O, (0, 0)), (A, (1, 1)), 2.0),        # O-H brace
    )
    penalized = (
        _triangle(pos, ((A, (0, 0)), (B, (0, 0)), (O, (0, 0)))),
        _triangle(pos, ((A, (0, 0)), (O, (0, 0)), (D, (0, 0)))),
        _triangle(pos, ((O, (0, 0)), (D, (1, 0)), (A, (1, 1)))),
        _triangle(pos, ((O, (0, 0)), (A, (1, 1)), (B, (0, 1)))),
    )
    markers = (
        MarkerPair(((A, (0, 0)), (B, (0, 0))), ((B, (0, 0)), (O, (0, 0))), 0),
        MarkerPair(((D, (0, 0)), (O, (0, 0))), ((A, (0, 0)), (D, (0, 0))), 1),
        MarkerPair(((O, (0, 0)), (D, (1, 0))), ((D, (1, 0)), (A, (1, 1))), 2),
        MarkerPair(((B, (0, 1)), (A, (1, 1))), ((O, (0, 0)), (B, (0, 1))), 3),
    )
    triangulation = (
        penalized[0].nodes,
        penalized[1].nodes,
        penalized[2].nodes,
        penalized[3].nodes,
        ((B, (0, 0)), (A, (1, 0)), (D, (1, 0))),
        ((B, (0, 0)), (D, (1, 0)), (O, (0, 0))),
        ((D, (0, 0)), (O, (0, 0)), (B, (0, 1))),
        ((D, (0, 0)), (B, (0, 1)), (A, (0, 1))),
    )
    return LatticeSpec(
        name="rotating-squares",
        v1=v1,
        v2=v2,
        basic_nodes=basic,
        springs=springs,
        penalized_triangles=penalized,
        marker_edges=markers,
        alpha=np.pi / 2,
        c_marker=1.0,
        triangulation=triangulation,
    )


# ---------------------------------------------------------------------------
# parametric variants
# ---------------------------------------------------------------------------


def _kagome_family(name, alpha, leg_ratio, size_ratio, size) -> LatticeSpec:
    """Triangles of one shape and two sizes on the kagome topology.

    Each triangle has a ``b`` side of length ``l`` along the horizontal
    spring line and an ``r`` side of length ``leg_ratio * l`` at angle
    ``alpha``; the two triangle families have ``l = size`` and
    ``l = size * size_ratio``.
    """
    if not 0 < alpha < np.pi:
        raise DegenerateGeometryError(f"marker angle must be in (0, pi), got {alpha:g}")
    if leg_ratio <= 0 or size_ratio <= 0 or size <= 0:
        raise DegenerateGeometryError("ratios and sizes must be positive")
    l1 = float(size)
    l2 = float(size * size_ratio)
    c = float(leg_ratio)
    e1 = np.array([1.0, 0.0])
    ea = np.array([np.cos(alpha), np.sin(alpha)])
    v1 = (l1 + l2) * e1
    v2 = c * (l1 + l2) * ea
    nA = np.zeros(2)
    nB = c * l1 * ea
    nC = nB + l2 * e1          # the shared corner node, kept inside the cell
    basic = np.array([nA, nB, nC])
    A, B, C = 0, 1, 2

    def pos(ref):
        node, (o1, o2) = ref
        return basic[node] + o1 * v1 + o2 * v2

    springs = (
        _spring(pos, (A, (1, 0)), (B, (1, 0))),
        _spring(pos, (B, (1, 0)), (C, (0, 0))),
        _spring(pos, (C, (0, 0)), (A, (1, 0))),
        _spring(pos, (A, (0, 1)), (B, (0, 0))),
        _spring(pos, (B, (0, 0)), (C, (0, 0))),
        _spring(pos, (C, (0, 0)), (A, (0, 1))),
    )
    penalized = (
        _triangle(pos, ((A, (1, 0)), (B, (1, 0)), (C, (0, 0)))),
        _triangle(pos, ((A, (0, 1)), (B, (0, 0)), (C, (0, 0)))),
    )
    markers = (
        MarkerPair(((C, (0, 0)), (B, (1, 0))), ((A, (1, 0)), (B, (1, 0))), 0),
        MarkerPair(((B, (0, 0)), (C, (0, 0))), ((B, (0, 0)), (A, (0, 1))), 1),
    )
    cycle = (
        (A, (0, 0)), (A, (1, 0)), (B, (1, 0)), (A, (1, 1)), (A, (0, 1)), (B, (0, 0)),
    )
    pen_sets = {frozenset(t.nodes) for t in penalized}
    triangulation = [penalized[0].nodes, penalized[1].nodes]
    for m in range(6):
        tri = ((C, (0, 0)), cycle[m], cycle[(m + 1) % 6])
        if frozenset(tri) not in pen_sets:
            triangulation.append(tri)
    return LatticeSpec(
        name=name,
        v1=v1,
        v2=v2,
        basic_nodes=basic,
        springs=springs,
        penalized_triangles=penalized,
        marker_edges=markers,
        alpha=alpha,
        c_marker=c,
        triangulation=tuple(triangulation),
    )


def _rhombus_squares(angle, size_ratio, size) -> LatticeSpec:
    """Corner-joined rhombi of two sizes, diagonally braced."""
    if not 0 < angle < np.pi:
        raise DegenerateGeometryError(f"rhombus angle must be in (0, pi), got {angle:g}")
    if size <= 0 or size_ratio <= 0:
        raise DegenerateGeometryError("sizes must be positive")
    L1 = float(size)
    L2 = float(size * size_ratio)
    eu = np.array([1.0, 0.0])
    ew = np.array([np.cos(angle), np.sin(angle)])
    v1 = (L1 + L2) * eu
    v2 = (L1 + L2) * ew
    basic = np.array([np.zeros(2), L1 * eu, L1 * ew, L1 * (eu + ew)])
    A, B, D, O = 0, 1, 2, 3

    def pos(ref):
        node, (o1, o2) = ref
        return basic[node] + o1 * v1 + o2 * v2

    springs = (
        _spring(pos, (A, (0, 0)), (B, (0, 0))),
        _spring(pos, (A, (0, 0)), (O, (0, 0)), 2.0),
        _spring(pos, (A, (0, 0)), (D, (0, 0))),
        _spring(pos, (B, (0, 0)), (A, (1, 0))),
        _spring(pos, (B, (0, 0)), (O, (0, 0))),
        _spring(pos, (D, (0, 0)), (O, (0, 0))),
        _spring(pos, (O, (0, 0)), (D, (1, 0))),
        _spring(pos, (D, (0, 0)), (A, (0, 1))),
        _spring(pos, (O, (0, 0)), (B, (0, 1))),
        _spring(pos, (O, (0, 0)), (A, (1, 1)), 2.0),
    )
    penalized = (
        _triangle(pos, ((A, (0, 0)), (B, (0, 0)), (O, (0, 0)))),
        _triangle(pos, ((A, (0, 0)), (O, (0, 0)), (D, (0, 0)))),
        _triangle(pos, ((O, (0, 0)), (D, (1, 0)), (A, (1, 1)))),
        _triangle(pos, ((O, (0, 0)), (A, (1, 1)), (B, (0, 1)))),
    )
    markers = (
        MarkerPair(((A, (0, 0)), (B, (0, 0))), ((B, (0, 0)), (O, (0, 0))), 0),
        MarkerPair(((D, (0, 0)), (O, (0, 0))), ((A, (0, 0)), (D, (0, 0))), 1),
        MarkerPair(((O, (0, 0)), (D, (1, 0))), ((D, (1, 0)), (A, (1, 1))), 2),
        MarkerPair(((B, (0, 1)), (A, (1, 1))), ((O, (0, 0)), (B, (0, 1))), 3),
    )
    triangulation = (
        penalized[0].nodes,
        penalized[1].nodes,
        penalized[2].nodes,
        penalized[3].nodes,
        ((B, (0, 0)), (A, (1, 0)), (D, (1, 0))),
        ((B, (0, 0)), (D, (1, 0)), (O, (0, 0))),
        ((D, (0, 0)), (O, (0, 0)), (B, (0, 1))),
        ((D, (0, 0)), (B, (0, 1)), (A, (0, 1))),
    )
    return LatticeSpec(
        name="rhombus-squares",
        v1=v1,
        v2=v2,
        basic_nodes=basic,
        springs=springs,
        penalized_triangles=penalized,
        marker_edges=markers,
        alpha=angle,
        c_marker=1.0,
        triangulation=triangulation,
    )


def _quad_squares(alpha, s, q, d1, d2) -> LatticeSpec:
    """Corner-joined congruent quadrilaterals with both diagonals braced.

    The diagonals have equal length ``d1 = d2`` and meet at angle
    ``alpha``; ``s`` and ``q`` locate the crossing point along the two
    diagonals.  Markers run along the diagonals themselves.
    """
    if abs(d1 - d2) > 1e-12 * max(d1, d2):
        raise DegenerateGeometryError(
            f"diagonals must have equal length, got {d1:g} and {d2:g}"
        )
    if not 0 < alpha < np.pi:
        raise DegenerateGeometryError(f"diagonal angle must be in (0, pi), got {alpha:g}")
    if not (0 < s < 1 and 0 < q < 1):
        raise DegenerateGeometryError("crossing fractions must lie in (0, 1)")
    if d1 <= 0:
        raise DegenerateGeometryError("diagonal length must be positive")
    L = float(d1)
    e1 = np.array([1.0, 0.0])
    er = np.array([np.cos(alpha), np.sin(alpha)])
    v1 = L * (e1 - er)
    v2 = L * (e1 + er)
    nA = np.zeros(2)
    nB = s * L * e1 - q * L * er
    nO = L * e1
    nD = s * L * e1 + (1 - q) * L * er
    basic = np.array([nA, nB, nD, nO])
    A, B, D, O = 0, 1, 2, 3

    def pos(ref):
        node, (o1, o2) = ref
        return basic[node] + o1 * v1 + o2 * v2

    springs = (
        _spring(pos, (A, (0, 0)), (B, (0, 0))),
        _spring(pos, (A, (0, 0)), (O, (0, 0)), 2.0),     # b diagonal
        _spring(pos, (A, (0, 0)), (D, (0, 0))),
        _spring(pos, (B, (0, 0)), (A, (1, 0))),
        _spring(pos, (B, (0, 0)), (O, (0, 0))),
        _spring(pos, (D, (0, 0)), (O, (0, 0))),
        _spring(pos, (O, (0, 0)), (D, (1, 0))),
        _spring(pos, (D, (0, 0)), (A, (0, 1))),
        _spring(pos, (O, (0, 0)), (B, (0, 1))),
        _spring(pos, (O, (0, 0)), (A, (1, 1)), 2.0),     # b diagonal
        _spring(pos, (B, (0, 0)), (D, (0, 0))),          # r diagonal
        _spring(pos, (D, (1, 0)), (B, (0, 1))),          # r diagonal
    )
    penalized = (
        _triangle(pos, ((A, (0, 0)), (B, (0, 0)), (O, (0, 0)))),
        _triangle(pos, ((A, (0, 0)), (O, (0, 0)), (D, (0, 0)))),
        _triangle(pos, ((O, (0, 0)), (D, (1, 0)), (A, (1, 1)))),
        _triangle(pos, ((O, (0, 0)), (A, (1, 1)), (B, (0, 1)))),
    )
    markers = (
        MarkerPair(((A, (0, 0)), (O, (0, 0))), ((B, (0, 0)), (D, (0, 0))), 0),
        MarkerPair(((O, (0, 0)), (A, (1, 1))), ((D, (1, 0)), (B, (0, 1))), 2),
    )
    triangulation = (
        penalized[0].nodes,
        penalized[1].nodes,
        penalized[2].nodes,
        penalized[3].nodes,
        ((B, (0, 0)), (A, (1, 0)), (D, (1, 0))),
        ((B, (0, 0)), (D, (1, 0)), (O, (0, 0))),
        ((O, (0, 0)), (B, (0, 1)), (A, (0, 1))),
        ((O, (0, 0)), (A, (0, 1)), (D, (0, 0))),
    )
    return LatticeSpec(
        name="quad-squares",
        v1=v1,
        v2=v2,
        basic_nodes=basic,
        springs=springs,
        penalized_triangles=penalized,
        marker_edges=markers,
        alpha=alpha,
        c_marker=1.0,
        triangulation=triangulation,
    )


def _isosceles_kagome(apex=np.pi / 3, size_ratio=1.0, size=1.0):
    return _kagome_family("isosceles-kagome", apex, 1.0, size_ratio, size)


def _general_kagome(alpha=np.pi / 3, leg_ratio=1.0, size_ratio=1.0, size=1.0):
    return _kagome_family("general-kagome", alpha, leg_ratio, size_ratio, size)


def _rhombus_rs(angle=np.pi / 2, size_ratio=1.0, size=1.0):
    return _rhombus_squares(angle, size_ratio, size)


def _quad_rs(alpha=np.pi / 2, s=0.5, q=0.5, d1=1.0, d2=1.0):
    return _quad_squares(alpha, s, q, d1, d2)


VARIANT_KINDS = {
    "isosceles-kagome": _isosceles_kagome,
    "general-kagome": _general_kagome,
    "rhombus-squares": _rhombus_rs,
    "quad-squares": _quad_rs,
}


def build_variant(kind: str, **params) -> LatticeSpec:
    """Build one of the parametric families in :data:`VARIANT_KINDS`.

    ``isosceles-kagome(apex, size_ratio, size)``:
        triangles with two equal marker sides meeting at ``apex``; the two
        families scale by ``size_ratio``.
    ``general-kagome(alpha, leg_ratio, size_ratio, size)``:
        same topology with ``|r| = leg_ratio * |b|``, so ``c != 1``.
    ``rhombus-squares(angle, size_ratio, size)``:
        corner-joined rhombi with interior angle ``angle``.
    ``quad-squares(alpha, s, q, d1, d2)``:
        congruent quadrilaterals with equal braced diagonals meeting at
        ``alpha``, crossing at fractions ``s`` and ``q``.  The pure
        counter-rotation mechanism requires midpoint crossing
        (``s = q = 1/2``); other parameters still build a valid lattice.
    """
    try:
        builder = VARIANT_KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown variant kind {kind!r}; choose one of {sorted(VARIANT_KINDS)}"
        ) from None
    return builder(**params)
