"""Alpha-shape surface reconstruction and mesh measurements.

The reconstruction keeps every Delaunay tetrahedron whose circumsphere is
small (squared circumradius at most alpha, in mm^2) and reads the surface
off the kept complex: a triangle is on the surface when exactly one kept
tetrahedron touches it. Orientation is inherited from the positively
oriented tetrahedra, so surface normals point out of the solid.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .cloudcore import COORD_FORMAT, PointCloud
from .errors import DegenerateGeometryError, ParseError, PreconditionError

DEFAULT_ALPHA = 0.6        # mm^2, squared circumradius cutoff
_FLAT_REL = 1e-10          # relative height below which a tet counts as flat
_VOLUME_AGREEMENT = 1e-6   # relative tolerance between the two volume routes

# Faces of a positively oriented tetrahedron (a, b, c, d), wound so the
# right-hand normal of each points away from the fourth vertex.
_TET_FACES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle soup; faces are CCW seen from outside."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, float))
        f = np.ascontiguousarray(np.asarray(self.faces, np.int64))
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
            raise PreconditionError("vertices must be a non-empty (n, 3) array")
        if not np.isfinite(v).all():
            raise PreconditionError("vertices must be finite")
        if f.ndim != 2 or f.shape[1] != 3 or f.shape[0] == 0:
            raise PreconditionError("faces must be a non-empty (m, 3) array")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise PreconditionError("face indices out of range")
        if ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
            raise PreconditionError("faces must reference 3 distinct vertices")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)


def _as_points(data) -> np.ndarray:
    pts = data.points if isinstance(data, PointCloud) else np.asarray(data, float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise PreconditionError("expected an (n, 3) point array")
    return pts


def delaunay_tetrahedra(data) -> np.ndarray:
    """Delaunay tetrahedra as a (t, 4) index array, positively oriented.

    Flat slivers (produced wherever five or more points are cospherical,
    e.g. on a regular grid) are kept: they carry no volume, but discarding
    them would punch holes into the face-counting that follows. Raises
    DegenerateGeometryError when the points are too few or too flat to
    tetrahedralize.
    """
    pts = _as_points(data)
    if pts.shape[0] < 4:
        raise PreconditionError("tetrahedralization needs at least 4 points")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateGeometryError(
            f"points do not span a 3D volume: {exc}") from exc
    tets = np.asarray(tri.simplices, np.int64)
    vol6 = _signed_volume6(pts, tets)
    flip = vol6 < 0
    if flip.any():
        tets = tets.copy()
        tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
    return tets


def _signed_volume6(pts: np.ndarray, tets: np.ndarray) -> np.ndarray:
    a, b, c, d = (pts[tets[:, i]] for i in range(4))
    return np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a))


def _concyclic_radius_sq(quad: np.ndarray) -> float:
    """Smallest circumscribing sphere of four (near-)concyclic points.

    A flat Delaunay sliver has its vertices on a common circle (the section
    of the offending circumsphere), so the tightest sphere through them has
    that circle's radius, which equals the circumradius of any non-collinear
    vertex triple.
    """
    best = 0.0
    r2 = np.inf
    for triple in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a, b, c = quad[list(triple)]
        cross = np.cross(b - a, c - a)
        area2 = float(cross @ cross)          # (2 * triangle area)^2
        if area2 > best:
            best = area2
            e1 = float((b - a) @ (b - a))
            e2 = float((c - a) @ (c - a))
            e3 = float((c - b) @ (c - b))
            r2 = e1 * e2 * e3 / (4.0 * area2)
    return r2


def circumradius_sq(data, tets: np.ndarray) -> np.ndarray:
    """Squared radius of each tetrahedron's smallest circumscribing sphere.

    For a proper tetrahedron that is the circumsphere; a flat sliver falls
    back to the circle through its (cospherical, hence concyclic) vertices.
    """
    pts = _as_points(data)
    a = pts[tets[:, 0]]
    rows = np.stack([pts[tets[:, i]] - a for i in (1, 2, 3)], axis=1)
    rhs = 0.5 * np.einsum("tij,tij->ti", rows, rows)
    scale = np.sqrt(np.einsum("tij,tij->ti", rows, rows).max(axis=1))
    proper = np.abs(np.linalg.det(rows)) > _FLAT_REL * scale ** 3
    out = np.empty(tets.shape[0])
    if proper.any():
        centre_rel = np.linalg.solve(rows[proper], rhs[proper][..., None])[..., 0]
        out[proper] = np.einsum("ij,ij->i", centre_rel, centre_rel)
    for t in np.nonzero(~proper)[0]:
        out[t] = _concyclic_radius_sq(pts[tets[t]])
    return out


def alpha_complex(data, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Delaunay tetrahedra with squared circumradius at most `alpha`."""
    if alpha <= 0:
        raise PreconditionError(
            "alpha must be positive; at zero the shape collapses to the "
            "bare point set")
    pts = _as_points(data)
    tets = delaunay_tetrahedra(pts)
    kept = tets[circumradius_sq(pts, tets) <= alpha]
    if kept.shape[0] == 0:
        raise DegenerateGeometryError(
            f"no tetrahedra survive at alpha={alpha:g}; "
            "the cutoff is below the local point spacing")
    return kept


def boundary_faces(tets: np.ndarray, points=None) -> np.ndarray:
    """Outward-oriented triangles touched by exactly one tetrahedron.

    Winding is inherited from the positively oriented tetrahedra. A flat
    sliver has no orientation of its own, so when `points` is given, any
    boundary face a sliver contributes is re-wound to agree with its
    neighbours (or, for a patch with no proper tetrahedron at all, to give
    the patch a positive enclosed volume).
    """
    tets = np.asarray(tets, np.int64)
    faces = np.concatenate([tets[:, idx] for idx in _TET_FACES])
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                   return_counts=True)
    on_boundary = counts[inverse] == 1
    faces = faces[on_boundary]
    if points is None or faces.shape[0] == 0:
        return faces
    pts = _as_points(points)
    source = np.tile(np.arange(tets.shape[0]), 4)[on_boundary]
    trusted = ~_flat_mask(pts, tets)[source]
    if trusted.all():
        return faces
    return _reorient_faces(pts, faces, trusted)


def _flat_mask(pts: np.ndarray, tets: np.ndarray) -> np.ndarray:
    a = pts[tets[:, 0]]
    rows = np.stack([pts[tets[:, i]] - a for i in (1, 2, 3)], axis=1)
    scale = np.sqrt(np.einsum("tij,tij->ti", rows, rows).max(axis=1))
    return np.abs(np.linalg.det(rows)) <= _FLAT_REL * scale ** 3


def _reorient_faces(pts: np.ndarray, faces: np.ndarray,
                    trusted: np.ndarray) -> np.ndarray:
    """Make face windings coherent, anchored on the trusted faces.

    Two faces sharing an edge agree when they traverse it in opposite
    directions; flips propagate breadth-first from faces whose winding is
    already known to be outward.
    """
    n = faces.shape[0]
    rows = faces.tolist()
    edge_map: dict = {}
    for i, (a, b, c) in enumerate(rows):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edge_map.setdefault(key, []).append((i, u < v))
    adjacency: list = [[] for _ in range(n)]
    for members in edge_map.values():
        if len(members) == 2:
            (i, di), (j, dj) = members
            adjacency[i].append((j, di == dj))
            adjacency[j].append((i, di == dj))

    state = np.zeros(n, np.int8)
    components = []
    for seed in itertools.chain(np.nonzero(trusted)[0], range(n)):
        if state[seed]:
            continue
        state[seed] = 1
        component = [seed]
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            for j, same_direction in adjacency[i]:
                if state[j] == 0:
                    flipped = -state[i] if same_direction else state[i]
                    state[j] = 1 if trusted[j] else flipped
                    component.append(j)
                    queue.append(j)
        components.append(component)

    out = faces.copy()
    flip = state == -1
    out[flip] = out[flip][:, ::-1]
    for component in components:
        if trusted[component].any():
            continue
        tri = out[component]
        signed = np.einsum("ij,ij->i", pts[tri[:, 0]],
                           np.cross(pts[tri[:, 1]], pts[tri[:, 2]])).sum()
        if signed < 0:
            out[component] = tri[:, ::-1]
    return out


@dataclass(frozen=True)
class AlphaShape:
    """Reconstructed solid: surface mesh plus the solid tetrahedra behind it.

    `vertex_indices` maps mesh vertices back to rows of the input points.
    `volume` comes from summing tetrahedron volumes; when the surface is
    watertight it has also been cross-checked against the divergence-theorem
    volume of the mesh.
    """

    mesh: TriangleMesh
    tetrahedra: np.ndarray
    vertex_indices: np.ndarray
    alpha: float
    surface_area: float
    volume: float
    watertight: bool


def alpha_shape(data, alpha: float = DEFAULT_ALPHA) -> AlphaShape:
    """Reconstruct a solid from points and measure it.

    Raises:
        DegenerateGeometryError: nothing survives the alpha cutoff, the
            points are degenerate, or the two volume computations disagree.
    """
    pts = _as_points(data)
    kept = alpha_complex(pts, alpha)
    surface = boundary_faces(kept, pts)
    if surface.shape[0] == 0:
        raise DegenerateGeometryError("alpha complex has no boundary surface")

    used = np.unique(surface)
    remap = np.full(pts.shape[0], -1, np.int64)
    remap[used] = np.arange(used.size)
    mesh = TriangleMesh(pts[used], remap[surface])

    tet_volume = float(_signed_volume6(pts, kept).sum()) / 6.0
    area = surface_area(mesh)
    tight = is_watertight(mesh)
    if tight:
        div_volume = _divergence_volume(mesh)
        scale = max(abs(tet_volume), abs(div_volume), 1e-30)
        if abs(div_volume - tet_volume) / scale > _VOLUME_AGREEMENT:
            raise DegenerateGeometryError(
                "volume mismatch between solid tetrahedra "
                f"({tet_volume:g}) and closed surface ({div_volume:g})")
    return AlphaShape(mesh, kept, used, float(alpha), area, tet_volume, tight)


def surface_area(mesh: TriangleMesh) -> float:
    """Total triangle area."""
    v = mesh.vertices
    f = mesh.faces
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    return float(0.5 * np.linalg.norm(cross, axis=1).sum())


def _divergence_volume(mesh: TriangleMesh) -> float:
    v = mesh.vertices
    f = mesh.faces
    return float(np.einsum("ij,ij->i", v[f[:, 0]],
                           np.cross(v[f[:, 1]], v[f[:, 2]])).sum()) / 6.0


def mesh_volume(mesh: TriangleMesh) -> float:
    """Enclosed volume of a watertight mesh via the divergence theorem."""
    if not is_watertight(mesh):
        raise DegenerateGeometryError(
            "volume of an open or non-manifold surface is undefined")
    return _divergence_volume(mesh)


def is_watertight(mesh: TriangleMesh) -> bool:
    """True when every edge is shared by exactly two consistently wound faces."""
    f = mesh.faces
    directed = np.concatenate([f[:, (0, 1)], f[:, (1, 2)], f[:, (2, 0)]])
    order = np.lexsort((directed[:, 1], directed[:, 0]))
    directed = directed[order]
    if directed.shape[0] != np.unique(directed, axis=0).shape[0]:
        return False
    flipped = directed[:, ::-1]
    reorder = np.lexsort((flipped[:, 1], flipped[:, 0]))
    return bool((flipped[reorder] == directed).all())


def save_off(mesh: TriangleMesh, path) -> None:
    """Write the mesh in ASCII OFF format."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.vertices.shape[0]} {mesh.faces.shape[0]} 0\n")
        for x, y, z in mesh.vertices:
            fh.write(" ".join(COORD_FORMAT.format(v) for v in (x, y, z)) + "\n")
        for i, j, k in mesh.faces:
            fh.write(f"3 {i} {j} {k}\n")


def load_off(path) -> TriangleMesh:
    """Read an ASCII OFF mesh with triangular faces."""
    tokens = []
    with open(path, encoding="ascii", errors="replace") as fh:
        for line_no, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0]
            tokens.extend((line_no, tok) for tok in text.split())
    pos = 0

    def take(expect: str):
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError(path, tokens[-1][0] if tokens else 1,
                             f"unexpected end of file, wanted {expect}")
        pos += 1
        return tokens[pos - 1]

    line_no, magic = take("OFF header")
    if magic != "OFF":
        raise ParseError(path, line_no, f"not an OFF file (starts with {magic!r})")
    counts = []
    for name in ("vertex count", "face count", "edge count"):
        line_no, tok = take(name)
        try:
            counts.append(int(tok))
        except ValueError:
            raise ParseError(path, line_no, f"bad {name}: {tok!r}") from None
    n_vert, n_face, _ = counts

    verts = np.empty((n_vert, 3))
    for i in range(n_vert):
        for axis in range(3):
            line_no, tok = take("vertex coordinate")
            try:
                verts[i, axis] = float(tok)
            except ValueError:
                raise ParseError(path, line_no,
                                 f"bad coordinate: {tok!r}") from None
    faces = np.empty((n_face, 3), np.int64)
    for i in range(n_face):
        line_no, tok = take("face size")
        if tok != "3":
            raise ParseError(path, line_no,
                             f"only triangular faces supported, got size {tok!r}")
        for slot in range(3):
            line_no, tok = take("face index")
            try:
                faces[i, slot] = int(tok)
            except ValueError:
                raise ParseError(path, line_no, f"bad face index: {tok!r}") from None
    try:
        return TriangleMesh(verts, faces)
    except PreconditionError as exc:
        raise ParseError(path, 1, str(exc)) from None
