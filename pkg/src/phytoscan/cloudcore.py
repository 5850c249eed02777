"""Point-cloud data model, scan file I/O and basic spatial utilities.

All coordinates throughout the package are millimetres. Clouds are immutable
after construction (the backing arrays are marked read-only), so they can be
shared freely between threads and processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloudError, ParseError, PreconditionError

# 9 significant digits keep save/load round-trips below 1e-6 mm for any
# coordinate a bench-top scanner can produce.
COORD_FORMAT = "{:.9g}"

# Maximum representable value per integer PLY property type, used to map
# stored intensities onto [0, 1].
_PLY_INT_MAX = {
    "char": 127.0, "int8": 127.0,
    "uchar": 255.0, "uint8": 255.0,
    "short": 32767.0, "int16": 32767.0,
    "ushort": 65535.0, "uint16": 65535.0,
    "int": 2147483647.0, "int32": 2147483647.0,
    "uint": 4294967295.0, "uint32": 4294967295.0,
}
_PLY_FLOAT_TYPES = ("float", "float32", "double", "float64")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """An unordered set of 3D surface samples from one scan or one merge.

    Attributes:
        points: (n, 3) float64 coordinates in mm.
        intensity: optional (n,) float64 reflectance values normalized to
            [0, 1]. Carried through I/O but not used by any measurement.
        view_id: optional viewpoint index the scan was taken from.
        timestamp: optional acquisition time.
    """

    points: np.ndarray
    intensity: np.ndarray | None = None
    view_id: int | None = None
    timestamp: datetime | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise PreconditionError(f"points must have shape (n, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise EmptyCloudError("point cloud has no points")
        if not np.isfinite(pts).all():
            raise PreconditionError("point coordinates must all be finite")
        object.__setattr__(self, "points", _readonly(pts))
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=float)
            if inten.shape != (pts.shape[0],):
                raise PreconditionError(
                    f"intensity must have shape ({pts.shape[0]},), got {inten.shape}")
            if not np.isfinite(inten).all():
                raise PreconditionError("intensity values must be finite")
            if inten.min() < 0.0 or inten.max() > 1.0:
                raise PreconditionError("intensity values must lie in [0, 1]")
            object.__setattr__(self, "intensity", _readonly(inten))

    def __len__(self) -> int:
        return self.points.shape[0]

    def moved(self, new_points: np.ndarray) -> "PointCloud":
        """Same cloud with every point at a new position (metadata kept)."""
        return PointCloud(new_points, self.intensity, self.view_id, self.timestamp)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by its two extreme corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _readonly(np.asarray(self.lo, float)))
        object.__setattr__(self, "hi", _readonly(np.asarray(self.hi, float)))

    @property
    def centre(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, float))
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)


def bounding_box(cloud) -> BoundingBox:
    """Tight axis-aligned bounding box of a cloud (or bare (n, 3) array)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    if pts.size == 0:
        raise EmptyCloudError("cannot take the bounding box of an empty point set")
    return BoundingBox(pts.min(axis=0), pts.max(axis=0))


class SpatialIndex:
    """k-d tree over a fixed point set with deterministic tie handling.

    Neighbour queries return exactly what an exhaustive scan ordered by
    (distance, point index) would return; ties in distance always resolve
    toward the lower index.
    """

    def __init__(self, points):
        pts = points.points if isinstance(points, PointCloud) else np.asarray(points, float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise PreconditionError("index needs a non-empty (n, 3) point set")
        self._points = _readonly(pts)
        self._tree = cKDTree(self._points)

    def __len__(self) -> int:
        return self._points.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def tree(self) -> cKDTree:
        return self._tree

    def knn(self, query, k: int):
        """The k nearest indexed points to `query`.

        Args:
            query: (3,) coordinate.
            k: number of neighbours requested, at least 1.

        Returns:
            (indices, clamped): indices ordered by ascending distance with
            exact ties broken toward the lower index, and a flag that is True
            when fewer than k points exist so the result was clamped.
        """
        if k < 1:
            raise PreconditionError("k must be at least 1")
        q = np.asarray(query, float)
        n = self._points.shape[0]
        clamped = k > n
        kq = min(k, n)
        d, _ = self._tree.query(q, k=kq)
        dmax = float(np.atleast_1d(d)[-1])
        shell = dmax * (1.0 + 1e-9) + 1e-12
        cand = np.asarray(self._tree.query_ball_point(q, shell), dtype=int)
        dist = np.linalg.norm(self._points[cand] - q, axis=1)
        order = np.lexsort((cand, dist))
        return cand[order[:kq]], clamped

    def within(self, query, radius: float) -> np.ndarray:
        """Indices of points within `radius`, ordered by (distance, index)."""
        if radius < 0:
            raise PreconditionError("radius must be non-negative")
        q = np.asarray(query, float)
        cand = np.asarray(self._tree.query_ball_point(q, radius), dtype=int)
        if cand.size == 0:
            return cand
        dist = np.linalg.norm(self._points[cand] - q, axis=1)
        order = np.lexsort((cand, dist))
        return cand[order]


def voxel_downsample(cloud: PointCloud, cell: float) -> PointCloud:
    """Thin a cloud by averaging all points that share a cubic grid cell.

    The grid is anchored at the origin with edge length `cell`; each occupied
    cell contributes the centroid of its points. Output order follows the
    lexicographic order of the cell keys, so results are deterministic.
    """
    if cell <= 0:
        raise PreconditionError("cell size must be positive")
    pts = cloud.points
    keys = np.floor(pts / cell).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    m = uniq.shape[0]
    sums = np.zeros((m, 3))
    np.add.at(sums, inverse, pts)
    counts = np.bincount(inverse, minlength=m).astype(float)
    centroids = sums / counts[:, None]
    inten = None
    if cloud.intensity is not None:
        s = np.zeros(m)
        np.add.at(s, inverse, cloud.intensity)
        inten = s / counts
    return PointCloud(centroids, inten, cloud.view_id, cloud.timestamp)


# ---------------------------------------------------------------------------
# file I/O


def load_cloud(path, fmt: str | None = None, view_id: int | None = None,
               timestamp: datetime | None = None) -> PointCloud:
    """Read a scan file (.xyz or ascii .ply) into a PointCloud.

    Args:
        path: file to read.
        fmt: "xyz" or "ply"; inferred from the extension when omitted.
        view_id, timestamp: optional metadata attached to the result.

    Raises:
        ParseError: malformed content, with the offending line number.
        EmptyCloudError: the file contains no points.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "xyz":
        pts, inten = _read_xyz(path)
    elif fmt == "ply":
        pts, inten = _read_ply(path)
    else:
        raise PreconditionError(f"unsupported cloud format {fmt!r}")
    if len(pts) == 0:
        raise EmptyCloudError(f"{path}: file contains no points")
    return PointCloud(np.asarray(pts, float),
                      None if inten is None else np.asarray(inten, float),
                      view_id, timestamp)


def save_cloud(cloud: PointCloud, path, fmt: str | None = None) -> None:
    """Write a cloud as .xyz or ascii .ply with 9-significant-digit coordinates."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "xyz":
        _write_xyz(cloud, path)
    elif fmt == "ply":
        _write_ply(cloud, path)
    else:
        raise PreconditionError(f"unsupported cloud format {fmt!r}")


def _read_xyz(path: Path):
    points, intensities = [], []
    ncols = None
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise ParseError(path, line_no,
                                 f"expected 3 or 4 columns, got {len(parts)}")
            if ncols is None:
                ncols = len(parts)
            elif len(parts) != ncols:
                raise ParseError(path, line_no,
                                 "inconsistent column count within file")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(path, line_no, f"non-numeric value in {line!r}")
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(path, line_no, "non-finite value")
            points.append(vals[:3])
            if ncols == 4:
                if vals[3] < 0:
                    raise ParseError(path, line_no, "negative intensity")
                intensities.append(vals[3])
    inten = None
    if intensities:
        inten = np.asarray(intensities, float)
        top = inten.max()
        if top > 1.0:
            # Scanner intensity scales vary; values beyond 1 are mapped onto
            # [0, 1] by the file's own maximum.
            inten = inten / top
    return points, inten


def _write_xyz(cloud: PointCloud, path: Path) -> None:
    with open(path, "w") as fh:
        for i, p in enumerate(cloud.points):
            cols = [COORD_FORMAT.format(v) for v in p]
            if cloud.intensity is not None:
                cols.append(COORD_FORMAT.format(cloud.intensity[i]))
            fh.write(" ".join(cols) + "\n")


def _read_ply(path: Path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic line")

    n_vertices = None
    properties = []          # (name, type) for the vertex element
    in_vertex_element = False
    data_start = None
    for line_no, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1:] != ["ascii", "1.0"]:
                raise ParseError(path, line_no, "only 'format ascii 1.0' is supported")
        elif tok[0] == "comment":
            continue
        elif tok[0] == "element":
            if tok[1] == "vertex":
                n_vertices = int(tok[2])
                in_vertex_element = True
            else:
                if len(tok) > 2 and int(tok[2]) > 0:
                    raise ParseError(path, line_no,
                                     f"unsupported element {tok[1]!r}; only vertex data is handled")
                in_vertex_element = False
        elif tok[0] == "property":
            if in_vertex_element:
                if tok[1] == "list":
                    raise ParseError(path, line_no, "list properties are not supported")
                properties.append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            data_start = line_no
            break
        else:
            raise ParseError(path, line_no, f"unrecognized header line {line!r}")
    if data_start is None:
        raise ParseError(path, len(lines), "header never terminated with end_header")
    if n_vertices is None:
        raise ParseError(path, data_start, "no vertex element declared")

    names = [name for name, _ in properties]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(path, data_start, f"vertex element lacks property {axis!r}")
    cols = {name: idx for idx, (name, _) in enumerate(properties)}
    types = dict(properties)

    rows = []
    body = lines[data_start:]
    for offset, line in enumerate(body):
        line_no = data_start + 1 + offset
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != len(properties):
            raise ParseError(path, line_no,
                             f"expected {len(properties)} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(path, line_no, f"non-numeric value in {stripped!r}")
        if len(rows) == n_vertices:
            break
    if len(rows) != n_vertices:
        raise ParseError(path, len(lines),
                         f"declared {n_vertices} vertices but found {len(rows)}")

    data = np.asarray(rows, float)
    if not np.isfinite(data).all():
        raise ParseError(path, data_start, "non-finite vertex value")
    pts = data[:, [cols["x"], cols["y"], cols["z"]]]
    inten = None
    if "intensity" in cols:
        raw = data[:, cols["intensity"]]
        ptype = types["intensity"]
        if ptype in _PLY_INT_MAX:
            inten = raw / _PLY_INT_MAX[ptype]
        elif ptype in _PLY_FLOAT_TYPES:
            inten = raw
            if inten.size and (inten.min() < 0 or inten.max() > 1):
                raise ParseError(path, data_start,
                                 "float intensity values must already lie in [0, 1]")
        else:
            raise ParseError(path, data_start, f"unsupported intensity type {ptype!r}")
    return pts, inten


def _write_ply(cloud: PointCloud, path: Path) -> None:
    n = len(cloud)
    header = ["ply", "format ascii 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if cloud.intensity is not None:
        header.append("property float intensity")
    header.append("end_header")
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        for i, p in enumerate(cloud.points):
            cols = [COORD_FORMAT.format(v) for v in p]
            if cloud.intensity is not None:
                cols.append(COORD_FORMAT.format(cloud.intensity[i]))
            fh.write(" ".join(cols) + "\n")
