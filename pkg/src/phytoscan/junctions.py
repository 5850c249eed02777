"""Branch-junction detection and junction-based rough alignment.

Junctions between stem and branches are found per point by testing the local
neighbourhood's direction distribution for bimodality (two crossing linear
structures give two direction modes), fitting a line to each mode and
intersecting them. Candidate points are condensed by non-maximal suppression
and density clustering; matching clustered junctions between two viewpoints
by pairwise-distance-consistent triplets yields a rigid rough alignment.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cloudcore import PointCloud, voxel_downsample
from .errors import NoAlignmentError, PreconditionError

DEFAULT_K_NEIGHBOURS = 40
DEFAULT_DIP_THRESHOLD = 0.05
DEFAULT_NMS_RADIUS = 4.0          # mm
DEFAULT_SCAN_RESOLUTION = 0.25    # mm
DEFAULT_CLUSTER_EPS = 3.0         # mm
DEFAULT_CLUSTER_MIN_PTS = 4
DEFAULT_MATCH_TOLERANCE = 2.0     # mm


# ---------------------------------------------------------------------------
# Hartigan's dip statistic


def dip_statistic(sample) -> float:
    """Dip statistic of a 1D sample: its distance from the nearest unimodal CDF.

    The dip is the smallest sup-norm distance between the empirical CDF and
    any unimodal CDF (convex below the mode, concave above, with a jump
    permitted only at the mode). Values lie in [0, 0.25]; a constant sample
    is perfectly unimodal and returns 0, and samples of at least two distinct
    values return at least 1/(2n).

    Args:
        sample: 1D array-like with at least 4 values (any order).

    Raises:
        PreconditionError: fewer than 4 values, or non-finite values.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    if n < 4:
        raise PreconditionError(f"dip statistic needs at least 4 values, got {n}")
    if not np.isfinite(x).all():
        raise PreconditionError("dip statistic needs finite values")
    if x[0] == x[-1]:
        return 0.0
    return _dip_sorted(x) / (2.0 * n)


def _prev_touch_gcm(x: np.ndarray) -> np.ndarray:
    """mn[j] = previous touch index of the greatest convex minorant of (x_i, i)."""
    n = x.size
    mn = np.empty(n, dtype=int)
    mn[0] = 0
    for j in range(1, n):
        mn[j] = j - 1
        while True:
            mnj = mn[j]
            if mnj == 0:
                break
            mnmnj = mn[mnj]
            if (x[j] - x[mnj]) * (mnj - mnmnj) < (x[mnj] - x[mnmnj]) * (j - mnj):
                break
            mn[j] = mnmnj
    return mn


def _next_touch_lcm(x: np.ndarray) -> np.ndarray:
    """mj[k] = next touch index of the least concave majorant of (x_i, i)."""
    n = x.size
    mj = np.empty(n, dtype=int)
    mj[n - 1] = n - 1
    for k in range(n - 2, -1, -1):
        mj[k] = k + 1
        while True:
            mjk = mj[k]
            if mjk == n - 1:
                break
            mjmjk = mj[mjk]
            if (x[k] - x[mjk]) * (mjk - mjmjk) < (x[mjk] - x[mjmjk]) * (k - mjk):
                break
            mj[k] = mjmjk
    return mj


def _interp_count(x: np.ndarray, i0: int, i1: int, xq: float, c0: float, c1: float) -> float:
    """Linearly interpolate counts along a hull segment, safe for tied x."""
    dx = x[i1] - x[i0]
    if dx <= 0.0:
        return c0
    t = (xq - x[i0]) / dx
    return c0 + t * (c1 - c0)


def _dip_sorted(x: np.ndarray) -> float:
    """Twice n times the dip of a sorted non-constant sample (count units).

    Works in units of sample counts: a returned value D means the dip is
    D / (2n). Follows the classic iterative modal-interval scheme: compare
    the greatest convex minorant and least concave majorant of the empirical
    CDF over a shrinking interval, accumulating the side deviations.
    """
    n = x.size
    mn = _prev_touch_gcm(x)
    mj = _next_touch_lcm(x)
    low, high = 0, n - 1
    best = 0.0

    while True:
        # Touch chains of both hulls restricted to [low, high], ascending.
        chain = [high]
        while chain[-1] > low:
            nxt = mn[chain[-1]]
            chain.append(nxt if nxt >= low else low)
        gcm = chain[::-1]
        chain = [low]
        while chain[-1] < high:
            nxt = mj[chain[-1]]
            chain.append(nxt if nxt <= high else high)
        lcm = chain

        if len(gcm) == 2 and len(lcm) == 2:
            # Both hulls are single segments: the only requirement left is
            # the baseline step gap of one count.
            best = max(best, 1.0)
            break

        # Largest gap between the majorant (counts shifted +1) and the
        # minorant over the current interval, evaluated at all touch points.
        d = 0.0
        new_low, new_high = low, high
        gi = 0  # gcm segment cursor: segment (gcm[gi], gcm[gi+1])
        li = 0
        events = []
        for v in lcm[1:]:
            events.append((x[v], 1, v))
        for g in gcm:
            events.append((x[g], 0, g))
        events.sort(key=lambda e: (e[0], e[1]))
        for _, kind, idx in events:
            if kind == 1:
                v = idx
                while gi + 1 < len(gcm) - 1 and gcm[gi + 1] < v:
                    gi += 1
                g0, g1 = gcm[gi], gcm[gi + 1]
                line = _interp_count(x, g0, g1, x[v], g0, g1)
                gap = (v + 1.0) - line
                if gap >= d:
                    d = gap
                    new_low, new_high = g0, v
            else:
                g = idx
                while li + 1 < len(lcm) - 1 and lcm[li + 1] < g:
                    li += 1
                l0, l1 = lcm[li], lcm[li + 1]
                line = _interp_count(x, l0, l1, x[g], l0 + 1.0, l1 + 1.0)
                gap = line - g
                if gap > d:
                    d = gap
                    new_low, new_high = g, l1

        if d <= best:
            break

        # Deviations of the CDF from the hulls on the two flanks of the new
        # modal interval.
        dip_l = 0.0
        for a in range(len(gcm) - 1):
            g0, g1 = gcm[a], gcm[a + 1]
            if g1 > new_low:
                break
            for jj in range(g0, g1 + 1):
                line = _interp_count(x, g0, g1, x[jj], g0, g1)
                dip_l = max(dip_l, (jj + 1.0) - line)
        dip_u = 0.0
        for a in range(len(lcm) - 1, 0, -1):
            l0, l1 = lcm[a - 1], lcm[a]
            if l0 < new_high:
                break
            for jj in range(l0, l1 + 1):
                line = _interp_count(x, l0, l1, x[jj], l0 + 1.0, l1 + 1.0)
                dip_u = max(dip_u, line - jj)
        best = max(best, dip_l, dip_u)

        if (new_low, new_high) == (low, high):
            best = max(best, d)
            break
        low, high = new_low, new_high

    return best


# ---------------------------------------------------------------------------
# rigid transforms


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: p -> R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, float)
        t = np.asarray(self.translation, float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise PreconditionError("rotation must be (3, 3) and translation (3,)")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-8) or abs(np.linalg.det(r) - 1.0) > 1e-8:
            raise PreconditionError("rotation must be a proper orthonormal matrix")
        r = np.ascontiguousarray(r)
        t = np.ascontiguousarray(t)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def about_axis(point, axis, angle_rad: float) -> "RigidTransform":
        """Rotation by `angle_rad` about the line through `point` along `axis`."""
        k = np.asarray(axis, float)
        nrm = np.linalg.norm(k)
        if nrm == 0:
            raise PreconditionError("rotation axis must be non-zero")
        k = k / nrm
        kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0.0]])
        r = np.eye(3) + math.sin(angle_rad) * kx + (1 - math.cos(angle_rad)) * (kx @ kx)
        p = np.asarray(point, float)
        return RigidTransform(r, p - r @ p)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, float)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then this one."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def least_squares_rigid(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Closed-form least-squares rigid transform mapping src points onto dst."""
    s = np.asarray(src, float)
    d = np.asarray(dst, float)
    if s.shape != d.shape or s.ndim != 2 or s.shape[1] != 3 or s.shape[0] < 3:
        raise PreconditionError("need matching (n>=3, 3) source and destination arrays")
    cs = s.mean(axis=0)
    cd = d.mean(axis=0)
    h = (s - cs).T @ (d - cd)
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    if sign == 0:
        sign = 1.0
    r = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    return RigidTransform(r, cd - r @ cs)


# ---------------------------------------------------------------------------
# junction candidates


@dataclass(frozen=True)
class JunctionCandidate:
    """A single point flagged as lying near a branching junction."""

    position: np.ndarray
    dip_value: float
    neighbourhood_radius: float
    source_index: int

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.position, float))
        p.setflags(write=False)
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class FeatureCluster:
    """A group of junction candidates condensed to a single feature point."""

    centroid: np.ndarray
    member_indices: tuple

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.centroid, float))
        c.setflags(write=False)
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "member_indices", tuple(int(i) for i in self.member_indices))


def _centered_mod_pi(angles: np.ndarray) -> np.ndarray:
    """Fold direction angles to [0, pi) and cut the circle at its widest gap.

    Directions are axial (theta and theta+pi are the same direction), so the
    sample lives on a half-circle. Cutting at the largest empty arc keeps a
    single direction cluster contiguous instead of splitting it across the
    interval ends.
    """
    a = np.sort(np.mod(angles, math.pi))
    gaps = np.diff(a)
    wrap = a[0] + math.pi - a[-1]
    k = int(np.argmax(gaps)) if gaps.size and gaps.max() > wrap else -1
    if k >= 0:
        cut = a[k + 1]
        a = np.concatenate([a[k + 1:], a[:k + 1] + math.pi]) - cut
    else:
        a = a - a[0]
    return a


def _principal_line(points: np.ndarray):
    """Centroid and dominant direction (unit) of a point set."""
    c = points.mean(axis=0)
    q = points - c
    _, vecs = np.linalg.eigh(q.T @ q)
    return c, vecs[:, -1]


def _line_closest_approach(c1, d1, c2, d2):
    """Distance between two 3D lines and the midpoint of their closest approach.

    Returns (distance, midpoint) or None when the lines are near-parallel.
    """
    cross = np.cross(d1, d2)
    denom = float(np.dot(cross, cross))
    if denom < 1e-12:
        return None
    w = c2 - c1
    t1 = float(np.dot(np.cross(w, d2), cross)) / denom
    t2 = float(np.dot(np.cross(w, d1), cross)) / denom
    p1 = c1 + t1 * d1
    p2 = c2 + t2 * d2
    return float(np.linalg.norm(p1 - p2)), 0.5 * (p1 + p2)


def _split_angle_modes(folded: np.ndarray, min_side: int):
    """Partition folded angles into two contiguous arcs of least variance.

    Returns a boolean mask selecting the lower arc, or None when no split
    leaves at least `min_side` values on each side.
    """
    n = folded.size
    if n < 2 * min_side:
        return None
    order = np.argsort(folded, kind="stable")
    fs = folded[order]
    c1 = np.cumsum(fs)
    c2 = np.cumsum(fs * fs)
    t = np.arange(min_side, n - min_side + 1, dtype=float)
    lo_sse = c2[min_side - 1:n - min_side] - c1[min_side - 1:n - min_side] ** 2 / t
    hi_sum = c1[-1] - c1[min_side - 1:n - min_side]
    hi_sq = c2[-1] - c2[min_side - 1:n - min_side]
    hi_sse = hi_sq - hi_sum ** 2 / (n - t)
    best = int(np.argmin(lo_sse + hi_sse)) + min_side
    mask = np.zeros(n, dtype=bool)
    mask[order[:best]] = True
    return mask


def detect_junctions(cloud: PointCloud,
                     k_neighbours: int = DEFAULT_K_NEIGHBOURS,
                     dip_threshold: float = DEFAULT_DIP_THRESHOLD,
                     nms_radius: float = DEFAULT_NMS_RADIUS,
                     resolution: float = DEFAULT_SCAN_RESOLUTION) -> list:
    """Flag points whose neighbourhood looks like two crossing linear structures.

    For every point the k nearest neighbours are projected onto their own
    dominant plane; the axial angle distribution of the offsets is tested for
    bimodality with the dip statistic. Where it is bimodal, the first line is
    fitted to the dominant angle mode and the second to its complement (the
    points the first direction leaves unexplained), then both fits are
    sharpened by reassigning every point to its nearer line and refitting.
    The candidate junction is the midpoint of the two lines' closest
    approach, accepted only if the lines pass within 2x the scan resolution
    of each other inside the neighbourhood ball. Candidates are thinned by
    greedy non-maximal suppression on the dip value within `nms_radius`.

    Returns:
        list of JunctionCandidate sorted by descending dip value.
    """
    if k_neighbours < 4:
        raise PreconditionError("k_neighbours must be at least 4")
    pts = cloud.points
    n = pts.shape[0]
    if n <= k_neighbours:
        return []
    tree = cKDTree(pts)
    dist, idx = tree.query(pts, k=k_neighbours + 1)
    candidates = []
    min_line_pts = max(4, k_neighbours // 8)
    for i in range(n):
        neigh = idx[i][idx[i] != i][:k_neighbours]
        if neigh.size < k_neighbours:
            continue
        radius = float(dist[i][-1])
        local = pts[neigh]
        offsets = local - pts[i]
        cov = offsets.T @ offsets
        _, vecs = np.linalg.eigh(cov)
        v1, v2 = vecs[:, -1], vecs[:, -2]
        theta = np.arctan2(offsets @ v2, offsets @ v1)
        raw = np.mod(theta, math.pi)
        srt = np.sort(raw)
        gaps = np.diff(srt)
        wrap = srt[0] + math.pi - srt[-1]
        if gaps.size and gaps.max() > wrap:
            cut = srt[int(np.argmax(gaps)) + 1]
        else:
            cut = srt[0]
        folded = np.mod(raw - cut, math.pi)
        if folded.max() < 1e-6:
            # collinear neighbourhood: the angles differ only by numerical
            # noise, which the scale-invariant dip would read as bimodal
            continue
        dip = dip_statistic(folded)
        if dip <= dip_threshold:
            continue
        split = _split_angle_modes(folded, min_line_pts)
        if split is None:
            continue
        if split.sum() < folded.size - split.sum():
            split = ~split
        group = np.vstack([local, pts[i]])
        c1, d1 = _principal_line(local[split])
        c2, d2 = _principal_line(local[~split])
        supported = True
        for _ in range(2):
            r1 = np.linalg.norm(np.cross(group - c1, d1), axis=1)
            r2 = np.linalg.norm(np.cross(group - c2, d2), axis=1)
            first = r1 <= r2
            if first.sum() < min_line_pts or (~first).sum() < min_line_pts:
                supported = False
                break
            c1, d1 = _principal_line(group[first])
            c2, d2 = _principal_line(group[~first])
        if not supported:
            continue
        approach = _line_closest_approach(c1, d1, c2, d2)
        if approach is None:
            continue
        gap, mid = approach
        if gap >= 2.0 * resolution:
            continue
        if np.linalg.norm(mid - pts[i]) > radius:
            continue
        candidates.append(JunctionCandidate(mid, dip, radius, i))

    # Non-maximal suppression: strongest dip wins within its radius.
    candidates.sort(key=lambda c: (-c.dip_value, c.source_index))
    kept = []
    for cand in candidates:
        if all(np.linalg.norm(cand.position - k.position) >= nms_radius for k in kept):
            kept.append(cand)
    return kept


def export_features(candidates, cloud_path, dips_path) -> None:
    """Write candidate positions as .xyz plus a text file of their dip values."""
    from .cloudcore import save_cloud

    if not candidates:
        raise PreconditionError("no candidates to export")
    pos = np.array([c.position for c in candidates])
    save_cloud(PointCloud(pos), cloud_path, fmt="xyz")
    with open(dips_path, "w") as fh:
        for c in candidates:
            fh.write(f"{c.dip_value:.9g}\n")


# ---------------------------------------------------------------------------
# density clustering


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering labels for a point set.

    A point is a core point when at least `min_pts` points (itself included)
    lie within `eps`. Clusters are the connected components of core points
    under the eps-neighbour relation; non-core points within eps of a core
    point join the lowest-numbered such cluster, everything else is noise.
    Cluster ids are assigned in order of each cluster's lowest core index, so
    the labelling is fully deterministic.

    Returns:
        (n,) int array of labels, -1 for noise.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise PreconditionError("dbscan needs an (n, 3) point set")
    if eps <= 0 or min_pts < 2:
        raise PreconditionError("eps must be positive and min_pts at least 2")
    n = pts.shape[0]
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    tree = cKDTree(pts)
    neighbours = tree.query_ball_point(pts, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbours])

    cluster = 0
    for start in range(n):
        if not core[start] or labels[start] != -1:
            continue
        stack = [start]
        labels[start] = cluster
        while stack:
            p = stack.pop()
            for q in neighbours[p]:
                if core[q] and labels[q] == -1:
                    labels[q] = cluster
                    stack.append(q)
        cluster += 1

    # Border points: lowest cluster id among core points within reach.
    for i in range(n):
        if core[i] or labels[i] != -1:
            continue
        ids = [labels[q] for q in neighbours[i] if core[q]]
        if ids:
            labels[i] = min(ids)
    return labels


def extract_true_junctions(candidates,
                           eps: float = DEFAULT_CLUSTER_EPS,
                           min_pts: int = DEFAULT_CLUSTER_MIN_PTS) -> list:
    """Condense junction candidates into clustered feature points.

    Candidates that fall into a density cluster become one FeatureCluster at
    the member centroid; noise candidates are dropped as spurious detections.
    """
    if not candidates:
        return []
    pos = np.array([c.position for c in candidates])
    labels = dbscan(pos, eps, min_pts)
    clusters = []
    for cid in range(labels.max() + 1 if labels.size else 0):
        members = np.nonzero(labels == cid)[0]
        clusters.append(FeatureCluster(pos[members].mean(axis=0), members))
    return clusters


# ---------------------------------------------------------------------------
# feature matching and rough alignment


@dataclass(frozen=True)
class FeatureMatch:
    """Best rigid correspondence found between two feature sets."""

    transform: RigidTransform
    pairs: tuple               # (index_a, index_b) pairs
    rms: float
    consensus: int


def _pairwise(feats: np.ndarray) -> np.ndarray:
    diff = feats[:, None, :] - feats[None, :, :]
    return np.linalg.norm(diff, axis=2)


def match_features(feats_a, feats_b,
                   tolerance: float = DEFAULT_MATCH_TOLERANCE,
                   max_triplets: int = 250,
                   seed: int = 0) -> FeatureMatch:
    """Match two junction feature sets by distance-consistent triplets.

    Candidate triplet correspondences whose three pairwise distances agree
    within `tolerance` seed a closed-form rigid transform; the hypothesis
    scoring is the number of features brought within `tolerance` of a
    one-to-one partner. The best-consensus hypothesis is refit over all its
    matched pairs.

    Args:
        feats_a, feats_b: (n, 3) arrays or lists of FeatureCluster.
        tolerance: distance agreement tolerance in mm.
        max_triplets: cap on seed triplets drawn from the first set.
        seed: RNG seed for triplet sampling, making the search deterministic.

    Returns:
        FeatureMatch with the transform mapping the second feature set onto
        the first.

    Raises:
        NoAlignmentError: fewer than 3 features on a side, or no consistent
            correspondence found.
    """
    a = _feature_array(feats_a)
    b = _feature_array(feats_b)
    if a.shape[0] < 3 or b.shape[0] < 3:
        raise NoAlignmentError(
            f"need at least 3 features per side, got {a.shape[0]} and {b.shape[0]}")
    da = _pairwise(a)
    db = _pairwise(b)

    triplets = list(itertools.combinations(range(a.shape[0]), 3))
    if len(triplets) > max_triplets:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(triplets), size=max_triplets, replace=False)
        triplets = [triplets[p] for p in sorted(picks)]

    nb = b.shape[0]
    best = None  # (consensus, -rms, pairs, transform)
    for (i, j, k) in triplets:
        dij, djk, dik = da[i, j], da[j, k], da[i, k]
        if min(dij, djk, dik) < tolerance:
            continue  # degenerate seed: sides shorter than the noise scale
        for p in range(nb):
            for q in range(nb):
                if q == p or abs(db[p, q] - dij) >= tolerance:
                    continue
                for r in range(nb):
                    if r == p or r == q:
                        continue
                    if abs(db[q, r] - djk) >= tolerance or abs(db[p, r] - dik) >= tolerance:
                        continue
                    t = least_squares_rigid(b[[p, q, r]], a[[i, j, k]])
                    pairs = _greedy_pairs(a, t.apply(b), tolerance)
                    if len(pairs) < 3:
                        continue
                    refit = least_squares_rigid(b[[pb for _, pb in pairs]],
                                                a[[pa for pa, _ in pairs]])
                    moved = refit.apply(b[[pb for _, pb in pairs]])
                    rms = float(np.sqrt(np.mean(np.sum(
                        (moved - a[[pa for pa, _ in pairs]]) ** 2, axis=1))))
                    key = (len(pairs), -rms)
                    if best is None or key > best[0]:
                        best = (key, tuple(pairs), refit)
    if best is None:
        raise NoAlignmentError("no distance-consistent feature correspondence found")
    (consensus, neg_rms), pairs, transform = best
    return FeatureMatch(transform, pairs, -neg_rms, consensus)


def _feature_array(feats) -> np.ndarray:
    if isinstance(feats, np.ndarray):
        return np.asarray(feats, float)
    arr = [f.centroid if isinstance(f, FeatureCluster) else np.asarray(f, float)
           for f in feats]
    return np.array(arr, float) if arr else np.empty((0, 3))


def _greedy_pairs(a: np.ndarray, b_moved: np.ndarray, tolerance: float):
    """One-to-one pairing by ascending distance, capped at `tolerance`."""
    diff = a[:, None, :] - b_moved[None, :, :]
    d = np.linalg.norm(diff, axis=2)
    order = np.dstack(np.unravel_index(np.argsort(d, axis=None), d.shape))[0]
    used_a, used_b, pairs = set(), set(), []
    for ia, ib in order:
        if d[ia, ib] >= tolerance:
            break
        if ia in used_a or ib in used_b:
            continue
        used_a.add(ia)
        used_b.add(ib)
        pairs.append((int(ia), int(ib)))
    pairs.sort()
    return pairs


@dataclass(frozen=True)
class RoughAlignment:
    """Result of junction-based rough alignment between two views."""

    transform: RigidTransform
    features_a: tuple
    features_b: tuple
    pairs: tuple
    rms: float


def rough_align(view_a: PointCloud, view_b: PointCloud,
                detect_cell: float = 1.5,
                k_neighbours: int = 80,
                dip_threshold: float = 0.04,
                nms_radius: float = 1.0,
                resolution: float = 1.5,
                eps: float = 2.5,
                min_pts: int = 3,
                tolerance: float = 3.0) -> RoughAlignment:
    """Rigidly align view_b onto view_a using matched junction clusters.

    Both clouds are thinned to `detect_cell`, junction candidates detected
    and density-clustered, and the clustered features matched. The defaults
    here differ from the standalone detection defaults because they work on
    thinned single-view shells: the neighbourhood must be wide enough that a
    tube reads as a line rather than a surface patch (`k_neighbours`,
    `resolution` scale with `detect_cell`), and suppression plus clustering
    are tightened so several candidates survive per junction, which the
    density threshold needs.

    Raises:
        NoAlignmentError: either view yields fewer than 3 feature clusters,
            or no consistent match exists.
    """
    feats = []
    for view in (view_a, view_b):
        thin = voxel_downsample(view, detect_cell) if detect_cell > 0 else view
        cands = detect_junctions(thin, k_neighbours=k_neighbours,
                                 dip_threshold=dip_threshold,
                                 nms_radius=nms_radius, resolution=resolution)
        clusters = extract_true_junctions(cands, eps=eps, min_pts=min_pts)
        if len(clusters) < 3:
            raise NoAlignmentError(
                f"view {view.view_id}: only {len(clusters)} junction clusters, need 3")
        feats.append(clusters)
    match = match_features(feats[0], feats[1], tolerance=tolerance)
    return RoughAlignment(match.transform,
                          tuple(feats[0]), tuple(feats[1]),
                          match.pairs, match.rms)
