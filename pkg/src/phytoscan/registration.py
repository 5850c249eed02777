"""Non-rigid point-set registration and multi-view merging.

A scan pair is aligned by modelling the moving cloud as a Gaussian mixture
with one isotropic component per point plus a uniform outlier component, and
fitting it to the fixed cloud by expectation-maximization. The displacement
field is parameterized as G @ W over the moving points, where G is a Gaussian
kernel Gram matrix, which keeps nearby points moving coherently. Multi-view
sessions are merged by repeatedly registering each scan against the centroid
scan of all the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .cloudcore import PointCloud, bounding_box, voxel_downsample
from .errors import DataQualityError, PreconditionError, RegistrationError

DEFAULT_KERNEL_BETA = 2.0       # mm, coherence length of the displacement field
DEFAULT_COHERENCE_LAMBDA = 3.0  # regularization weight
DEFAULT_OUTLIER_WEIGHT = 0.1
DEFAULT_MAX_ITERATIONS = 100
DEFAULT_TOLERANCE = 1e-5
DEFAULT_DOWNSAMPLE_CELL = 1.0   # mm, 0 disables thinning
DEFAULT_SCAN_RESOLUTION = 0.25  # mm
MAX_MERGE_SWEEPS = 5
MIN_PAIR_OVERLAP = 0.2
_SIGMA2_FLOOR = 1e-10           # mm^2; below this the fit is exact for all purposes


# ---------------------------------------------------------------------------
# Gaussian mixtures over point sets


@dataclass(frozen=True)
class GmmParams:
    """Isotropic Gaussian mixture with an optional uniform outlier component.

    Attributes:
        means: (m, 3) component centres.
        weights: (m,) non-negative component weights summing to 1.
        sigma2: shared isotropic variance, > 0.
        outlier_weight: probability mass of the uniform component over the
            bounding box of the means; the Gaussian weights are scaled by
            (1 - outlier_weight) so the mixture stays normalized.
    """

    means: np.ndarray
    weights: np.ndarray
    sigma2: float
    outlier_weight: float = 0.0

    def __post_init__(self):
        mu = np.ascontiguousarray(np.asarray(self.means, float))
        w = np.ascontiguousarray(np.asarray(self.weights, float))
        if mu.ndim != 2 or mu.shape[1] != 3 or mu.shape[0] == 0:
            raise PreconditionError("means must be a non-empty (m, 3) array")
        if w.shape != (mu.shape[0],):
            raise PreconditionError("weights must match the number of means")
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
            raise PreconditionError("weights must be non-negative and sum to 1")
        if not self.sigma2 > 0:
            raise PreconditionError("sigma2 must be positive")
        if not 0.0 <= self.outlier_weight < 1.0:
            raise PreconditionError("outlier_weight must lie in [0, 1)")
        if self.outlier_weight > 0:
            extent = mu.max(axis=0) - mu.min(axis=0)
            if np.prod(extent) <= 0:
                raise PreconditionError(
                    "outlier component needs means spanning a non-degenerate box")
        mu.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "weights", w)


def gmm_from_cloud(cloud: PointCloud, sigma2: float,
                   outlier_weight: float = 0.0) -> GmmParams:
    """Equal-weight mixture with one component per cloud point."""
    n = len(cloud)
    return GmmParams(cloud.points, np.full(n, 1.0 / n), sigma2, outlier_weight)


def gmm_density(params: GmmParams, x) -> np.ndarray | float:
    """Mixture density at one query point (3,) or many (q, 3)."""
    pts = np.asarray(x, float)
    single = pts.ndim == 1
    q = np.atleast_2d(pts)
    sq = cdist(q, params.means, "sqeuclidean")
    norm = (2.0 * math.pi * params.sigma2) ** -1.5
    dens = (1.0 - params.outlier_weight) * norm * (
        np.exp(-sq / (2.0 * params.sigma2)) @ params.weights)
    if params.outlier_weight > 0:
        box = bounding_box(params.means)
        volume = float(np.prod(box.extent))
        dens = dens + params.outlier_weight / volume * box.contains(q)
    return float(dens[0]) if single else dens


def gmm_l2_distance(cloud_a: PointCloud, cloud_b: PointCloud, sigma2: float) -> float:
    """Squared L2 distance between equal-weight mixtures over two clouds.

    Uses the closed form for the integral of a product of two isotropic
    Gaussians: each cross term reduces to a Gaussian in the distance between
    the two means with doubled variance. Always >= 0, and exactly 0 for a
    cloud against itself.
    """
    if not sigma2 > 0:
        raise PreconditionError("sigma2 must be positive")
    a, b = cloud_a.points, cloud_b.points

    def term(u, v):
        sq = cdist(u, v, "sqeuclidean")
        k = (4.0 * math.pi * sigma2) ** -1.5
        return k * float(np.exp(-sq / (4.0 * sigma2)).mean())

    d = term(a, a) + term(b, b) - 2.0 * term(a, b)
    return max(d, 0.0)


# ---------------------------------------------------------------------------
# coherent non-rigid registration


@dataclass(frozen=True)
class CpdConfig:
    """Tuning knobs for the EM registration."""

    beta: float = DEFAULT_KERNEL_BETA
    coherence: float = DEFAULT_COHERENCE_LAMBDA
    outlier_weight: float = DEFAULT_OUTLIER_WEIGHT
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE
    downsample_cell: float = DEFAULT_DOWNSAMPLE_CELL

    def __post_init__(self):
        if self.beta <= 0 or self.coherence < 0:
            raise PreconditionError("beta must be positive and coherence non-negative")
        if not 0.0 <= self.outlier_weight < 1.0:
            raise PreconditionError("outlier_weight must lie in [0, 1)")
        if self.max_iterations < 1 or self.tolerance <= 0 or self.downsample_cell < 0:
            raise PreconditionError("bad iteration, tolerance or downsampling setting")


@dataclass(frozen=True)
class DeformationField:
    """Displacement of every source point plus convergence diagnostics.

    `objective_trace` holds the negative log-likelihood at the start of each
    EM iteration; it is non-increasing on a healthy registration.
    """

    displacements: np.ndarray
    sigma2: float
    objective_trace: tuple
    iterations: int
    converged: bool

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.displacements, float))
        d.setflags(write=False)
        object.__setattr__(self, "displacements", d)
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))

    @property
    def mean_displacement(self) -> float:
        return float(np.linalg.norm(self.displacements, axis=1).mean())


def gaussian_kernel(a: np.ndarray, b: np.ndarray, beta: float) -> np.ndarray:
    """Gram matrix exp(-|a_i - b_j|^2 / (2 beta^2))."""
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * beta * beta))


def _outlier_bias(m: int, n: int, sigma2: float, outlier_weight: float) -> float:
    """Constant added to the Gaussian column sums by the uniform component."""
    if outlier_weight <= 0.0:
        return 0.0
    return ((2.0 * math.pi * sigma2) ** 1.5
            * outlier_weight / (1.0 - outlier_weight) * m / n)


def posterior_matrix(moved, target, sigma2: float,
                     outlier_weight: float = DEFAULT_OUTLIER_WEIGHT):
    """Per-target responsibilities of the moving points and the outlier term.

    Returns (p, p_out) where p[i, j] is the posterior weight of moving point
    i given target point j and p_out[j] the posterior of the uniform outlier
    component; each column of p plus its outlier entry sums to 1.
    """
    moved = np.asarray(moved, float)
    target = np.asarray(target, float)
    gauss = np.exp(-cdist(moved, target, "sqeuclidean") / (2.0 * sigma2))
    bias = _outlier_bias(moved.shape[0], target.shape[0], sigma2,
                         outlier_weight)
    denom = gauss.sum(axis=0) + bias
    return gauss / denom[None, :], bias / denom


def cpd_register(source: PointCloud, target: PointCloud,
                 config: CpdConfig = CpdConfig()) -> DeformationField:
    """Fit a coherent displacement field moving `source` onto `target`.

    Both clouds are optionally thinned to `config.downsample_cell` for the EM
    itself; the fitted field is then evaluated back at every original source
    point through the same Gaussian kernel, so the returned displacements
    always cover the full source cloud.

    Returns:
        DeformationField; apply it as `source.points + field.displacements`.

    Raises:
        RegistrationError: the objective became non-finite (degenerate
            variance collapse before convergence).
    """
    if config.downsample_cell > 0:
        ctrl = voxel_downsample(source, config.downsample_cell).points
        tgt = voxel_downsample(target, config.downsample_cell).points
    else:
        ctrl = source.points
        tgt = target.points

    w_ctrl, sigma2, trace, iterations, converged = _cpd_em(ctrl, tgt, config)
    disp = gaussian_kernel(source.points, ctrl, config.beta) @ w_ctrl
    return DeformationField(disp, sigma2, trace, iterations, converged)


def _cpd_em(y: np.ndarray, x: np.ndarray, config: CpdConfig):
    """EM core: returns (W, sigma2, objective trace, iterations, converged)."""
    m, n, d = y.shape[0], x.shape[0], 3
    g = gaussian_kernel(y, y, config.beta)
    w_out = config.outlier_weight

    # The variance starts at the actual nearest-neighbour residual between
    # the clouds. Registration always runs on roughly pre-aligned data here,
    # where the classic all-pairs spread is inflated by orders of magnitude
    # and (together with the outlier component) drags the early iterations
    # through a regime that classifies almost every point as an outlier.
    d_xy = cKDTree(x).query(y)[0]
    d_yx = cKDTree(y).query(x)[0]
    sigma2 = (float(d_xy @ d_xy) + float(d_yx @ d_yx)) / (d * (m + n))
    sigma2 = max(sigma2, _SIGMA2_FLOOR)

    ty = y
    w_mat = np.zeros((m, d))
    trace = []
    converged = False
    iterations = 0
    xx = np.einsum("ij,ij->i", x, x)

    for _ in range(config.max_iterations):
        sq = cdist(ty, x, "sqeuclidean")
        gauss = np.exp(-sq / (2.0 * sigma2))
        norm = (2.0 * math.pi * sigma2) ** (-d / 2.0)
        colsum = gauss.sum(axis=0)
        inner = (1.0 - w_out) / m * norm * colsum + w_out / n
        if np.any(inner <= 0.0) or not np.isfinite(inner).all():
            raise RegistrationError(
                "objective became non-finite (variance collapsed before convergence)",
                iteration=iterations)
        objective = float(-np.log(inner).sum())
        if not math.isfinite(objective):
            raise RegistrationError("objective became non-finite",
                                    iteration=iterations)
        trace.append(objective)
        if len(trace) > 1:
            change = abs(trace[-2] - objective) / (abs(trace[-2]) + 1e-12)
            if change < config.tolerance:
                converged = True
                break

        # E-step responsibilities; the uniform component absorbs the rest.
        c = _outlier_bias(m, n, sigma2, w_out)
        p = gauss / (colsum + c)[None, :]
        p1 = p.sum(axis=1)
        pt1 = p.sum(axis=0)
        np_total = float(p1.sum())
        if np_total <= 0:
            raise RegistrationError("all points classified as outliers",
                                    iteration=iterations)

        # M-step: solve for the kernel weights, then re-estimate the variance.
        a = g * p1[:, None]
        a[np.diag_indices(m)] += config.coherence * sigma2
        b = p @ x - y * p1[:, None]
        w_mat = np.linalg.solve(a, b)
        ty = y + g @ w_mat
        iterations += 1

        x_px = float(pt1 @ xx)
        tr_pxy = float(np.einsum("ij,ij->", ty, p @ x))
        y_py = float(p1 @ np.einsum("ij,ij->i", ty, ty))
        sigma2 = (x_px - 2.0 * tr_pxy + y_py) / (np_total * d)
        if sigma2 <= _SIGMA2_FLOOR:
            sigma2 = _SIGMA2_FLOOR
            converged = True
            sq = cdist(ty, x, "sqeuclidean")
            gauss = np.exp(-sq / (2.0 * sigma2))
            norm = (2.0 * math.pi * sigma2) ** (-d / 2.0)
            inner = (1.0 - w_out) / m * norm * gauss.sum(axis=0) + w_out / n
            if np.all(inner > 0) and np.isfinite(inner).all():
                trace.append(float(-np.log(inner).sum()))
            break

    return w_mat, sigma2, tuple(trace), iterations, converged


# ---------------------------------------------------------------------------
# correspondence and merging


def _nearest_lowest_index(tree: cKDTree, points: np.ndarray):
    """Nearest-neighbour indices with exact ties resolved to the lowest index."""
    n_index = tree.n
    k = min(2, n_index)
    dist, idx = tree.query(points, k=k)
    if k == 1:
        return np.atleast_1d(dist), np.atleast_1d(idx)
    d0 = dist[:, 0]
    j0 = idx[:, 0].copy()
    tied = np.nonzero(dist[:, 0] == dist[:, 1])[0]
    for row in tied:
        ball = tree.query_ball_point(points[row], d0[row] * (1 + 1e-12) + 1e-15)
        dd = np.linalg.norm(tree.data[ball] - points[row], axis=1)
        exact = [b for b, v in zip(ball, dd) if v == d0[row]]
        j0[row] = min(exact) if exact else j0[row]
    return d0, j0


def mutual_nearest_neighbours(cloud_a: PointCloud, cloud_b: PointCloud) -> np.ndarray:
    """Index pairs (i, j) where a_i and b_j are each other's nearest neighbour.

    Ties are resolved toward the lower index on both sides, so the result is
    deterministic; swapping the arguments mirrors the pairs.
    """
    a, b = cloud_a.points, cloud_b.points
    tree_a, tree_b = cKDTree(a), cKDTree(b)
    _, j_ab = _nearest_lowest_index(tree_b, a)
    _, j_ba = _nearest_lowest_index(tree_a, b)
    i = np.arange(a.shape[0])
    mutual = j_ba[j_ab] == i
    pairs = np.column_stack([i[mutual], j_ab[mutual]])
    return pairs


def centroid_scan(scans) -> PointCloud:
    """Average scan built from mutual nearest neighbours across scans.

    The largest scan acts as reference; every reference point is averaged
    with its mutual-nearest partner from each other scan where one exists.
    Reference points with partners in fewer than half of the other scans
    (rounded up) are dropped as unsupported.
    """
    scans = list(scans)
    k = len(scans)
    if k < 2:
        raise PreconditionError("centroid scan needs at least 2 scans")
    ref_pos = max(range(k), key=lambda i: len(scans[i]))
    ref = scans[ref_pos]
    others = [s for i, s in enumerate(scans) if i != ref_pos]

    n_ref = len(ref)
    sums = ref.points.copy()
    counts = np.zeros(n_ref, dtype=int)
    for other in others:
        pairs = mutual_nearest_neighbours(ref, other)
        if pairs.size:
            sums[pairs[:, 0]] += other.points[pairs[:, 1]]
            counts[pairs[:, 0]] += 1
    need = math.ceil((k - 1) / 2)
    keep = counts >= need
    if not keep.any():
        raise DataQualityError(
            "centroid scan is empty; the scans do not overlap enough")
    centroids = sums[keep] / (counts[keep] + 1)[:, None]
    return PointCloud(centroids, None, None, ref.timestamp)


@dataclass(frozen=True)
class ScanRegistration:
    """Per-scan record of the last registration pass in a merge."""

    view_id: int | None
    iterations: int
    sigma2: float
    objective_trace: tuple
    mean_displacement: float
    converged: bool


@dataclass(frozen=True)
class MultiViewResult:
    """Outcome of a multi-view merge."""

    merged: PointCloud
    fields: tuple             # cumulative DeformationField per scan
    registrations: tuple      # ScanRegistration per scan, last sweep
    sweeps: int
    final_mean_displacement: float
    warnings: tuple


def align_multiview(scans, rough, config: CpdConfig = CpdConfig(),
                    resolution: float = DEFAULT_SCAN_RESOLUTION,
                    max_sweeps: int = MAX_MERGE_SWEEPS,
                    min_overlap: float = MIN_PAIR_OVERLAP) -> MultiViewResult:
    """Merge several rough-aligned scans of one object non-rigidly.

    Each sweep holds out one scan at a time, registers it against the
    centroid scan of all the others and replaces it with the moved version.
    Sweeps stop once the mean displacement applied in a sweep falls below the
    scan resolution, or after `max_sweeps`.

    Args:
        scans: at least two PointClouds.
        rough: matching list of RigidTransforms taking each scan into the
            shared frame (identity for scans already there).

    Returns:
        MultiViewResult whose merged cloud is the union of the refined scans
        and whose warnings list names scan pairs with poor overlap.

    Raises:
        RegistrationError: a scan failed to register; the message names it.
    """
    scans = list(scans)
    if len(scans) < 2:
        raise PreconditionError("multi-view merge needs at least 2 scans")
    if len(rough) != len(scans):
        raise PreconditionError("need one rough transform per scan")
    if max_sweeps < 1:
        raise PreconditionError("max_sweeps must be at least 1")

    current = [s.moved(t.apply(s.points)) for s, t in zip(scans, rough)]
    start_points = [c.points.copy() for c in current]
    last_reg = [None] * len(scans)
    sweeps = 0
    mean_disp = math.inf

    while sweeps < max_sweeps:
        disp_sum = 0.0
        disp_count = 0
        for i in range(len(current)):
            others = [current[j] for j in range(len(current)) if j != i]
            target = others[0] if len(others) == 1 else centroid_scan(others)
            try:
                fld = cpd_register(current[i], target, config)
            except (RegistrationError, DataQualityError) as exc:
                raise RegistrationError(
                    f"scan {scans[i].view_id if scans[i].view_id is not None else i} "
                    f"failed to register against its centroid scan: {exc}") from exc
            current[i] = current[i].moved(current[i].points + fld.displacements)
            norms = np.linalg.norm(fld.displacements, axis=1)
            disp_sum += float(norms.sum())
            disp_count += norms.size
            last_reg[i] = fld
        sweeps += 1
        mean_disp = disp_sum / max(disp_count, 1)
        if mean_disp < resolution:
            break

    fields = []
    registrations = []
    for i, cloud in enumerate(current):
        cumulative = cloud.points - start_points[i]
        fld = last_reg[i]
        fields.append(DeformationField(cumulative, fld.sigma2, fld.objective_trace,
                                       fld.iterations, fld.converged))
        registrations.append(ScanRegistration(
            scans[i].view_id, fld.iterations, fld.sigma2, fld.objective_trace,
            float(np.linalg.norm(cumulative, axis=1).mean()), fld.converged))

    warnings = []
    thin = [voxel_downsample(c, config.downsample_cell) if config.downsample_cell > 0
            else c for c in current]
    for i in range(len(thin)):
        for j in range(i + 1, len(thin)):
            pairs = mutual_nearest_neighbours(thin[i], thin[j])
            cover = len(pairs) / min(len(thin[i]), len(thin[j]))
            if cover < min_overlap:
                warnings.append(
                    f"scans {_vid(scans[i], i)} and {_vid(scans[j], j)} share only "
                    f"{cover:.0%} mutual-neighbour coverage")

    merged_pts = np.vstack([c.points for c in current])
    inten = None
    if all(c.intensity is not None for c in current):
        inten = np.concatenate([c.intensity for c in current])
    merged = PointCloud(merged_pts, inten, None, scans[0].timestamp)
    return MultiViewResult(merged, tuple(fields), tuple(registrations),
                           sweeps, mean_disp, tuple(warnings))


def _vid(scan: PointCloud, fallback: int):
    return scan.view_id if scan.view_id is not None else fallback
