import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phytoscan.cloudcore import (
    PointCloud,
    SpatialIndex,
    bounding_box,
    load_cloud,
    save_cloud,
    voxel_downsample,
)
from phytoscan.errors import EmptyCloudError, ParseError
from phytoscan.synthscan import ScannerModel, virtual_scan

from oracles import knn_brute, voxel_brute


# ---------------------------------------------------------------------------
# file I/O


def test_load_xyz_three_lines(tmp_path):
    path = tmp_path / "cloud.xyz"
    path.write_text("0 0 0\n1 0 0\n0 1 0\n")
    cloud = load_cloud(path)
    assert cloud.points.shape == (3, 3)
    np.testing.assert_array_equal(cloud.points,
                                  [[0, 0, 0], [1, 0, 0], [0, 1, 0]])


def test_load_ply_intensity_normalized(tmp_path):
    path = tmp_path / "cloud.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar intensity\nend_header\n"
        "0 0 0 0\n1 0 0 255\n0 1 0 51\n")
    cloud = load_cloud(path)
    assert cloud.intensity is not None
    np.testing.assert_allclose(cloud.intensity, [0.0, 1.0, 0.2])
    assert cloud.intensity.min() >= 0.0 and cloud.intensity.max() <= 1.0


def test_load_xyz_nan_names_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 nan\n0 0 0\n")
    with pytest.raises(ParseError) as err:
        load_cloud(path)
    assert err.value.line_no == 1
    assert "bad.xyz:1" in str(err.value)


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.xyz"
    path.write_text("")
    with pytest.raises(EmptyCloudError):
        load_cloud(path)


def test_roundtrip_xyz_and_ply(tmp_path, rng):
    pts = rng.uniform(-40.0, 40.0, (60, 3))
    cloud = PointCloud(pts, intensity=rng.uniform(0.0, 1.0, 60))
    for name in ("a.xyz", "a.ply"):
        path = tmp_path / name
        save_cloud(cloud, path)
        back = load_cloud(path)
        np.testing.assert_allclose(back.points, pts, atol=1e-6)
        np.testing.assert_allclose(back.intensity, cloud.intensity, atol=1e-6)


# ---------------------------------------------------------------------------
# spatial index


def test_knn_unit_square_corner():
    corners = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    index = SpatialIndex(PointCloud(corners))
    indices, clamped = index.knn(np.zeros(3), 1)
    assert list(indices) == [0]
    assert not clamped


def test_knn_matches_exhaustive(rng):
    pts = rng.uniform(0.0, 1.0, (100, 3))
    index = SpatialIndex(PointCloud(pts))
    for query in rng.uniform(0.0, 1.0, (25, 3)):
        got, clamped = index.knn(query, 7)
        assert not clamped
        np.testing.assert_array_equal(got, knn_brute(pts, query, 7))


def test_knn_clamps_small_cloud():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
    indices, clamped = SpatialIndex(PointCloud(pts)).knn(np.zeros(3), 5)
    assert clamped
    assert list(indices) == [0, 1, 2]


def test_knn_exact_ties_take_lowest_index():
    # all four points at distance 1 from the origin
    pts = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, 0, 0]], float)
    indices, _ = SpatialIndex(PointCloud(pts)).knn(np.zeros(3), 2)
    assert list(indices) == [0, 1]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 12))
def test_knn_oracle_property(seed, k):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5.0, 5.0, (rng.integers(1, 60), 3))
    query = rng.uniform(-5.0, 5.0, 3)
    got, clamped = SpatialIndex(PointCloud(pts)).knn(query, k)
    assert clamped == (k > pts.shape[0])
    np.testing.assert_array_equal(got, knn_brute(pts, query, k))


def test_within_matches_exhaustive(rng):
    pts = rng.uniform(0.0, 1.0, (200, 3))
    index = SpatialIndex(PointCloud(pts))
    for query in rng.uniform(0.0, 1.0, (10, 3)):
        got = index.within(query, 0.3)
        want = np.nonzero(np.linalg.norm(pts - query, axis=1) <= 0.3)[0]
        assert sorted(got) == sorted(want)


# ---------------------------------------------------------------------------
# voxel downsampling


def test_voxel_two_points_merge_to_midpoint():
    cloud = PointCloud(np.array([[0.1, 0.1, 0.1], [0.3, 0.1, 0.1]]))
    out = voxel_downsample(cloud, 1.0)
    np.testing.assert_allclose(out.points, [[0.2, 0.1, 0.1]])


def test_voxel_small_cell_keeps_every_point(rng):
    pts = rng.uniform(0.0, 100.0, (50, 3))
    out = voxel_downsample(PointCloud(pts), 1e-4)
    assert out.points.shape == pts.shape
    got = {tuple(np.round(p, 6)) for p in out.points}
    want = {tuple(np.round(p, 6)) for p in pts}
    assert got == want


def test_voxel_matches_hash_grid_oracle(rng):
    pts = rng.uniform(-20.0, 20.0, (10_000, 3))
    out = voxel_downsample(PointCloud(pts), 1.0)
    np.testing.assert_allclose(out.points, voxel_brute(pts, 1.0), atol=1e-9)


def test_voxel_idempotent(rng):
    cloud = PointCloud(rng.uniform(0.0, 30.0, (500, 3)))
    once = voxel_downsample(cloud, 2.0)
    twice = voxel_downsample(once, 2.0)
    np.testing.assert_array_equal(once.points, twice.points)


def test_voxel_averages_intensity():
    cloud = PointCloud(np.array([[0.1, 0.0, 0.0], [0.2, 0.0, 0.0]]),
                       intensity=np.array([0.2, 0.6]))
    out = voxel_downsample(cloud, 1.0)
    np.testing.assert_allclose(out.intensity, [0.4])


# ---------------------------------------------------------------------------
# bounding boxes


def test_bounding_box_two_points():
    box = bounding_box(PointCloud(np.array([[0, 0, 0], [1, 2, 3]], float)))
    np.testing.assert_array_equal(box.lo, [0, 0, 0])
    np.testing.assert_array_equal(box.hi, [1, 2, 3])
    np.testing.assert_allclose(box.centre, [0.5, 1.0, 1.5])


def test_bounding_box_single_point_degenerate():
    box = bounding_box(PointCloud(np.array([[4.0, -1.0, 2.0]])))
    np.testing.assert_array_equal(box.lo, box.hi)


def test_bounding_box_contains_whole_scan(tiny_plant):
    scan = virtual_scan(tiny_plant, 30.0, np.random.default_rng(0),
                        ScannerModel(resolution=1.0, noise_sigma=0.05))
    box = bounding_box(scan.cloud)
    assert box.contains(scan.cloud.points).all()


def test_bounding_box_centre_permutation_invariant(rng):
    pts = rng.uniform(-3.0, 9.0, (40, 3))
    centre = bounding_box(PointCloud(pts)).centre
    shuffled = pts[rng.permutation(40)]
    np.testing.assert_array_equal(bounding_box(PointCloud(shuffled)).centre,
                                  centre)


def test_empty_cloud_rejected():
    with pytest.raises(EmptyCloudError):
        PointCloud(np.empty((0, 3)))
