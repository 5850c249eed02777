import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from phytoscan.errors import (DegenerateGeometryError, ParseError,
                              PreconditionError)
from phytoscan.junctions import RigidTransform
from phytoscan.meshing import (
    TriangleMesh,
    alpha_complex,
    alpha_shape,
    boundary_faces,
    circumradius_sq,
    delaunay_tetrahedra,
    is_watertight,
    load_off,
    mesh_volume,
    save_off,
    surface_area,
)
from phytoscan.synthscan import (PlantParams, generate_plant, grow_to,
                                 surface_sample, total_surface_area,
                                 total_volume)

from oracles import (empty_circumsphere_violations, fibonacci_sphere,
                     lattice_cube, surface_closed, surface_components)


def tet_keys(tets):
    return {tuple(row) for row in np.sort(np.asarray(tets), axis=1).tolist()}


# ---------------------------------------------------------------------------
# Delaunay tetrahedralization


def test_four_points_give_one_tetrahedron():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1]])
    tets = delaunay_tetrahedra(pts)
    assert tets.shape == (1, 4)
    assert set(tets[0]) == {0, 1, 2, 3}


def test_centroid_splits_into_four_tetrahedra():
    base = np.array([[0.0, 0, 0], [4.0, 0, 0], [0.0, 4, 0], [0.0, 0, 4]])
    pts = np.vstack([base, base.mean(axis=0, keepdims=True)])
    tets = delaunay_tetrahedra(pts)
    assert tets.shape == (4, 4)
    assert all(4 in row for row in tets)


def test_delaunay_tetrahedra_positively_oriented(rng):
    pts = rng.uniform(0.0, 10.0, (150, 3))
    tets = delaunay_tetrahedra(pts)
    a, b, c, d = (pts[tets[:, i]] for i in range(4))
    vol6 = np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a))
    assert (vol6 > 0).all()


def test_delaunay_circumspheres_are_empty(rng):
    pts = rng.uniform(0.0, 10.0, (200, 3))
    tets = delaunay_tetrahedra(pts)
    assert empty_circumsphere_violations(pts, tets) == []


def test_delaunay_rejects_degenerate_input(rng):
    flat = np.column_stack([rng.uniform(0, 1, (30, 2)), np.zeros(30)])
    with pytest.raises(DegenerateGeometryError):
        delaunay_tetrahedra(flat)
    with pytest.raises(PreconditionError):
        delaunay_tetrahedra(flat[:3])


# ---------------------------------------------------------------------------
# circumradius, including flat slivers


def test_circumradius_of_corner_tetrahedron():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1]])
    r2 = circumradius_sq(pts, np.array([[0, 1, 2, 3]]))
    assert r2[0] == pytest.approx(0.75, rel=1e-12)


def test_circumradius_of_flat_sliver_uses_circle():
    square = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]])
    r2 = circumradius_sq(square, np.array([[0, 1, 2, 3]]))
    assert r2[0] == pytest.approx(0.5, rel=1e-9)


# ---------------------------------------------------------------------------
# alpha complex and alpha shape


def test_kept_set_is_monotone_in_alpha(rng):
    pts = rng.uniform(0.0, 10.0, (300, 3))
    cuts = [0.4, 0.8, 1.5, 3.0, 10.0, 1e9]
    kept = [tet_keys(alpha_complex(pts, a)) for a in cuts]
    for small, large in zip(kept, kept[1:]):
        assert small <= large


def test_alpha_shape_validates_alpha(rng):
    pts = rng.uniform(0.0, 10.0, (50, 3))
    with pytest.raises(PreconditionError, match="point set"):
        alpha_shape(pts, 0.0)
    with pytest.raises(DegenerateGeometryError):
        alpha_shape(pts, 1e-8)


def test_huge_alpha_recovers_convex_hull(rng):
    pts = rng.uniform(0.0, 20.0, (400, 3))
    shape = alpha_shape(pts, 1e9)
    hull = ConvexHull(pts)
    assert shape.surface_area == pytest.approx(hull.area, rel=1e-9)
    assert shape.volume == pytest.approx(hull.volume, rel=1e-9)
    assert shape.watertight


def test_unit_cube_lattice_is_measured_exactly():
    shape = alpha_shape(lattice_cube(0.05), 0.6)
    assert shape.watertight
    assert shape.surface_area == pytest.approx(6.0, rel=1e-9)
    assert shape.volume == pytest.approx(1.0, rel=1e-9)
    assert mesh_volume(shape.mesh) == pytest.approx(shape.volume, rel=1e-6)


def test_separated_cubes_make_two_closed_components():
    cube = lattice_cube(0.25)
    pts = np.vstack([cube, cube + np.array([11.0, 0.0, 0.0])])
    shape = alpha_shape(pts, 0.2)
    parts = surface_components(shape.mesh.faces)
    assert len(parts) == 2
    assert all(surface_closed(part) for part in parts)
    assert shape.volume == pytest.approx(2.0, rel=1e-9)
    assert shape.surface_area == pytest.approx(12.0, rel=1e-9)


def test_sphere_sampled_on_surface_with_filling_alpha():
    pts = fibonacci_sphere(10.0, 0.25)
    shape = alpha_shape(pts, 101.0)
    assert shape.surface_area == pytest.approx(4 * math.pi * 100.0, rel=0.03)
    assert shape.volume == pytest.approx(4 / 3 * math.pi * 1000.0, rel=0.03)
    assert shape.watertight
    assert mesh_volume(shape.mesh) == pytest.approx(shape.volume, rel=1e-6)


def test_metrics_rigidly_invariant_and_scale_covariant(rng):
    pts = rng.uniform(0.0, 20.0, (800, 3))
    base = alpha_shape(pts, 25.0)
    motion = RigidTransform.about_axis([3.0, 1.0, -2.0], [1.0, 1.0, 0.3], 0.7)
    moved = alpha_shape(motion.apply(pts), 25.0)
    assert moved.surface_area == pytest.approx(base.surface_area, rel=1e-9)
    assert moved.volume == pytest.approx(base.volume, rel=1e-9)
    s = 1.7
    scaled = alpha_shape(pts * s, 25.0 * s * s)
    assert scaled.surface_area == pytest.approx(base.surface_area * s ** 2,
                                                rel=1e-9)
    assert scaled.volume == pytest.approx(base.volume * s ** 3, rel=1e-9)


# ---------------------------------------------------------------------------
# triangle metrics


def test_right_triangle_area():
    mesh = TriangleMesh(np.array([[0.0, 0, 0], [3.0, 0, 0], [0.0, 4, 0]]),
                        np.array([[0, 1, 2]]))
    assert surface_area(mesh) == pytest.approx(6.0)


def test_corner_tetrahedron_metrics():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.0, 0, 1]])
    shape = alpha_shape(pts, 1.0)
    assert shape.mesh.faces.shape[0] == 4
    assert shape.surface_area == pytest.approx(1.5 + math.sqrt(3) / 2)
    assert shape.volume == pytest.approx(1.0 / 6.0)
    assert mesh_volume(shape.mesh) == pytest.approx(1.0 / 6.0, rel=1e-12)


def test_volume_of_open_surface_is_refused():
    mesh = TriangleMesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]),
                        np.array([[0, 1, 2]]))
    assert not is_watertight(mesh)
    with pytest.raises(DegenerateGeometryError):
        mesh_volume(mesh)


def test_boundary_faces_of_single_tet_form_closed_surface():
    tets = np.array([[0, 1, 2, 3]])
    faces = boundary_faces(tets)
    assert faces.shape == (4, 3)
    assert surface_closed(faces)


def test_triangle_mesh_validation():
    with pytest.raises(PreconditionError):
        TriangleMesh(np.zeros((0, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(PreconditionError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))
    with pytest.raises(PreconditionError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))


# ---------------------------------------------------------------------------
# mesh file round-trip


def test_off_roundtrip(tmp_path, rng):
    pts = rng.uniform(0.0, 5.0, (60, 3))
    shape = alpha_shape(pts, 1e9)
    path = tmp_path / "hull.off"
    save_off(shape.mesh, path)
    back = load_off(path)
    assert np.array_equal(back.faces, shape.mesh.faces)
    assert back.vertices == pytest.approx(shape.mesh.vertices, abs=1e-6)
    assert surface_area(back) == pytest.approx(shape.surface_area, rel=1e-6)


def test_off_parse_errors(tmp_path):
    bad_magic = tmp_path / "a.off"
    bad_magic.write_text("PLY\n3 1 0\n")
    with pytest.raises(ParseError):
        load_off(bad_magic)
    quad = tmp_path / "b.off"
    quad.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    with pytest.raises(ParseError, match="triangular"):
        load_off(quad)
    truncated = tmp_path / "c.off"
    truncated.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
    with pytest.raises(ParseError):
        load_off(truncated)


# ---------------------------------------------------------------------------
# agreement with the generator's analytic measurements


@pytest.mark.parametrize("age_hours", [0.0, 120.0])
def test_mesh_metrics_match_generator_analytics(age_hours):
    stem = generate_plant(PlantParams(stem_height=120.0, stem_radius=2.5,
                                      branch_depth=0, with_leaves=False))
    plant = grow_to(stem, age_hours)
    area_true = total_surface_area(plant)
    volume_true = total_volume(plant)
    n = int(area_true / 0.3 ** 2)
    pts, _ = surface_sample(plant, n, np.random.default_rng(17))
    shape = alpha_shape(pts, 12.0)
    assert shape.surface_area == pytest.approx(area_true, rel=0.03)
    assert shape.volume == pytest.approx(volume_true, rel=0.03)
