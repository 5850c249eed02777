import math

import numpy as np
import pytest

from phytoscan.cloudcore import PointCloud
from phytoscan.errors import PreconditionError
from phytoscan.registration import mutual_nearest_neighbours
from phytoscan.synthscan import (
    Cylinder,
    Frustum,
    Plant,
    PlantParams,
    PRESETS,
    ScannerModel,
    Sphere,
    SphericalCap,
    distance_to_surface,
    generate_plant,
    grow_step,
    grow_to,
    growth_exponent,
    scan_session,
    surface_coverage,
    surface_sample,
    total_surface_area,
    total_volume,
    turntable_priors,
    view_rotation,
    virtual_scan,
    visible_surface_mask,
)

NOISELESS = ScannerModel(resolution=0.25, noise_sigma=0.0)


def to_world(plant, scan):
    centre = plant.bbox.centre
    return (scan.cloud.points - centre) @ view_rotation(scan.angle) + centre


@pytest.fixture(scope="module")
def tiny():
    return generate_plant(PRESETS["tiny"])


@pytest.fixture(scope="module")
def tiny_session(tiny):
    return scan_session(tiny, 12, 9, 0, model=ScannerModel(resolution=0.25,
                                                           noise_sigma=0.05))


# ---------------------------------------------------------------------------
# analytic primitives


def test_cylinder_analytics():
    cyl = Cylinder((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 1.0, 50.0)
    assert cyl.surface_area == pytest.approx(2 * math.pi * 50 + 2 * math.pi)
    assert cyl.volume == pytest.approx(math.pi * 50)


def test_frustum_analytics():
    fr = Frustum((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 2.0, 1.0, 10.0)
    slant = math.hypot(10.0, 1.0)
    assert fr.surface_area == pytest.approx(math.pi * 3.0 * slant + math.pi * 5.0)
    assert fr.volume == pytest.approx(math.pi * 10.0 * (4 + 2 + 1) / 3.0)


def test_frustum_with_equal_radii_matches_cylinder():
    fr = Frustum((1.0, 2.0, 3.0), (0.0, 1.0, 0.0), 1.5, 1.5, 20.0)
    cyl = Cylinder((1.0, 2.0, 3.0), (0.0, 1.0, 0.0), 1.5, 20.0)
    assert fr.surface_area == pytest.approx(cyl.surface_area)
    assert fr.volume == pytest.approx(cyl.volume)


def test_primitive_samples_lie_on_surface(rng):
    organs = [
        Cylinder((0.0, 1.0, 2.0), (0.3, 0.1, 1.0), 1.2, 30.0),
        Frustum((5.0, -2.0, 0.0), (0.0, 0.2, 1.0), 2.0, 0.8, 25.0),
        SphericalCap((0.0, 0.0, 40.0), (0.2, 0.3, 1.0), 15.0, 0.9),
        Sphere((10.0, 10.0, 10.0), 6.0),
    ]
    for organ in organs:
        pts, normals = organ.sample(400, rng)
        assert organ.distance(pts).max() < 1e-9
        assert np.abs(np.linalg.norm(normals, axis=1) - 1.0).max() < 1e-9


def test_ray_hits_land_on_surface(rng):
    fr = Frustum((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 3.0, 1.0, 20.0)
    ys = rng.uniform(-2.5, 2.5, 80)
    zs = rng.uniform(1.0, 19.0, 80)
    origins = np.column_stack([np.full(80, 50.0), ys, zs])
    direction = np.array([-1.0, 0.0, 0.0])
    t = fr.ray_hits(origins, direction)
    hit = np.isfinite(t)
    assert hit.sum() > 60
    landed = origins[hit] + t[hit, None] * direction
    assert fr.distance(landed).max() < 1e-8


def test_cap_area_counts_both_sides():
    cap = SphericalCap((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 10.0, 0.8)
    assert cap.surface_area == pytest.approx(2.0 * cap.one_sided_area)
    assert cap.volume == 0.0


def test_scaled_primitives_follow_power_laws():
    s = 1.37
    for organ in (Cylinder((1.0, 0, 0), (0.0, 0, 1), 2.0, 15.0),
                  Frustum((0.0, 2, 0), (1.0, 0, 0), 2.0, 1.2, 12.0),
                  Sphere((3.0, 3, 3), 5.0)):
        grown = organ.scaled(np.array([1.0, 1.0, 1.0]), s)
        assert grown.surface_area == pytest.approx(organ.surface_area * s ** 2)
        assert grown.volume == pytest.approx(organ.volume * s ** 3)


# ---------------------------------------------------------------------------
# plant generation


def test_single_stem_matches_cylinder_formulas():
    stem = generate_plant(PlantParams(stem_height=50.0, stem_radius=1.0,
                                      branch_depth=0, with_leaves=False))
    assert len(stem.organs) == 1
    assert stem.junctions.shape == (0, 3)
    assert total_surface_area(stem) == pytest.approx(2 * math.pi * 51.0)
    assert total_volume(stem) == pytest.approx(math.pi * 50.0)


def test_generation_is_deterministic():
    a = generate_plant(PRESETS["default"])
    b = generate_plant(PRESETS["default"])
    assert np.array_equal(a.junctions, b.junctions)
    assert len(a.organs) == len(b.organs)
    for oa, ob in zip(a.organs, b.organs):
        assert type(oa) is type(ob)
        assert oa == ob


def test_rosette_preset_has_five_junctions():
    rosette = generate_plant("rosette")
    assert rosette.junctions.shape[0] == 5


def test_preset_junction_heights_are_stable():
    calib = generate_plant("calibration")
    assert np.round(calib.junctions[:, 2], 1).tolist() == [30.5, 46.3, 60.2,
                                                           76.4, 91.5]
    default = generate_plant("default")
    assert np.round(default.junctions[:, 2], 1).tolist() == [36.7, 52.4, 66.3,
                                                             77.6, 91.3, 107.4]


def test_bush_preset_has_offaxis_junctions():
    bush = generate_plant("bush")
    assert bush.junctions.shape[0] == 12
    assert len(bush.organs) == 13
    radial = np.linalg.norm(bush.junctions[:, :2], axis=1)
    assert (radial > 5.0).sum() == 8  # two sub-branch attachments per branch


def test_tapered_plant_uses_frustums():
    plant = generate_plant(PlantParams(branch_count=2, taper=0.6,
                                       with_leaves=False))
    assert all(isinstance(o, Frustum) for o in plant.organs)
    stem = plant.organs[0]
    assert stem.radius_top == pytest.approx(0.6 * stem.radius_base)


def test_plant_params_validation():
    with pytest.raises(PreconditionError):
        PlantParams(stem_height=-1.0)
    with pytest.raises(PreconditionError):
        PlantParams(branch_depth=3)
    with pytest.raises(PreconditionError):
        PlantParams(taper=0.0)
    with pytest.raises(PreconditionError):
        PlantParams(lights_on=20.0, lights_off=6.0)
    with pytest.raises(PreconditionError):
        generate_plant("no-such-preset")


# ---------------------------------------------------------------------------
# growth model


def test_growth_exponent_mixes_phase_rates():
    params = PlantParams()
    full_day = growth_exponent(params, 0.0, 24.0)
    assert full_day == pytest.approx((12 * params.day_rate
                                      + 12 * params.night_rate) / 24.0)
    day_window = growth_exponent(params, 6.0, 18.0)
    night_window = growth_exponent(params, 18.0, 30.0)
    assert night_window == pytest.approx(2.0 * day_window)


def test_grow_step_follows_documented_exponents(tiny):
    r = 0.12
    grown = grow_step(tiny, 24.0, day_rate=r, night_rate=r, phase="day")
    assert total_volume(grown) / total_volume(tiny) == pytest.approx(math.exp(r))
    assert (total_surface_area(grown) / total_surface_area(tiny)
            == pytest.approx(math.exp(2 * r / 3)))
    heights = grown.junctions[:, 2] / tiny.junctions[:, 2]
    assert heights == pytest.approx(np.full(len(heights), math.exp(r / 3)))


def test_zero_rates_leave_plant_unchanged(tiny):
    frozen = grow_step(tiny, 24.0, day_rate=0.0, night_rate=0.0)
    assert total_surface_area(frozen) == pytest.approx(total_surface_area(tiny))
    assert np.array_equal(frozen.junctions, tiny.junctions)


def test_schedule_aligned_steps_compose_to_grow_to(tiny):
    chain = grow_step(grow_step(grow_step(tiny, 6.0), 12.0), 6.0)
    direct = grow_to(tiny, 24.0)
    assert total_surface_area(chain) == pytest.approx(total_surface_area(direct),
                                                      rel=1e-12)
    assert chain.age_hours == direct.age_hours == 24.0


def test_grow_to_runs_backwards(tiny):
    there_and_back = grow_to(grow_to(tiny, 100.0), 0.0)
    assert total_volume(there_and_back) == pytest.approx(total_volume(tiny),
                                                         rel=1e-12)


def test_grow_step_validation(tiny):
    with pytest.raises(PreconditionError):
        grow_step(tiny, 0.0)
    with pytest.raises(PreconditionError):
        grow_step(tiny, 1.0, phase="dusk")
    with pytest.raises(PreconditionError):
        growth_exponent(tiny.params, 5.0, 1.0)


# ---------------------------------------------------------------------------
# virtual scanner


def test_sphere_scan_respects_occlusion_budget():
    ball = Plant((Sphere((0.0, 0.0, 100.0), 25.0),), np.empty((0, 3)),
                 PlantParams())
    scan = virtual_scan(ball, 0.0, np.random.default_rng(1), NOISELESS)
    budget = ball.organs[0].surface_area / NOISELESS.resolution ** 2
    assert len(scan.cloud.points) <= 0.5 * budget


def test_noiseless_scan_lies_on_surface(tiny):
    angle = 2 * math.pi * 5 / 12
    scan = virtual_scan(tiny, angle, np.random.default_rng(3), NOISELESS)
    world = to_world(tiny, scan)
    assert distance_to_surface(tiny, world).max() < 1e-6


def test_wide_plant_splits_into_two_partials():
    bar = Plant((Cylinder((0.0, -45.0, 50.0), (0.0, 1.0, 0.0), 2.0, 90.0),),
                np.empty((0, 3)), PlantParams())
    model = ScannerModel(resolution=0.5, noise_sigma=0.0, fov_width=60.0)
    scan = virtual_scan(bar, 0.0, np.random.default_rng(2), model)
    assert scan.partials == 2
    assert not scan.clipped
    world = to_world(bar, scan)
    assert world[:, 1].min() <= -44.0
    assert world[:, 1].max() >= 44.0


def test_overwide_plant_reports_clipping():
    bar = Plant((Cylinder((0.0, -45.0, 50.0), (0.0, 1.0, 0.0), 2.0, 90.0),),
                np.empty((0, 3)), PlantParams())
    model = ScannerModel(resolution=0.5, noise_sigma=0.0, fov_width=25.0)
    scan = virtual_scan(bar, 0.0, np.random.default_rng(2), model)
    assert scan.clipped
    assert scan.partials == model.max_partials


def test_sessions_are_deterministic(tiny):
    model = ScannerModel(resolution=0.25, noise_sigma=0.05)
    one = scan_session(tiny, 3, 11, 2, model=model)
    two = scan_session(tiny, 3, 11, 2, model=model)
    for a, b in zip(one, two):
        assert np.array_equal(a.cloud.points, b.cloud.points)
    shifted = scan_session(tiny, 3, 11, 3, model=model)
    assert not np.array_equal(one[0].cloud.points, shifted[0].cloud.points)


def test_adjacent_views_share_overlap(tiny, tiny_session):
    priors = turntable_priors(12, tiny.bbox.centre)
    a = PointCloud(priors[0].apply(tiny_session[0].cloud.points))
    b = PointCloud(priors[1].apply(tiny_session[1].cloud.points))
    pairs = mutual_nearest_neighbours(a, b)
    gaps = np.linalg.norm(a.points[pairs[:, 0]] - b.points[pairs[:, 1]], axis=1)
    fraction = (gaps < 0.5).sum() / min(len(a.points), len(b.points))
    assert fraction >= 0.2


def test_opposed_views_of_convex_body_barely_overlap():
    ball = Plant((Sphere((0.0, 0.0, 100.0), 25.0),), np.empty((0, 3)),
                 PlantParams())
    priors = turntable_priors(2, ball.bbox.centre)
    views = [virtual_scan(ball, math.pi * k, np.random.default_rng(k), NOISELESS)
             for k in range(2)]
    a = PointCloud(priors[0].apply(views[0].cloud.points))
    b = PointCloud(priors[1].apply(views[1].cloud.points))
    pairs = mutual_nearest_neighbours(a, b)
    gaps = np.linalg.norm(a.points[pairs[:, 0]] - b.points[pairs[:, 1]], axis=1)
    fraction = (gaps < 0.5).sum() / min(len(a.points), len(b.points))
    assert fraction < 0.05


def test_turntable_priors_map_views_back_to_world(tiny):
    scan = virtual_scan(tiny, 2 * math.pi / 12, np.random.default_rng(8),
                        NOISELESS, view_id=1)
    prior = turntable_priors(12, tiny.bbox.centre)[1]
    assert prior.apply(scan.cloud.points) == pytest.approx(to_world(tiny, scan))


def test_full_orbit_covers_visible_surface(tiny):
    scans = scan_session(tiny, 12, 4, 0, model=NOISELESS)
    merged = PointCloud(np.vstack([to_world(tiny, s) for s in scans]))
    samples, normals = surface_sample(tiny, 20000, np.random.default_rng(7))
    visible = visible_surface_mask(tiny, samples, normals,
                                   [2 * math.pi * k / 12 for k in range(12)],
                                   NOISELESS)
    assert visible.mean() > 0.5
    assert surface_coverage(samples[visible], merged, 0.6) >= 0.9


def test_scanner_model_validation():
    with pytest.raises(PreconditionError):
        ScannerModel(resolution=0.0)
    with pytest.raises(PreconditionError):
        ScannerModel(noise_sigma=-0.1)
    with pytest.raises(PreconditionError):
        ScannerModel(max_partials=0)
