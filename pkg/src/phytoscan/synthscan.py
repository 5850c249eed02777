"""Synthetic plants with known geometry plus a virtual laser scanner.

The generator builds a plant out of analytic primitives (cylinders for stem
and branches, thin spherical caps for leaf blades), so total surface area,
volume, junction locations and point-to-surface distances all have exact
closed forms. The scanner renders such a plant into point clouds the same way
a turntable line scanner would: orthographic rays on a regular grid, first
surface hit wins, Gaussian range noise along the ray.

Growth is modelled as uniform scaling about the stem base with a volumetric
relative rate that depends on the photoperiod phase: over an interval
accumulating exponent E = integral of rate dt (t in days), volume multiplies
by e^E, area by e^(2E/3) and every length by e^(E/3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloudcore import PointCloud, bounding_box
from .errors import PreconditionError
from .junctions import RigidTransform

DEFAULT_SCAN_RESOLUTION = 0.25   # mm between adjacent rays
DEFAULT_RANGE_NOISE = 0.05       # mm, sigma of the along-ray noise
DEFAULT_FIELD_OF_VIEW = 200.0    # mm, square scan window
DEFAULT_GRAZING_LIMIT_DEG = 80.0  # incidence beyond this returns no sample
DEFAULT_LIGHTS_ON = 6.0          # hour of day
DEFAULT_LIGHTS_OFF = 18.0
DEFAULT_DAY_RATE = 0.05          # relative volume growth per day, lights on
DEFAULT_NIGHT_RATE = 0.10        # lights off

_EPS = 1e-9


def _unit(v) -> np.ndarray:
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if n < _EPS:
        raise PreconditionError("zero-length direction")
    return v / n


def _frame(axis: np.ndarray):
    """Two unit vectors completing `axis` to an orthonormal basis."""
    helper = np.array([1.0, 0.0, 0.0])
    if abs(axis[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = _unit(np.cross(axis, helper))
    return u, np.cross(axis, u)


# ---------------------------------------------------------------------------
# organ primitives


@dataclass(frozen=True)
class Cylinder:
    """Capped cylinder from `base` along `axis` (unit) for `height`."""

    base: tuple
    axis: tuple
    radius: float
    height: float

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise PreconditionError("cylinder needs positive radius and height")
        object.__setattr__(self, "base", tuple(float(v) for v in self.base))
        object.__setattr__(self, "axis", tuple(_unit(self.axis)))

    @property
    def surface_area(self) -> float:
        return 2.0 * math.pi * self.radius * (self.height + self.radius)

    @property
    def volume(self) -> float:
        return math.pi * self.radius ** 2 * self.height

    def corners(self) -> np.ndarray:
        b = np.asarray(self.base)
        a = np.asarray(self.axis)
        ends = np.stack([b, b + self.height * a])
        return np.concatenate([ends - self.radius, ends + self.radius])

    def distance(self, pts: np.ndarray) -> np.ndarray:
        b = np.asarray(self.base)
        a = np.asarray(self.axis)
        rel = pts - b
        z = rel @ a
        rho = np.linalg.norm(rel - z[:, None] * a, axis=1)
        dr = rho - self.radius
        dz = np.maximum(-z, z - self.height)
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        return np.abs(inside + outside)

    def ray_hits(self, origins: np.ndarray, direction: np.ndarray) -> np.ndarray:
        b = np.asarray(self.base)
        a = np.asarray(self.axis)
        t = np.full(origins.shape[0], np.inf)
        rel = origins - b
        dz = float(direction @ a)
        oz = rel @ a
        d_perp = direction - dz * a
        o_perp = rel - oz[:, None] * a
        # lateral wall
        qa = float(d_perp @ d_perp)
        if qa > _EPS:
            qb = o_perp @ d_perp
            qc = np.einsum("ij,ij->i", o_perp, o_perp) - self.radius ** 2
            disc = qb * qb - qa * qc
            ok = disc >= 0
            root = np.sqrt(np.maximum(disc, 0.0))
            for sign in (-1.0, 1.0):
                tc = (-qb + sign * root) / qa
                z = oz + tc * dz
                good = ok & (tc > 0) & (z >= 0) & (z <= self.height)
                t = np.where(good & (tc < t), tc, t)
        # end caps
        if abs(dz) > _EPS:
            for plane in (0.0, self.height):
                tc = (plane - oz) / dz
                hit = origins + tc[:, None] * direction
                hrel = hit - b
                hz = hrel @ a
                rho2 = np.einsum("ij,ij->i", hrel - hz[:, None] * a,
                                 hrel - hz[:, None] * a)
                good = (tc > 0) & (rho2 <= self.radius ** 2)
                t = np.where(good & (tc < t), tc, t)
        return t

    def sample(self, n: int, rng: np.random.Generator):
        a = _unit(self.axis)
        u, v = _frame(a)
        b = np.asarray(self.base)
        lateral = 2.0 * math.pi * self.radius * self.height
        cap = math.pi * self.radius ** 2
        which = rng.uniform(0.0, lateral + 2 * cap, n)
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        ring = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        on_wall = which < lateral
        z = rng.uniform(0.0, self.height, n)
        pts[on_wall] = (b + z[on_wall, None] * a
                        + self.radius * ring[on_wall])
        nrm[on_wall] = ring[on_wall]
        disk = ~on_wall
        top = which[disk] >= lateral + cap
        rr = self.radius * np.sqrt(rng.uniform(0.0, 1.0, int(disk.sum())))
        centre = b + np.where(top[:, None], self.height, 0.0) * a
        pts[disk] = centre + rr[:, None] * ring[disk]
        nrm[disk] = np.where(top[:, None], a, -a)
        return pts, nrm

    def scaled(self, centre: np.ndarray, s: float) -> "Cylinder":
        b = centre + s * (np.asarray(self.base) - centre)
        return Cylinder(tuple(b), self.axis, self.radius * s, self.height * s)


@dataclass(frozen=True)
class Frustum:
    """Capped tapered cylinder: radius shrinks linearly from base to top."""

    base: tuple
    axis: tuple
    radius_base: float
    radius_top: float
    height: float

    def __post_init__(self):
        if self.radius_base <= 0 or self.radius_top <= 0 or self.height <= 0:
            raise PreconditionError("frustum needs positive radii and height")
        object.__setattr__(self, "base", tuple(float(v) for v in self.base))
        object.__setattr__(self, "axis", tuple(_unit(self.axis)))

    @property
    def _slope(self) -> float:
        return (self.radius_top - self.radius_base) / self.height

    @property
    def surface_area(self) -> float:
        slant = math.hypot(self.height, self.radius_top - self.radius_base)
        lateral = math.pi * (self.radius_base + self.radius_top) * slant
        return lateral + math.pi * (self.radius_base ** 2 + self.radius_top ** 2)

    @property
    def volume(self) -> float:
        r1, r2 = self.radius_base, self.radius_top
        return math.pi * self.height * (r1 * r1 + r1 * r2 + r2 * r2) / 3.0

    def corners(self) -> np.ndarray:
        b = np.asarray(self.base)
        a = np.asarray(self.axis)
        r = max(self.radius_base, self.radius_top)
        ends = np.stack([b, b + self.height * a])
        return np.concatenate([ends - r, ends + r])

    def distance(self, pts: np.ndarray) -> np.ndarray:
        b = np.asarray(self.base)
        a = np.asarray(self.axis)
        rel = pts - b
        z = rel @ a
        rho = np.linalg.norm(rel - z[:, None] * a, axis=1)
        # revolution symmetry: point-to-segment distances in the (rho, z) plane
        # against the slanted wall and the two cap disks
        segs = (((self.radius_base, 0.0), (self.radius_top, self.height)),
                ((0.0, 0.0), (self.radius_base, 0.0)),
                ((0.0, self.height), (self.radius_top, self.height)))
        best = np.full(pts.shape[0], np.inf)
        for (r0, z0), (r1, z1) in segs:
            dr, dz = r1 - r0, z1 - z0
            denom = dr * dr + dz * dz
            t = ((rho - r0) * dr + (z - z0) * dz) / denom
            t = np.clip(t, 0.0, 1.0)
            d = np.hypot(rho - (r0 + t * dr), z - (z0 + t * dz))
            best = np.minimum(best, d)
        return best

    def ray_hits(self, origins: np.ndarray, direction: np.ndarray) -> np.ndarray:
        b = np.asarray(self.base)
        a = np.asarray(self.axis)
        s = self._slope
        t = np.full(origins.shape[0], np.inf)
        rel = origins - b
        dz = float(direction @ a)
        oz = rel @ a
        d_perp = direction - dz * a
        o_perp = rel - oz[:, None] * a
        # slanted wall: |o_perp + t d_perp|^2 = (radius_base + slope z(t))^2
        c0 = self.radius_base + s * oz
        c1 = s * dz
        qa = float(d_perp @ d_perp) - c1 * c1
        qb = o_perp @ d_perp - c0 * c1
        qc = np.einsum("ij,ij->i", o_perp, o_perp) - c0 * c0
        if abs(qa) > _EPS:
            disc = qb * qb - qa * qc
            ok = disc >= 0
            root = np.sqrt(np.maximum(disc, 0.0))
            for sign in (-1.0, 1.0):
                tc = (-qb + sign * root) / qa
                z = oz + tc * dz
                good = ok & (tc > 0) & (z >= 0) & (z <= self.height)
                t = np.where(good & (tc < t), tc, t)
        else:
            nz = np.abs(qb) > _EPS
            tc = np.where(nz, -qc / (2.0 * np.where(nz, qb, 1.0)), np.inf)
            z = oz + tc * dz
            good = nz & (tc > 0) & (z >= 0) & (z <= self.height)
            t = np.where(good & (tc < t), tc, t)
        # end caps
        if abs(dz) > _EPS:
            for plane, radius in ((0.0, self.radius_base),
                                  (self.height, self.radius_top)):
                tc = (plane - oz) / dz
                hit = origins + tc[:, None] * direction
                hrel = hit - b
                hz = hrel @ a
                perp = hrel - hz[:, None] * a
                rho2 = np.einsum("ij,ij->i", perp, perp)
                good = (tc > 0) & (rho2 <= radius ** 2)
                t = np.where(good & (tc < t), tc, t)
        return t

    def sample(self, n: int, rng: np.random.Generator):
        a = _unit(self.axis)
        u, v = _frame(a)
        b = np.asarray(self.base)
        s = self._slope
        slant = math.hypot(self.height, self.radius_top - self.radius_base)
        lateral = math.pi * (self.radius_base + self.radius_top) * slant
        cap_lo = math.pi * self.radius_base ** 2
        cap_hi = math.pi * self.radius_top ** 2
        which = rng.uniform(0.0, lateral + cap_lo + cap_hi, n)
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        ring = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        on_wall = which < lateral
        # wall z density is proportional to the local radius: invert its CDF
        r1, r2 = self.radius_base, self.radius_top
        w = rng.uniform(0.0, 1.0, n)
        if abs(r2 - r1) < 1e-12:
            z = w * self.height
        else:
            z = self.height * (np.sqrt(r1 * r1 + w * (r2 * r2 - r1 * r1)) - r1) / (r2 - r1)
        radius_at = r1 + s * z
        pts[on_wall] = (b + z[on_wall, None] * a
                        + radius_at[on_wall, None] * ring[on_wall])
        norm_scale = 1.0 / math.hypot(1.0, s)
        nrm[on_wall] = (ring[on_wall] - s * a) * norm_scale
        disk = ~on_wall
        top = which[disk] >= lateral + cap_lo
        rr = np.where(top, r2, r1) * np.sqrt(rng.uniform(0.0, 1.0, int(disk.sum())))
        centre = b + np.where(top[:, None], self.height, 0.0) * a
        pts[disk] = centre + rr[:, None] * ring[disk]
        nrm[disk] = np.where(top[:, None], a, -a)
        return pts, nrm

    def scaled(self, centre: np.ndarray, s: float) -> "Frustum":
        b = centre + s * (np.asarray(self.base) - centre)
        return Frustum(tuple(b), self.axis, self.radius_base * s,
                       self.radius_top * s, self.height * s)


@dataclass(frozen=True)
class SphericalCap:
    """Thin leaf blade: part of a sphere within `half_angle` of `axis`.

    The blade has no thickness, so it contributes no volume; its one-sided
    area is 2 pi R^2 (1 - cos psi). A closed reconstruction wraps both sides,
    so `surface_area` reports twice the one-sided value.
    """

    centre: tuple
    axis: tuple
    radius: float
    half_angle: float

    def __post_init__(self):
        if self.radius <= 0 or not 0.0 < self.half_angle <= math.pi:
            raise PreconditionError("cap needs positive radius and an angle in (0, pi]")
        object.__setattr__(self, "centre", tuple(float(v) for v in self.centre))
        object.__setattr__(self, "axis", tuple(_unit(self.axis)))

    @property
    def one_sided_area(self) -> float:
        return 2.0 * math.pi * self.radius ** 2 * (1.0 - math.cos(self.half_angle))

    @property
    def surface_area(self) -> float:
        return 2.0 * self.one_sided_area

    @property
    def volume(self) -> float:
        return 0.0

    def corners(self) -> np.ndarray:
        c = np.asarray(self.centre)
        return np.stack([c - self.radius, c + self.radius])

    def distance(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.centre)
        a = np.asarray(self.axis)
        rel = pts - c
        r = np.linalg.norm(rel, axis=1)
        z = rel @ a
        rho = np.linalg.norm(rel - z[:, None] * a, axis=1)
        on_cap = z >= np.cos(self.half_angle) * r
        to_sphere = np.abs(r - self.radius)
        rim_rho = self.radius * math.sin(self.half_angle)
        rim_z = self.radius * math.cos(self.half_angle)
        to_rim = np.hypot(rho - rim_rho, z - rim_z)
        return np.where(on_cap, to_sphere, to_rim)

    def ray_hits(self, origins: np.ndarray, direction: np.ndarray) -> np.ndarray:
        c = np.asarray(self.centre)
        a = np.asarray(self.axis)
        t = np.full(origins.shape[0], np.inf)
        rel = origins - c
        qb = rel @ direction
        qc = np.einsum("ij,ij->i", rel, rel) - self.radius ** 2
        disc = qb * qb - qc
        ok = disc >= 0
        root = np.sqrt(np.maximum(disc, 0.0))
        cos_psi = math.cos(self.half_angle)
        for sign in (-1.0, 1.0):
            tc = -qb + sign * root
            hit = rel + tc[:, None] * direction
            good = ok & (tc > 0) & (hit @ a >= cos_psi * self.radius)
            t = np.where(good & (tc < t), tc, t)
        return t

    def sample(self, n: int, rng: np.random.Generator):
        a = _unit(self.axis)
        u, v = _frame(a)
        cos_t = rng.uniform(math.cos(self.half_angle), 1.0, n)
        sin_t = np.sqrt(1.0 - cos_t ** 2)
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        nrm = (cos_t[:, None] * a
               + (sin_t * np.cos(phi))[:, None] * u
               + (sin_t * np.sin(phi))[:, None] * v)
        pts = np.asarray(self.centre) + self.radius * nrm
        return pts, nrm

    def scaled(self, centre: np.ndarray, s: float) -> "SphericalCap":
        c = centre + s * (np.asarray(self.centre) - centre)
        return SphericalCap(tuple(c), self.axis, self.radius * s, self.half_angle)


@dataclass(frozen=True)
class Sphere:
    """Solid ball, used for occlusion scenarios and tests."""

    centre: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise PreconditionError("sphere needs a positive radius")
        object.__setattr__(self, "centre", tuple(float(v) for v in self.centre))

    @property
    def surface_area(self) -> float:
        return 4.0 * math.pi * self.radius ** 2

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius ** 3

    def corners(self) -> np.ndarray:
        c = np.asarray(self.centre)
        return np.stack([c - self.radius, c + self.radius])

    def distance(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(np.linalg.norm(pts - np.asarray(self.centre), axis=1)
                      - self.radius)

    def ray_hits(self, origins: np.ndarray, direction: np.ndarray) -> np.ndarray:
        rel = origins - np.asarray(self.centre)
        qb = rel @ direction
        qc = np.einsum("ij,ij->i", rel, rel) - self.radius ** 2
        disc = qb * qb - qc
        ok = disc >= 0
        root = np.sqrt(np.maximum(disc, 0.0))
        t = np.full(origins.shape[0], np.inf)
        for sign in (-1.0, 1.0):
            tc = -qb + sign * root
            good = ok & (tc > 0)
            t = np.where(good & (tc < t), tc, t)
        return t

    def sample(self, n: int, rng: np.random.Generator):
        nrm = rng.normal(size=(n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        return np.asarray(self.centre) + self.radius * nrm, nrm

    def scaled(self, centre: np.ndarray, s: float) -> "Sphere":
        c = centre + s * (np.asarray(self.centre) - centre)
        return Sphere(tuple(c), self.radius * s)


# ---------------------------------------------------------------------------
# plant generation


@dataclass(frozen=True)
class PlantParams:
    """Geometry and growth settings for one synthetic plant."""

    stem_height: float = 120.0
    stem_radius: float = 2.5
    branch_count: int = 6
    branch_length: float = 55.0
    branch_radius: float = 1.6
    branch_elevation_deg: float = 50.0
    branch_depth: int = 1
    subbranch_count: int = 2
    subbranch_length_scale: float = 0.45
    subbranch_radius_scale: float = 0.6
    taper: float = 1.0
    leaf_radius: float = 18.0
    leaf_half_angle: float = 0.9
    leaf_tilt_deg: float = 30.0
    with_leaves: bool = True
    day_rate: float = DEFAULT_DAY_RATE
    night_rate: float = DEFAULT_NIGHT_RATE
    lights_on: float = DEFAULT_LIGHTS_ON
    lights_off: float = DEFAULT_LIGHTS_OFF
    seed: int = 0

    def __post_init__(self):
        if self.branch_count < 0 or self.stem_height <= 0 or self.stem_radius <= 0:
            raise PreconditionError("implausible plant dimensions")
        if self.branch_depth not in (0, 1, 2):
            raise PreconditionError("branch_depth must be 0, 1 or 2")
        if self.subbranch_count < 0:
            raise PreconditionError("subbranch_count must be non-negative")
        if not 0.0 < self.taper <= 1.0:
            raise PreconditionError("taper must lie in (0, 1]")
        if not 0.0 <= self.lights_on < self.lights_off <= 24.0:
            raise PreconditionError("lights_on/lights_off must order within a day")


PRESETS = {
    "default": PlantParams(),
    "calibration": PlantParams(stem_height=100.0, stem_radius=3.0,
                               branch_count=5, branch_length=45.0,
                               branch_radius=2.0, with_leaves=False),
    "rosette": PlantParams(stem_height=18.0, stem_radius=2.0, branch_count=5,
                           branch_length=35.0, branch_radius=1.2,
                           branch_elevation_deg=72.0, leaf_radius=15.0,
                           leaf_half_angle=1.0, leaf_tilt_deg=45.0),
    "tiny": PlantParams(stem_height=40.0, stem_radius=2.0, branch_count=4,
                        branch_length=20.0, branch_radius=1.2,
                        leaf_radius=8.0, leaf_half_angle=0.8),
    "bush": PlantParams(stem_height=70.0, stem_radius=2.5, branch_count=4,
                        branch_length=40.0, branch_radius=1.8,
                        branch_elevation_deg=55.0, branch_depth=2,
                        subbranch_count=2, with_leaves=False),
}


@dataclass(frozen=True)
class Plant:
    """A synthetic plant at one moment in time.

    `junctions` holds the ground-truth branch attachment points on the stem
    axis. `age_hours` counts from midnight of day 0 on the growth clock.
    """

    organs: tuple
    junctions: np.ndarray
    params: PlantParams
    age_hours: float = 0.0

    def __post_init__(self):
        j = np.ascontiguousarray(np.asarray(self.junctions, float))
        j.setflags(write=False)
        object.__setattr__(self, "junctions", j)

    @property
    def bbox(self):
        return bounding_box(np.concatenate([o.corners() for o in self.organs]))


def generate_plant(params: PlantParams | str = "default") -> Plant:
    """Build the plant described by `params` (or a preset name) at age 0."""
    if isinstance(params, str):
        try:
            params = PRESETS[params]
        except KeyError:
            raise PreconditionError(
                f"unknown preset {params!r}; choose from {sorted(PRESETS)}") from None
    rng = np.random.default_rng(params.seed)

    def tube(base, direction, radius, length):
        if params.taper == 1.0:
            return Cylinder(tuple(base), tuple(direction), radius, length)
        return Frustum(tuple(base), tuple(direction), radius,
                       radius * params.taper, length)

    organs = [tube((0.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                   params.stem_radius, params.stem_height)]
    junctions = []
    golden = math.radians(137.50776)
    branch_count = params.branch_count if params.branch_depth >= 1 else 0
    fractions = np.linspace(0.3, 0.9, branch_count)
    for i in range(branch_count):
        frac = fractions[i] + rng.uniform(-0.02, 0.02)
        attach = np.array([0.0, 0.0, frac * params.stem_height])
        azimuth = golden * i + rng.uniform(-0.15, 0.15)
        elev = math.radians(params.branch_elevation_deg + rng.uniform(-8.0, 8.0))
        direction = np.array([math.sin(elev) * math.cos(azimuth),
                              math.sin(elev) * math.sin(azimuth),
                              math.cos(elev)])
        length = params.branch_length * rng.uniform(0.85, 1.15)
        organs.append(tube(attach, direction, params.branch_radius, length))
        junctions.append(attach)
        if params.with_leaves:
            tip = attach + length * direction
            tilt = math.radians(params.leaf_tilt_deg + rng.uniform(-10.0, 10.0))
            up = np.array([0.0, 0.0, 1.0])
            side = _unit(np.cross(up, direction))
            leaf_axis = _unit(math.cos(tilt) * direction
                              + math.sin(tilt) * np.cross(side, direction))
            centre = tip - params.leaf_radius * leaf_axis
            organs.append(SphericalCap(tuple(centre), tuple(leaf_axis),
                                       params.leaf_radius,
                                       params.leaf_half_angle))
        if params.branch_depth >= 2:
            u, v = _frame(direction)
            # attachments stay clear of the branch tip so the parent axis
            # remains well constrained on both sides of each junction
            sub_fracs = np.linspace(0.35, 0.6, max(params.subbranch_count, 1))
            for j in range(params.subbranch_count):
                sfrac = sub_fracs[j] + rng.uniform(-0.03, 0.03)
                sub_attach = attach + sfrac * length * direction
                sphi = rng.uniform(0.0, 2.0 * math.pi)
                selev = math.radians(50.0 + rng.uniform(-10.0, 10.0))
                sub_dir = _unit(math.cos(selev) * direction
                                + math.sin(selev) * (math.cos(sphi) * u
                                                     + math.sin(sphi) * v))
                if sub_dir[2] < 0.05:
                    # keep branchlets from stabbing the ground plane
                    sub_dir = _unit(sub_dir + np.array([0.0, 0.0, 0.3]))
                sub_len = (params.branch_length * params.subbranch_length_scale
                           * rng.uniform(0.8, 1.2))
                organs.append(tube(sub_attach, sub_dir,
                                   params.branch_radius * params.subbranch_radius_scale,
                                   sub_len))
                junctions.append(sub_attach)
    return Plant(tuple(organs), np.array(junctions).reshape(-1, 3), params, 0.0)


# ---------------------------------------------------------------------------
# growth model


def _phase_is_day(params: PlantParams, hour: float) -> bool:
    clock = hour % 24.0
    return params.lights_on <= clock < params.lights_off


def growth_exponent(params: PlantParams, t0_hours: float, t1_hours: float) -> float:
    """Integral of the phase rate over [t0, t1], in rate-days.

    Volume multiplies by exp(E) over the interval, area by exp(2E/3) and
    lengths by exp(E/3).
    """
    if t1_hours < t0_hours:
        raise PreconditionError("time must not run backwards")
    total = 0.0
    t = t0_hours
    while t < t1_hours - 1e-12:
        clock = t % 24.0
        bounds = [b for b in (params.lights_on, params.lights_off, 24.0)
                  if b > clock + 1e-12]
        seg_end = min(t - clock + min(bounds), t1_hours)
        rate = params.day_rate if _phase_is_day(params, t) else params.night_rate
        total += rate * (seg_end - t) / 24.0
        t = seg_end
    return total


def grow_to(plant: Plant, age_hours: float) -> Plant:
    """Plant uniformly scaled to the given age (may be before or after)."""
    e = (growth_exponent(plant.params, plant.age_hours, age_hours)
         if age_hours >= plant.age_hours
         else -growth_exponent(plant.params, age_hours, plant.age_hours))
    s = math.exp(e / 3.0)
    origin = np.zeros(3)
    organs = tuple(o.scaled(origin, s) for o in plant.organs)
    junctions = plant.junctions * s
    return Plant(organs, junctions, plant.params, age_hours)


def grow_step(plant: Plant, dt_hours: float, day_rate: float | None = None,
              night_rate: float | None = None, phase: str | None = None) -> Plant:
    """Advance the plant by one interval at a single phase's rate.

    The step multiplies volume by exp(rate * dt / 24), so linear dimensions
    scale by the cube root of that factor; `phase` defaults to whatever the
    light schedule says at the plant's current age. Composing steps whose
    phases follow the schedule reproduces `grow_to` exactly.
    """
    if not dt_hours > 0 or not math.isfinite(dt_hours):
        raise PreconditionError("dt_hours must be positive and finite")
    params = plant.params
    day = params.day_rate if day_rate is None else day_rate
    night = params.night_rate if night_rate is None else night_rate
    if phase is None:
        phase = "day" if _phase_is_day(params, plant.age_hours) else "night"
    if phase not in ("day", "night"):
        raise PreconditionError(f"phase must be 'day' or 'night', got {phase!r}")
    rate = day if phase == "day" else night
    if not math.isfinite(rate):
        raise PreconditionError("growth rate must be finite")
    s = math.exp(rate * dt_hours / 24.0 / 3.0)
    origin = np.zeros(3)
    organs = tuple(o.scaled(origin, s) for o in plant.organs)
    return Plant(organs, plant.junctions * s, params,
                 plant.age_hours + dt_hours)


def total_surface_area(plant: Plant) -> float:
    """Closed-surface area of all organs (leaf blades count both sides)."""
    return sum(o.surface_area for o in plant.organs)


def total_volume(plant: Plant) -> float:
    """Solid volume of all organs (thin leaf blades contribute none)."""
    return sum(o.volume for o in plant.organs)


def distance_to_surface(plant: Plant, points) -> np.ndarray:
    """Distance from each query point to the nearest organ surface."""
    pts = np.atleast_2d(np.asarray(points, float))
    return np.min(np.stack([o.distance(pts) for o in plant.organs]), axis=0)


def surface_sample(plant: Plant, n: int, rng: np.random.Generator):
    """Uniform samples over the plant surface with outward normals.

    Leaf blades are sampled on their geometric (one-sided) surface; their
    normals describe the convex side, and visibility checks treat both signs
    as valid.

    Returns:
        (points (n, 3), normals (n, 3)).
    """
    areas = np.array([o.one_sided_area if isinstance(o, SphericalCap)
                      else o.surface_area for o in plant.organs])
    counts = rng.multinomial(n, areas / areas.sum())
    pts, nrm = [], []
    for organ, cnt in zip(plant.organs, counts):
        if cnt:
            p, v = organ.sample(int(cnt), rng)
            pts.append(p)
            nrm.append(v)
    return np.vstack(pts), np.vstack(nrm)


# ---------------------------------------------------------------------------
# virtual scanner


@dataclass(frozen=True)
class ScannerModel:
    """Acquisition geometry of the turntable laser scanner.

    The scan raster is limited to `fov_width` horizontally by the linear
    stage; a wider plant is covered by up to `max_partials` side-by-side
    partial scans that merge into one cloud. `standoff` is the scanner's
    distance from the plant centre, `pedestal_standoff` its distance from
    the pedestal edge (kept for provenance; rays are parallel, so only the
    centre standoff enters the geometry). `jitter_sigma` adds one coherent
    random offset per scan, modelling air movement; it stays off unless
    asked for.
    """

    resolution: float = DEFAULT_SCAN_RESOLUTION
    fov_width: float = DEFAULT_FIELD_OF_VIEW
    noise_sigma: float = DEFAULT_RANGE_NOISE
    standoff: float = 560.0
    pedestal_standoff: float = 260.0
    jitter_sigma: float = 0.0
    max_partials: int = 3

    def __post_init__(self):
        if self.resolution <= 0 or self.fov_width <= 0:
            raise PreconditionError("resolution and fov_width must be positive")
        if self.noise_sigma < 0 or self.jitter_sigma < 0:
            raise PreconditionError("noise sigmas must be non-negative")
        if self.standoff <= 0 or self.max_partials < 1:
            raise PreconditionError("standoff and max_partials must be positive")


@dataclass(frozen=True)
class VirtualScan:
    """One rendered view: the cloud in its own view frame plus metadata.

    `partials` counts the side-by-side windows merged to cover the plant;
    `clipped` warns that even the maximum number could not cover it.
    """

    cloud: PointCloud
    angle: float
    clipped: bool
    partials: int = 1


def view_rotation(angle: float) -> np.ndarray:
    """World-to-view rotation about the vertical axis."""
    c, s = math.cos(-angle), math.sin(-angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def turntable_priors(num_views: int, centre) -> list:
    """Rigid transforms mapping each view frame back into the world frame."""
    centre = np.asarray(centre, float)
    out = []
    for k in range(num_views):
        angle = 2.0 * math.pi * k / num_views
        out.append(RigidTransform.about_axis(centre, np.array([0.0, 0.0, 1.0]),
                                             angle))
    return out


def _ray_cast(plant: Plant, origins: np.ndarray, direction: np.ndarray):
    t = np.full(origins.shape[0], np.inf)
    for organ in plant.organs:
        t = np.minimum(t, organ.ray_hits(origins, direction))
    return t


def _partial_windows(y_lo: float, y_hi: float, model: ScannerModel):
    """Split a horizontal span into side-by-side scan windows.

    Windows are half-open and anchored at the left edge, so their grids
    abut without duplicated columns. Returns (windows, clipped) where a
    True `clipped` flag means even `max_partials` windows fall short.
    """
    width = y_hi - y_lo
    needed = max(1, math.ceil(width / model.fov_width - 1e-9))
    clipped = needed > model.max_partials
    count = min(needed, model.max_partials)
    windows = []
    for j in range(count):
        w_lo = y_lo + j * model.fov_width
        w_hi = min(w_lo + model.fov_width, y_hi)
        windows.append((w_lo, w_hi))
    return windows, clipped


def virtual_scan(plant: Plant, angle: float, rng: np.random.Generator,
                 model: ScannerModel | None = None,
                 view_id: int | None = None,
                 timestamp: float | None = None) -> VirtualScan:
    """Render one orthographic side view of the plant.

    The scanner orbits the vertical axis through the bounding-box centre;
    `angle` = 0 looks along -x of the world frame and reports points in world
    coordinates, any other angle reports them in the rotated view frame.
    Rays march on the model's resolution grid; the horizontal extent of one
    window is the model's field of view, and a wider plant is covered by
    side-scans merged into the same cloud (`partials` tells how many). A
    plant too wide even for the maximum number of side-scans comes back with
    `clipped` set.
    """
    if model is None:
        model = ScannerModel()
    res = model.resolution
    box = plant.bbox
    centre = box.centre
    rot = view_rotation(angle)          # world -> view
    rot_back = rot.T                    # view -> world

    # silhouette extents in the view frame, centre at the origin
    corners = np.concatenate([o.corners() for o in plant.organs])
    view_pts = (corners - centre) @ rot.T
    lo = view_pts.min(axis=0)
    hi = view_pts.max(axis=0)
    pad = 2.0 * res
    windows, clipped = _partial_windows(lo[1] - pad, hi[1] + pad, model)

    zs = np.arange(lo[2] - pad, hi[2] + pad + res / 2.0, res)
    x_start = max(model.standoff, hi[0] + 10.0)
    direction_view = np.array([-1.0, 0.0, 0.0])
    direction = rot_back @ direction_view

    jitter = (rng.normal(0.0, model.jitter_sigma, 3)
              if model.jitter_sigma > 0 else None)

    pieces = []
    for w_lo, w_hi in windows:
        ys = np.arange(w_lo, w_hi, res)
        if ys.size == 0:
            continue
        yy, zz = np.meshgrid(ys, zs, indexing="ij")
        origins_view = np.column_stack([np.full(yy.size, x_start),
                                        yy.ravel(), zz.ravel()])
        origins = centre + origins_view @ rot_back.T
        t = _ray_cast(plant, origins, direction)
        hit = np.isfinite(t)
        if not hit.any():
            continue
        t = t[hit]
        if model.noise_sigma > 0:
            t = t + rng.normal(0.0, model.noise_sigma, t.size)
        pieces.append(origins[hit] + t[:, None] * direction)
    if not pieces:
        raise PreconditionError("scan window misses the plant entirely")
    world = np.vstack(pieces)
    view = (world - centre) @ rot.T + centre
    if jitter is not None:
        view = view + jitter
    cloud = PointCloud(view, None, view_id, timestamp)
    return VirtualScan(cloud, angle, clipped, len(windows))


def scan_session(plant: Plant, num_views: int, seed: int, session_index: int,
                 model: ScannerModel | None = None,
                 timestamp: float | None = None) -> list:
    """Scan the plant from `num_views` evenly spaced angles.

    Each view draws from its own generator seeded with (seed, session index,
    view index), so sessions and views are reproducible independently.
    """
    if num_views < 1:
        raise PreconditionError("need at least one view")
    scans = []
    for k in range(num_views):
        rng = np.random.default_rng([seed, session_index, k])
        angle = 2.0 * math.pi * k / num_views
        scans.append(virtual_scan(plant, angle, rng, model,
                                  view_id=k, timestamp=timestamp))
    return scans


def visible_surface_mask(plant: Plant, samples: np.ndarray, normals: np.ndarray,
                         angles, model: ScannerModel | None = None,
                         grazing_limit_deg: float = DEFAULT_GRAZING_LIMIT_DEG) -> np.ndarray:
    """Which surface samples any of the given views can actually record.

    A sample counts as visible from a view when it sits inside one of the
    view's scan windows, the ray back toward the scanner is unobstructed,
    and the surface is not tilted past the grazing limit (both normal signs
    are allowed, so thin blades are visible from either side).
    """
    if model is None:
        model = ScannerModel()
    box = plant.bbox
    centre = box.centre
    corners = np.concatenate([o.corners() for o in plant.organs])
    cos_limit = math.cos(math.radians(grazing_limit_deg))
    pad = 2.0 * model.resolution
    visible = np.zeros(samples.shape[0], bool)
    for angle in np.atleast_1d(np.asarray(angles, float)):
        rot = view_rotation(angle)
        to_scanner = rot.T @ np.array([1.0, 0.0, 0.0])
        facing = np.abs(normals @ to_scanner) >= cos_limit
        view = (samples - centre) @ rot.T
        view_extent = (corners - centre) @ rot.T
        windows, _ = _partial_windows(view_extent[:, 1].min() - pad,
                                      view_extent[:, 1].max() + pad, model)
        in_window = np.zeros(samples.shape[0], bool)
        for w_lo, w_hi in windows:
            in_window |= (view[:, 1] >= w_lo) & (view[:, 1] <= w_hi)
        candidates = np.nonzero(facing & in_window & ~visible)[0]
        if candidates.size == 0:
            continue
        starts = samples[candidates] + 1e-4 * to_scanner
        t = _ray_cast(plant, starts, to_scanner)
        visible[candidates] = ~np.isfinite(t)
    return visible


def surface_coverage(samples: np.ndarray, cloud: PointCloud,
                     tolerance: float) -> float:
    """Fraction of surface samples with a cloud point within `tolerance`."""
    from scipy.spatial import cKDTree

    d, _ = cKDTree(cloud.points).query(samples)
    return float((d <= tolerance).mean())
