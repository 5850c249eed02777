"""Experiment manifests and result documents.

A manifest is a small JSON file describing one simulated experiment: which
plant, how many sessions and views, scanner settings, reconstruction alpha.
Results are written as a single JSON document that embeds the manifest it
came from. Serialization is deliberately stable (sorted keys, no wall-clock
fields), so re-running the same manifest yields byte-identical output.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, PreconditionError
from .meshing import DEFAULT_ALPHA
from .registration import DEFAULT_DOWNSAMPLE_CELL
from .synthscan import (DEFAULT_FIELD_OF_VIEW, DEFAULT_LIGHTS_OFF,
                        DEFAULT_LIGHTS_ON, DEFAULT_RANGE_NOISE,
                        DEFAULT_SCAN_RESOLUTION, PRESETS, PlantParams,
                        ScannerModel)

MANIFEST_SCHEMA = "phytoscan-manifest/1"
RESULTS_SCHEMA = "phytoscan-results/1"


@dataclass(frozen=True)
class Manifest:
    """Validated experiment description."""

    name: str = "experiment"
    seed: int = 0
    preset: str = "default"
    sessions: int = 18
    session_interval_hours: float = 4.0
    start_hour: float = DEFAULT_LIGHTS_ON
    views: int = 12
    resolution: float = DEFAULT_SCAN_RESOLUTION
    noise: float = DEFAULT_RANGE_NOISE
    fov: float = DEFAULT_FIELD_OF_VIEW
    alpha: float = DEFAULT_ALPHA
    lights_on: float = DEFAULT_LIGHTS_ON
    lights_off: float = DEFAULT_LIGHTS_OFF
    downsample_cell: float = DEFAULT_DOWNSAMPLE_CELL
    drop_sessions: tuple = ()
    plant_overrides: tuple = ()   # sorted (field, value) pairs

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise PreconditionError(
                f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.sessions < 1 or self.views < 1:
            raise PreconditionError("sessions and views must be at least 1")
        if self.session_interval_hours <= 0 or self.resolution <= 0:
            raise PreconditionError("interval and resolution must be positive")
        if self.noise < 0 or self.alpha <= 0 or self.fov <= 0:
            raise PreconditionError("bad noise, alpha or field of view")
        bad = [i for i in self.drop_sessions
               if not 0 <= i < self.sessions]
        if bad:
            raise PreconditionError(f"drop_sessions out of range: {bad}")
        self.plant_params()   # fail early on bad overrides

    def plant_params(self) -> PlantParams:
        """Plant settings: the preset plus any overrides, photoperiod, seed."""
        base = PRESETS[self.preset]
        fields = {f.name for f in dataclasses.fields(PlantParams)}
        overrides = dict(self.plant_overrides)
        unknown = set(overrides) - fields
        if unknown:
            raise PreconditionError(
                f"unknown plant override(s): {sorted(unknown)}")
        return dataclasses.replace(base, seed=self.seed,
                                   lights_on=self.lights_on,
                                   lights_off=self.lights_off, **overrides)

    def scanner_model(self) -> ScannerModel:
        return ScannerModel(resolution=self.resolution,
                            fov_width=self.fov, noise_sigma=self.noise)

    def session_clock(self) -> np.ndarray:
        return self.start_hour + self.session_interval_hours * np.arange(
            self.sessions, dtype=float)

    def to_dict(self) -> dict:
        d = {
            "schema": MANIFEST_SCHEMA,
            "name": self.name,
            "seed": self.seed,
            "preset": self.preset,
            "sessions": self.sessions,
            "session_interval_hours": self.session_interval_hours,
            "start_hour": self.start_hour,
            "views": self.views,
            "scan": {"resolution": self.resolution, "noise": self.noise,
                     "fov": self.fov},
            "alpha": self.alpha,
            "photoperiod": {"lights_on": self.lights_on,
                            "lights_off": self.lights_off},
            "registration": {"downsample_cell": self.downsample_cell},
        }
        if self.drop_sessions:
            d["drop_sessions"] = list(self.drop_sessions)
        if self.plant_overrides:
            d["plant"] = dict(self.plant_overrides)
        return d


def _pop(table: dict, key: str, kind, default, path):
    value = table.pop(key, default)
    if value is default and key not in table:
        return default
    try:
        if kind is int and isinstance(value, bool):
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        raise ParseError(path, 1, f"field {key!r} must be a {kind.__name__}") from None


def manifest_from_dict(data: dict, path="<manifest>") -> Manifest:
    """Build and validate a Manifest from parsed JSON."""
    if not isinstance(data, dict):
        raise ParseError(path, 1, "manifest must be a JSON object")
    table = dict(data)
    schema = table.pop("schema", MANIFEST_SCHEMA)
    if schema != MANIFEST_SCHEMA:
        raise ParseError(path, 1,
                         f"unsupported schema {schema!r}, wanted {MANIFEST_SCHEMA!r}")
    scan = table.pop("scan", {})
    photo = table.pop("photoperiod", {})
    reg = table.pop("registration", {})
    plant = table.pop("plant", {})
    for section, name in ((scan, "scan"), (photo, "photoperiod"),
                          (reg, "registration"), (plant, "plant")):
        if not isinstance(section, dict):
            raise ParseError(path, 1, f"section {name!r} must be a JSON object")
    scan, photo, reg = dict(scan), dict(photo), dict(reg)

    drops = table.pop("drop_sessions", [])
    if (not isinstance(drops, list)
            or any(not isinstance(i, int) or isinstance(i, bool) for i in drops)):
        raise ParseError(path, 1, "drop_sessions must be a list of integers")

    kwargs = dict(
        name=_pop(table, "name", str, "experiment", path),
        seed=_pop(table, "seed", int, 0, path),
        preset=_pop(table, "preset", str, "default", path),
        sessions=_pop(table, "sessions", int, 18, path),
        session_interval_hours=_pop(table, "session_interval_hours", float, 4.0, path),
        start_hour=_pop(table, "start_hour", float, DEFAULT_LIGHTS_ON, path),
        views=_pop(table, "views", int, 12, path),
        resolution=_pop(scan, "resolution", float, DEFAULT_SCAN_RESOLUTION, path),
        noise=_pop(scan, "noise", float, DEFAULT_RANGE_NOISE, path),
        fov=_pop(scan, "fov", float, DEFAULT_FIELD_OF_VIEW, path),
        alpha=_pop(table, "alpha", float, DEFAULT_ALPHA, path),
        lights_on=_pop(photo, "lights_on", float, DEFAULT_LIGHTS_ON, path),
        lights_off=_pop(photo, "lights_off", float, DEFAULT_LIGHTS_OFF, path),
        downsample_cell=_pop(reg, "downsample_cell", float,
                             DEFAULT_DOWNSAMPLE_CELL, path),
        drop_sessions=tuple(sorted(set(drops))),
        plant_overrides=tuple(sorted(plant.items())),
    )
    leftovers = sorted(set(table) | set(scan) | set(photo) | set(reg))
    if leftovers:
        raise ParseError(path, 1, f"unknown manifest field(s): {leftovers}")
    try:
        return Manifest(**kwargs)
    except PreconditionError as exc:
        raise ParseError(path, 1, str(exc)) from None


def load_manifest(path) -> Manifest:
    """Read and validate a manifest file."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg) from None
    return manifest_from_dict(data, path)


def save_json(document: dict, path) -> None:
    """Write a JSON document with stable formatting."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg) from None


def session_record(index: int, time_hours: float, *, missing: bool = False,
                   surface_area: float | None = None,
                   volume: float | None = None,
                   watertight: bool | None = None,
                   sweeps: int | None = None,
                   warnings=(), error: str | None = None) -> dict:
    """Canonical per-session entry for the results document."""
    rec = {"index": int(index), "time_hours": float(time_hours)}
    if missing:
        rec["missing"] = True
        if error is not None:
            rec["error"] = str(error)
        return rec
    rec["surface_area"] = float(surface_area)
    rec["volume"] = float(volume)
    if watertight is not None:
        rec["watertight"] = bool(watertight)
    if sweeps is not None:
        rec["merge_sweeps"] = int(sweeps)
    if warnings:
        rec["warnings"] = list(warnings)
    return rec


def results_document(man: Manifest | None, sessions, analysis=None) -> dict:
    """Assemble the full results document.

    `analysis` is a SeriesAnalysis; it lands in a JSON-friendly summary
    block. Output contains nothing time-of-run dependent. `man` may be None
    when the measurements did not come from a manifest run.
    """
    doc = {
        "schema": RESULTS_SCHEMA,
        "sessions": list(sessions),
    }
    if man is not None:
        doc["manifest"] = man.to_dict()
    if analysis is not None:
        doc["analysis"] = {
            "surface_area": {
                "rate_per_day": analysis.area_rate,
                "fit_intercept": analysis.area_fit.intercept,
                "fit_residual_rms": analysis.area_fit.residual_rms,
                "day_gain": analysis.area_diurnal.day_gain,
                "night_gain": analysis.area_diurnal.night_gain,
                "night_day_ratio": analysis.area_diurnal.ratio,
            },
            "volume": {
                "rate_per_day": analysis.volume_rate,
                "fit_intercept": analysis.volume_fit.intercept,
                "fit_residual_rms": analysis.volume_fit.residual_rms,
                "day_gain": analysis.volume_diurnal.day_gain,
                "night_gain": analysis.volume_diurnal.night_gain,
                "night_day_ratio": analysis.volume_diurnal.ratio,
            },
            "imputed_sessions": sorted(
                set(map(int, analysis.area_imputed.nonzero()[0]))
                | set(map(int, analysis.volume_imputed.nonzero()[0]))),
        }
    return doc
