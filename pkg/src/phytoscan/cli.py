"""Command line front end.

Subcommands cover the whole workflow: `simulate` renders synthetic scan
sessions to disk, `align` merges the views of one session, `mesh` turns a
merged cloud into a measured surface, `analyze` runs the growth statistics
on a measurement series, and `pipeline` chains everything from a manifest.

Exit codes: 0 success, 2 bad arguments or parameters, 3 data problems
(unreadable scans, failed registrations, degenerate geometry), 4 I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cloudcore import bounding_box, load_cloud, save_cloud
from .errors import (DataQualityError, NoAlignmentError, ParseError,
                     PreconditionError)
from .growth import analyze_series
from .junctions import RigidTransform, rough_align
from .manifest import (Manifest, load_manifest, results_document, save_json,
                       session_record)
from .meshing import DEFAULT_ALPHA, alpha_shape, save_off
from .registration import CpdConfig, align_multiview
from .report import render_report
from .synthscan import (ScannerModel, generate_plant, grow_to, scan_session,
                        total_surface_area, total_volume, turntable_priors)

_NUM = "{:.9g}".format


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except PreconditionError as exc:
        print(f"phytoscan: {exc}", file=sys.stderr)
        return 2
    except DataQualityError as exc:
        print(f"phytoscan: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"phytoscan: {exc}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phytoscan",
        description="3D plant scanning, reconstruction and growth analysis")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate",
                         help="render synthetic scan sessions to disk")
    sim.add_argument("--manifest", type=Path,
                     help="experiment manifest (JSON); flags below override it")
    sim.add_argument("--out", type=Path, required=True, help="output directory")
    _manifest_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    ali = sub.add_parser("align", help="merge the views of one scan session")
    ali.add_argument("--scans", nargs="+", type=Path, required=True,
                     help="scan files, or one directory of them")
    ali.add_argument("--out", type=Path, required=True,
                     help="merged cloud (.xyz or .ply)")
    ali.add_argument("--report", type=Path, help="write a JSON merge report")
    ali.add_argument("--prior", choices=("auto", "features", "turntable"),
                     default="auto",
                     help="rough alignment strategy (default: features, "
                          "falling back to evenly spaced turntable angles)")
    ali.add_argument("--cell", type=float, default=CpdConfig().downsample_cell,
                     help="voxel size for registration thinning [mm]")
    ali.add_argument("--strict", action="store_true",
                     help="treat overlap warnings as errors")
    ali.set_defaults(func=cmd_align)

    msh = sub.add_parser("mesh", help="reconstruct and measure a merged cloud")
    msh.add_argument("--cloud", type=Path, required=True)
    alpha_group = msh.add_mutually_exclusive_group()
    alpha_group.add_argument("--alpha", type=float, default=None,
                             help="squared circumradius cutoff [mm^2] "
                                  f"(default {DEFAULT_ALPHA})")
    alpha_group.add_argument("--alpha-radius", type=float, default=None,
                             help="the same cutoff given as a radius [mm]; "
                                  "its square is used")
    msh.add_argument("--out", type=Path, help="surface mesh (.off)")
    msh.add_argument("--report", type=Path, help="write a JSON measurement report")
    msh.add_argument("--strict", action="store_true",
                     help="fail when the surface is not watertight")
    msh.set_defaults(func=cmd_mesh)

    ana = sub.add_parser("analyze", help="growth statistics for a series")
    ana.add_argument("--measurements", type=Path, required=True,
                     help="CSV with time_hours, surface_area, volume columns; "
                          "blank cells mark missing sessions")
    ana.add_argument("--out", type=Path, required=True, help="output directory")
    ana.add_argument("--photoperiod", type=_photoperiod,
                     default=(6.0, 18.0), metavar="ON:OFF",
                     help="lights-on and lights-off hours (default 6:18)")
    ana.set_defaults(func=cmd_analyze)

    pipe = sub.add_parser("pipeline",
                          help="simulate, merge, mesh and analyze end to end")
    pipe.add_argument("--manifest", type=Path,
                      help="experiment manifest (JSON); flags below override it")
    pipe.add_argument("--out", type=Path, required=True, help="output directory")
    _manifest_flags(pipe)
    pipe.add_argument("--jobs", type=int, default=1,
                      help="parallel worker processes for the sessions")
    pipe.add_argument("--resume", action="store_true",
                      help="reuse cached per-session measurements")
    pipe.add_argument("--save-meshes", action="store_true",
                      help="keep a .off mesh per session")
    pipe.add_argument("--strict", action="store_true",
                      help="fail on warnings or open surfaces")
    pipe.set_defaults(func=cmd_pipeline)
    return parser


def _manifest_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--preset", help="plant preset name")
    count = sp.add_mutually_exclusive_group()
    count.add_argument("--sessions", type=int)
    count.add_argument("--days", type=int,
                       help="experiment length; shorthand for 6 sessions/day")
    sp.add_argument("--views", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--resolution", type=float, help="ray grid spacing [mm]")
    sp.add_argument("--noise", type=float, help="range noise sigma [mm]")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--photoperiod", type=_photoperiod, metavar="ON:OFF")
    sp.add_argument("--drop", type=_int_list, metavar="I,J,...",
                    help="session indices to skip, simulating lost sessions")


def _photoperiod(text: str):
    parts = re.split("[:,]", text)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected ON:OFF hours, e.g. 6:18")
    try:
        on, off = float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad photoperiod {text!r}") from None
    return on, off


def _int_list(text: str):
    try:
        return tuple(int(p) for p in text.split(",") if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad index list {text!r}") from None


def _effective_manifest(args) -> Manifest:
    man = load_manifest(args.manifest) if args.manifest else Manifest()
    updates = {}
    for flag, field in (("preset", "preset"), ("sessions", "sessions"),
                        ("views", "views"), ("seed", "seed"),
                        ("resolution", "resolution"), ("noise", "noise"),
                        ("alpha", "alpha"), ("drop", "drop_sessions")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[field] = value
    days = getattr(args, "days", None)
    if days is not None:
        if days < 1:
            raise PreconditionError("--days must be at least 1")
        updates["sessions"] = 6 * days
    photo = getattr(args, "photoperiod", None)
    if photo is not None:
        updates["lights_on"], updates["lights_off"] = photo
    return dataclasses.replace(man, **updates) if updates else man


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    man = _effective_manifest(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    save_json(man.to_dict(), out / "manifest.json")

    plant0 = generate_plant(man.plant_params())
    times = man.session_clock()
    dropped = set(man.drop_sessions)

    truth_sessions = []
    with open(out / "truth.csv", "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_hours", "surface_area", "volume"])
        for i, t in enumerate(times):
            grown = grow_to(plant0, float(t))
            area = total_surface_area(grown)
            volume = total_volume(grown)
            writer.writerow([_NUM(t), _NUM(area), _NUM(volume)])
            truth_sessions.append({
                "index": i,
                "time_hours": float(t),
                "surface_area_mm2": area,
                "volume_mm3": volume,
                "junctions_mm": [[float(c) for c in row]
                                 for row in grown.junctions],
            })
    params = man.plant_params()
    save_json({
        "schema": "phytoscan-truth/1",
        "name": man.name,
        "growth": {"day_rate": params.day_rate,
                   "night_rate": params.night_rate},
        "sessions": truth_sessions,
    }, out / "truth.json")

    written = 0
    for i, t in enumerate(times):
        if i in dropped:
            print(f"session {i}: dropped")
            continue
        grown = grow_to(plant0, float(t))
        scans = scan_session(grown, man.views, man.seed, i,
                             man.scanner_model(), timestamp=float(t))
        sdir = out / f"session_{i:03d}"
        sdir.mkdir(exist_ok=True)
        sizes = []
        for scan in scans:
            save_cloud(scan.cloud, sdir / f"view_{scan.cloud.view_id:02d}.xyz")
            sizes.append(len(scan.cloud))
        clip = sum(s.clipped for s in scans)
        note = f", {clip} view(s) clipped by the scan window" if clip else ""
        partials = max(s.partials for s in scans)
        if partials > 1:
            note += f", up to {partials} partial scans per view"
        print(f"session {i}: t={t:g}h, {len(scans)} views, "
              f"{min(sizes)}..{max(sizes)} points{note}")
        written += 1
    print(f"wrote {written} session(s), truth.csv and truth.json to {out}")
    return 0


# ---------------------------------------------------------------------------
# align


def _scan_files(paths) -> list:
    if len(paths) == 1 and paths[0].is_dir():
        found = sorted(paths[0].glob("*.xyz")) + sorted(paths[0].glob("*.ply"))
        if not found:
            raise PreconditionError(f"no .xyz or .ply scans in {paths[0]}")
        return found
    return list(paths)


def cmd_align(args) -> int:
    files = _scan_files(args.scans)
    if len(files) < 2:
        raise PreconditionError("merging needs at least two scans")
    clouds = [load_cloud(f, view_id=i) for i, f in enumerate(files)]

    rough = None
    if args.prior in ("auto", "features"):
        try:
            rough = [RigidTransform.identity()]
            for k in range(1, len(clouds)):
                rough.append(rough_align(clouds[0], clouds[k]).transform)
        except NoAlignmentError as exc:
            if args.prior == "features":
                raise
            print(f"feature alignment failed ({exc}); "
                  "falling back to turntable angles", file=sys.stderr)
            rough = None
    if rough is None:
        centre = np.mean([bounding_box(c).centre for c in clouds], axis=0)
        rough = turntable_priors(len(clouds), centre)

    config = CpdConfig(downsample_cell=args.cell)
    result = align_multiview(clouds, rough, config)
    save_cloud(result.merged, args.out)

    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"merged {len(clouds)} scans into {args.out}: "
          f"{len(result.merged)} points, {result.sweeps} sweep(s), "
          f"final mean displacement {result.final_mean_displacement:.4g} mm")
    if args.report:
        save_json({
            "scans": [f.name for f in files],
            "sweeps": result.sweeps,
            "final_mean_displacement": result.final_mean_displacement,
            "warnings": list(result.warnings),
            "per_scan": [{
                "view_id": r.view_id,
                "iterations": r.iterations,
                "sigma2": r.sigma2,
                "mean_displacement": r.mean_displacement,
                "converged": r.converged,
            } for r in result.registrations],
        }, args.report)
    if args.strict and result.warnings:
        print("phytoscan: overlap warnings in strict mode", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# mesh


def cmd_mesh(args) -> int:
    if args.alpha_radius is not None:
        alpha = args.alpha_radius ** 2
    elif args.alpha is not None:
        alpha = args.alpha
    else:
        alpha = DEFAULT_ALPHA
    cloud = load_cloud(args.cloud)
    shape = alpha_shape(cloud.points, alpha)
    if args.out:
        save_off(shape.mesh, args.out)
    state = "watertight" if shape.watertight else "open"
    print(f"{args.cloud.name}: area {shape.surface_area:.6g} mm^2, "
          f"volume {shape.volume:.6g} mm^3, {state} surface "
          f"({shape.mesh.faces.shape[0]} triangles)")
    if args.report:
        save_json({
            "cloud": args.cloud.name,
            "alpha": shape.alpha,
            "surface_area": shape.surface_area,
            "volume": shape.volume,
            "watertight": shape.watertight,
            "vertices": int(shape.mesh.vertices.shape[0]),
            "triangles": int(shape.mesh.faces.shape[0]),
        }, args.report)
    if args.strict and not shape.watertight:
        print("phytoscan: surface not watertight in strict mode", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# analyze


def _read_measurements(path: Path):
    times, areas, volumes = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(path, 1, "empty measurement file")
        cols = {}
        for want in ("time_hours", "surface_area", "volume"):
            match = [c for c in reader.fieldnames if c == want
                     or c.startswith(want + "_")]
            if not match:
                raise ParseError(path, 1, f"missing column {want!r}")
            cols[want] = match[0]
        for line_no, row in enumerate(reader, start=2):
            try:
                times.append(float(row[cols["time_hours"]]))
            except (TypeError, ValueError):
                raise ParseError(path, line_no, "bad time value") from None
            for name, dest in (("surface_area", areas), ("volume", volumes)):
                raw = (row[cols[name]] or "").strip()
                if raw == "" or raw.lower() == "nan":
                    dest.append(math.nan)
                    continue
                try:
                    dest.append(float(raw))
                except ValueError:
                    raise ParseError(path, line_no,
                                     f"bad {name} value {raw!r}") from None
    return np.array(times), np.array(areas), np.array(volumes)


def cmd_analyze(args) -> int:
    times, areas, volumes = _read_measurements(args.measurements)
    if times.size < 4:
        raise PreconditionError(
            f"growth analysis needs at least four sessions, got {times.size}")
    on, off = args.photoperiod
    analysis = analyze_series(times, areas, volumes, on, off)
    paths = render_report(analysis, args.out)

    records = []
    for i in range(times.size):
        if math.isnan(areas[i]) and math.isnan(volumes[i]):
            records.append(session_record(i, times[i], missing=True))
        else:
            records.append(session_record(i, times[i],
                                          surface_area=analysis.areas[i],
                                          volume=analysis.volumes[i]))
    save_json(results_document(None, records, analysis),
              Path(args.out) / "results.json")

    _print_analysis(analysis)
    print("report files: " + ", ".join(str(p) for p in paths))
    return 0


def _print_analysis(analysis) -> None:
    print(f"surface area rate {analysis.area_rate:+.4f}/day, "
          f"volume rate {analysis.volume_rate:+.4f}/day")
    for label, d in (("area", analysis.area_diurnal),
                     ("volume", analysis.volume_diurnal)):
        ratio = "n/a" if d.ratio is None else f"{d.ratio:.3f}"
        print(f"{label}: day gain {d.day_gain:.6g}, night gain "
              f"{d.night_gain:.6g}, night/day ratio {ratio}")


# ---------------------------------------------------------------------------
# pipeline


def measure_session(man: Manifest, index: int, mesh_path: str | None = None) -> dict:
    """Scan, merge and measure one session of a manifest experiment.

    The merge uses the known turntable geometry for its rough alignment;
    feature-based alignment is exercised through the `align` command.
    """
    plant0 = generate_plant(man.plant_params())
    t = float(man.session_clock()[index])
    grown = grow_to(plant0, t)
    scans = scan_session(grown, man.views, man.seed, index,
                         man.scanner_model(), timestamp=t)
    clouds = [s.cloud for s in scans]
    if len(clouds) == 1:
        merged = clouds[0]
        sweeps, warnings = 0, ()
    else:
        priors = turntable_priors(man.views, grown.bbox.centre)
        config = CpdConfig(downsample_cell=man.downsample_cell)
        result = align_multiview(clouds, priors, config)
        merged, sweeps, warnings = result.merged, result.sweeps, result.warnings
    shape = alpha_shape(merged.points, man.alpha)
    if mesh_path:
        save_off(shape.mesh, mesh_path)
    return session_record(index, t, surface_area=shape.surface_area,
                          volume=shape.volume, watertight=shape.watertight,
                          sweeps=sweeps, warnings=warnings)


def _measure_worker(man_dict: dict, index: int, mesh_path: str | None) -> dict:
    from .manifest import manifest_from_dict

    return measure_session(manifest_from_dict(man_dict), index, mesh_path)


def cmd_pipeline(args) -> int:
    man = _effective_manifest(args)
    out: Path = args.out
    cache = out / "cache"
    cache.mkdir(parents=True, exist_ok=True)
    mesh_dir = None
    if args.save_meshes:
        mesh_dir = out / "meshes"
        mesh_dir.mkdir(exist_ok=True)
    save_json(man.to_dict(), out / "manifest.json")

    times = man.session_clock()
    dropped = set(man.drop_sessions)
    records: dict = {}
    todo = []
    for i in range(man.sessions):
        if i in dropped:
            records[i] = session_record(i, times[i], missing=True)
            continue
        spot = cache / f"session_{i:03d}.json"
        if args.resume and spot.exists():
            from .manifest import load_json

            records[i] = load_json(spot)
            continue
        todo.append(i)

    def mesh_path(i):
        return str(mesh_dir / f"session_{i:03d}.off") if mesh_dir else None

    def settle(i, outcome):
        try:
            records[i] = outcome()
        except (DataQualityError, PreconditionError) as exc:
            # one bad session must not sink the rest of the series
            records[i] = session_record(i, times[i], missing=True,
                                        error=str(exc))
        save_json(records[i], cache / f"session_{i:03d}.json")
        _print_session(records[i])

    if args.jobs > 1 and len(todo) > 1:
        man_dict = man.to_dict()
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {i: pool.submit(_measure_worker, man_dict, i, mesh_path(i))
                       for i in todo}
            for i in todo:
                settle(i, futures[i].result)
    else:
        for i in todo:
            settle(i, lambda i=i: measure_session(man, i, mesh_path(i)))

    ordered = [records[i] for i in range(man.sessions)]
    areas = np.array([r.get("surface_area", math.nan) for r in ordered])
    volumes = np.array([r.get("volume", math.nan) for r in ordered])
    analysis = analyze_series(times, areas, volumes, man.lights_on,
                              man.lights_off)
    render_report(analysis, out)
    save_json(results_document(man, ordered, analysis), out / "results.json")
    _print_analysis(analysis)
    print(f"results: {out / 'results.json'}")

    if args.strict:
        leaky = [r["index"] for r in ordered if r.get("watertight") is False]
        noisy = [r["index"] for r in ordered if r.get("warnings")]
        failed = [r["index"] for r in ordered if r.get("error")]
        if leaky or noisy or failed:
            if leaky:
                print(f"phytoscan: open surfaces in sessions {leaky}",
                      file=sys.stderr)
            if noisy:
                print(f"phytoscan: merge warnings in sessions {noisy}",
                      file=sys.stderr)
            if failed:
                print(f"phytoscan: failed sessions {failed}", file=sys.stderr)
            return 3
    return 0


def _print_session(rec: dict) -> None:
    extras = ""
    if rec.get("warnings"):
        extras = f", {len(rec['warnings'])} warning(s)"
    if rec.get("error"):
        print(f"session {rec['index']}: t={rec['time_hours']:g}h "
              f"FAILED ({rec['error']})")
        return
    state = "" if rec.get("watertight", True) else ", open surface"
    print(f"session {rec['index']}: t={rec['time_hours']:g}h "
          f"area={rec['surface_area']:.6g} volume={rec['volume']:.6g}"
          f"{state}{extras}")


if __name__ == "__main__":
    sys.exit(main())
