"""Command-line interface.

Subcommands:
    render <scene> -o <out.ppm>      render one frame, print phase timings
    benchmark <scene> --frames N     render a camera path, CSV on stdout
    validate <grid.ahf>              check grid invariants, pass/fail lines
    synth <kind> --seed S -o <out>   write a synthetic grid

Exit codes: 0 success, 1 bad input, 2 nothing visible (render only; the
all-background frame is still written).
"""

from __future__ import annotations

import argparse
import statistics
import sys

import numpy as np

from .cascade import dump_cascades
from .discretize import write_pgm
from .grid import GridFormatError, build_influence_table, load_grid
from .rbf import RbfParams, weights_vec
from .render import CascadeSettings, render_frame, write_ppm
from .scene import SceneError, load_scene, scene_frame_config, scene_grid
from .synth import SYNTH_KINDS, generate_synthetic


def _apply_threads(n: int | None):
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be at least 1")
    import numba
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _scene_overrides(scene, args):
    if getattr(args, "cascade_res", None) is not None:
        scene.cascade_res = args.cascade_res
    if getattr(args, "sigma", None) is not None:
        scene.sigma = args.sigma
    if getattr(args, "overlap", None) is not None:
        scene.overlap = "auto" if args.overlap == "auto" else float(args.overlap)


def _prepare(scene):
    grid = scene_grid(scene)
    params = RbfParams(sigma=scene.sigma)
    table = build_influence_table(grid, params.sigma)
    config = scene_frame_config(scene)
    settings = CascadeSettings(resolution=scene.cascade_res, overlap=scene.overlap)
    return grid, table, params, config, settings


def cmd_render(args) -> int:
    try:
        scene = load_scene(args.scene)
        _scene_overrides(scene, args)
        _apply_threads(args.threads)
        grid, table, params, config, settings = _prepare(scene)
    except (SceneError, GridFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    want_debug = bool(args.dump_cascades or args.dump_raster)
    frame = render_frame(config, grid, table, params, settings, debug=want_debug)
    write_ppm(frame.pixels, args.output)
    print(f"approximation_ms={frame.approximation_ms:.3f}")
    print(f"raycast_ms={frame.raycast_ms:.3f}")

    if not frame.visible:
        print("error: nothing visible from this camera", file=sys.stderr)
        return 2

    if args.dump_cascades:
        dump_cascades(frame.debug["polygons"], frame.debug["layouts"],
                      args.dump_cascades)
    if args.dump_raster:
        code, path = args.dump_raster
        try:
            idx, layer = _parse_raster_selector(code)
            raster = frame.debug["rasters"][idx - 1]
            if raster is None:
                raise ValueError(f"cascade {idx} is degenerate for this view")
        except (ValueError, IndexError) as exc:
            print(f"error: --dump-raster: {exc}", file=sys.stderr)
            return 1
        write_pgm(raster.layer(layer), *grid.height_range, path)
    return 0


def _parse_raster_selector(code: str):
    """'2' means cascade 2 terrain; '2:water' selects the layer."""
    idx, _, layer = code.partition(":")
    layer = layer or "terrain"
    if layer not in ("terrain", "water"):
        raise ValueError(f"unknown layer {layer!r}")
    k = int(idx)
    if not 1 <= k <= 3:
        raise ValueError("cascade index must be 1, 2 or 3")
    return k, layer


def cmd_benchmark(args) -> int:
    try:
        scene = load_scene(args.scene)
        _scene_overrides(scene, args)
        _apply_threads(args.threads)
        grid, table, params, config, settings = _prepare(scene)
    except (SceneError, GridFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    eye0 = np.asarray(scene.eye)
    look0 = np.asarray(scene.look_at)
    if args.pose2 is not None:
        eye1 = np.asarray(args.pose2[:3])
        look1 = np.asarray(args.pose2[3:])
    else:
        eye1, look1 = eye0, look0

    from .scene import scene_camera  # reuse validation path
    print("frame,approximation_ms,raycast_ms,visible_texels,rays_hit")
    rows = []
    for i in range(args.frames):
        a = i / (args.frames - 1) if args.frames > 1 else 0.0
        scene.eye = tuple((1 - a) * eye0 + a * eye1)
        scene.look_at = tuple((1 - a) * look0 + a * look1)
        config = scene_frame_config(scene)
        frame = render_frame(config, grid, table, params, settings)
        rows.append((frame.approximation_ms, frame.raycast_ms,
                     frame.visible_texels, frame.rays_hit))
        print(f"{i},{frame.approximation_ms:.3f},{frame.raycast_ms:.3f},"
              f"{frame.visible_texels},{frame.rays_hit}")
    med = [statistics.median(col) for col in zip(*rows)]
    print(f"median,{med[0]:.3f},{med[1]:.3f},{med[2]:g},{med[3]:g}")
    return 0


def cmd_validate(args) -> int:
    ok = True

    def report(name, passed, detail=""):
        nonlocal ok
        ok &= passed
        status = "PASS" if passed else "FAIL"
        suffix = f": {detail}" if detail and not passed else ""
        print(f"{status} {name}{suffix}")

    try:
        grid = load_grid(args.grid, check_overlap=False)
    except (GridFormatError, OSError) as exc:
        report("format", False, str(exc))
        return 1
    report("format", True)

    clash = grid.find_overlap()
    report("overlap", clash is None,
           f"cells {clash[0]} and {clash[1]} overlap" if clash else "")

    hs = grid.terrain
    ws = grid.terrain + grid.water_depth
    lo, hi = grid.height_range
    report("height-range", bool(np.all(hs >= lo) and np.all(ws <= hi)))
    report("water-depth", bool(np.all(grid.water_depth >= 0)))

    # influence table spot checks against the brute-force predicate
    sigma = 1.0
    table = build_influence_table(grid, sigma)
    rng = np.random.default_rng(0)
    n = grid.n_cells
    sample = rng.choice(n, size=min(40, n), replace=False) if n else []
    radius = 3.5 * sigma * grid.sizes
    bad = None
    for a in sample:
        half = grid.sizes[a] / 2.0
        ax = np.maximum(np.abs(grid.centers[:, 0] - grid.centers[a, 0]) - half, 0.0)
        ay = np.maximum(np.abs(grid.centers[:, 1] - grid.centers[a, 1]) - half, 0.0)
        expect = np.flatnonzero(ax * ax + ay * ay <= radius * radius)
        got = table.influencers(int(a))
        if not np.array_equal(expect, got):
            bad = int(a)
            break
    report("influence-table", bad is None,
           f"cell {bad} list mismatch" if bad is not None else "")

    # completeness: positive weights at random interior points are listed
    bad = None
    for a in sample:
        p = grid.centers[a] + (rng.random(2) - 0.5) * grid.sizes[a] * 0.98
        w = weights_vec(grid.centers[:, 0] - p[0], grid.centers[:, 1] - p[1],
                        grid.sizes, sigma)
        positive = np.flatnonzero(w > 0)
        if not np.all(np.isin(positive, table.influencers(int(a)))):
            bad = int(a)
            break
    report("influence-completeness", bad is None,
           f"cell {bad} misses a positive-weight influencer" if bad is not None else "")

    return 0 if ok else 1


def cmd_synth(args) -> int:
    try:
        grid = generate_synthetic(args.kind, args.seed, args.cells)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    grid.save(args.output)
    print(f"wrote {grid.n_cells} cells to {args.output}", file=sys.stderr)
    return 0


def _add_render_opts(p, dumps=False):
    p.add_argument("--cascade-res", type=int, default=None,
                   help="override cascade raster resolution")
    p.add_argument("--sigma", type=float, default=None,
                   help="override smoothing sigma")
    p.add_argument("--overlap", default=None,
                   help="override cascade overlap (meters or 'auto')")
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker threads (clamped to the host limit)")
    if dumps:
        p.add_argument("--dump-cascades", metavar="PATH", default=None,
                       help="write cascade polygons and boxes as 'k x y' lines")
        p.add_argument("--dump-raster", nargs=2, metavar=("K", "PATH"),
                       default=None,
                       help="write cascade K's layer as 16-bit PGM "
                            "(K like '2' or '2:water')")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heightcast",
                                 description="Adaptive heightfield renderer")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a scene to a PPM image")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True)
    _add_render_opts(p, dumps=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("benchmark", help="render a camera path, CSV to stdout")
    p.add_argument("scene")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--pose2", type=float, nargs=6, default=None,
                   metavar=("EX", "EY", "EZ", "LX", "LY", "LZ"),
                   help="end pose (eye, look_at); linear path from the scene pose")
    _add_render_opts(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("validate", help="check a grid file's invariants")
    p.add_argument("grid")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write a synthetic grid")
    p.add_argument("kind", choices=SYNTH_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cells", type=int, default=4096)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
