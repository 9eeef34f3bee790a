"""Command-line entry point: bake, render, deform-grid, bench and validate.

Exit status: 0 on success, 1 on usage errors, 2 on bad input data, 3 when
``validate`` finds a failing check.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baker import DEFAULT_SHININESS, BundleFormatError, bake_all, load_bundle, save_bundle
from .envmap import load_hdr
from .hdrio import HDRFormatError

log = logging.getLogger("relightkit")

THREADS_ENV = "RELIGHTKIT_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _resolution(text: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 2 or h < 1 or w != 2 * h:
        raise argparse.ArgumentTypeError(f"resolution must be positive with W = 2H, got {text!r}")
    return w, h


def _shininess(text: str) -> tuple[int, ...]:
    try:
        exps = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not exps:
        raise argparse.ArgumentTypeError("shininess list must be nonempty")
    if any(k < 1 for k in exps) or any(b <= a for a, b in zip(exps, exps[1:])):
        raise argparse.ArgumentTypeError(f"shininess must be positive and strictly increasing, got {text!r}")
    return exps


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def resolve_threads(flag: int | None) -> int:
    """Flag wins; otherwise the environment override; otherwise hardware parallelism."""
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if value < 1:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return value
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relightkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--threads", type=_positive_int, default=None,
                       help=f"worker count (default: ${THREADS_ENV} or all cores)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bake", help="pre-filter an HDR environment map into a lightmap bundle")
    p.add_argument("--env", required=True, type=Path, help="Radiance .hdr or .pfm environment map")
    p.add_argument("--out", required=True, type=Path, help="output lightmap bundle")
    p.add_argument("--res", type=_resolution, default=(128, 64), help="lightmap resolution WxH (default 128x64)")
    p.add_argument("--shininess", type=_shininess, default=DEFAULT_SHININESS,
                   help="comma-separated specular exponents (default 1,16,32,64)")
    common(p)

    p = sub.add_parser("render", help="ray-march a procedural scene under baked lightmaps")
    p.add_argument("--scene", required=True, type=Path, help="JSON scene description")
    p.add_argument("--lights", required=True, type=Path, help="lightmap bundle from 'bake'")
    p.add_argument("--out", required=True, type=Path, help="output directory for channel images")
    p.add_argument("--samples", type=_positive_int, default=128)
    p.add_argument("--exposure", type=float, default=1.0)
    p.add_argument("--jitter", action="store_true", help="stratified jitter of ray samples (seeded)")
    common(p)

    p = sub.add_parser("deform-grid", help="sample a deformation field on a regular grid")
    p.add_argument("--controls", required=True, type=Path, help="JSON control set")
    p.add_argument("--method", choices=("mls", "sf"), default="mls")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--grid", type=_positive_int, default=32, help="samples per axis")
    p.add_argument("--out", required=True, type=Path, help="output .npz displacement field")
    common(p)

    p = sub.add_parser("bench", help="timing and continuity measurements")
    p.add_argument("--mode", choices=("shading", "continuity"), required=True)
    p.add_argument("--out", required=True, type=Path, help="JSON report path (a .tsv table is written alongside)")
    p.add_argument("--queries", type=int, default=10_000)
    p.add_argument("--grid", type=_positive_int, default=100)
    common(p)

    p = sub.add_parser("validate", help="run the analytic check table")
    common(p)
    return parser


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_bake(args) -> int:
    env = load_hdr(args.env)
    log.info("baking %dx%d env into %dx%d lightmaps, shininess %s", env.width, env.height, *args.res,
             list(args.shininess))
    lights = bake_all(env, args.shininess, args.res, workers=args.threads)
    save_bundle(lights, args.out)
    print(f"wrote {args.out} ({len(lights)} lightmaps at {args.res[0]}x{args.res[1]})")
    return EXIT_OK


def cmd_render(args) -> int:
    from .volume import load_scene, render

    scene, camera = load_scene(args.scene)
    lights = load_bundle(args.lights)
    out = render(scene, camera, lights, samples=args.samples, workers=args.threads, jitter=args.jitter,
                 seed=args.seed)
    written = out.save(args.out, exposure=args.exposure)
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def deform_grid(controls, method: str, alpha: float, n: int, pad: float = 0.1):
    """Displacements on an ``n^3`` grid spanning the padded posed bounding box."""
    from .mls import displacement

    lo, hi = controls.posed.min(axis=0), controls.posed.max(axis=0)
    margin = pad * np.max(hi - lo)
    lo, hi = lo - margin, hi + margin
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    disp = displacement(controls, pts, method, alpha).reshape(n, n, n, 3)
    spacing = (hi - lo) / max(n - 1, 1)
    return lo, spacing, disp


def cmd_deform_grid(args) -> int:
    from .mls import load_controls

    if args.alpha <= 0:
        raise UsageError("--alpha must be positive")
    controls = load_controls(args.controls)
    if args.method == "sf" and controls.triangles is None:
        raise ValueError(f"{args.controls}: the sf method needs 'triangles' in the control set")
    origin, spacing, disp = deform_grid(controls, args.method, args.alpha, args.grid)
    np.savez(args.out, origin=origin.astype(np.float32), spacing=spacing.astype(np.float32),
             displacement=disp.astype(np.float32))
    print(f"wrote {args.out}: {args.grid}^3 {args.method} displacement field")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_continuity, bench_shading

    if args.mode == "shading":
        if args.queries < 10_000:
            raise UsageError("--queries must be at least 10000")
        # query timings are always single-threaded; --threads only parallelises the bakes
        report = bench_shading(queries=args.queries, seed=args.seed, workers=args.threads)
    else:
        report = bench_continuity(grid=args.grid)
    path, table = report.write(args.out)
    print(table.read_text(), end="")
    print(f"wrote {path} and {table}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_checks

    results = run_checks(workers=args.threads)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


COMMANDS = {
    "bake": cmd_bake,
    "render": cmd_render,
    "deform-grid": cmd_deform_grid,
    "bench": cmd_bench,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "bench" and args.threads is None:
            args.threads = 1
        args.threads = resolve_threads(args.threads)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (HDRFormatError, BundleFormatError, ValueError, LookupError, OSError) as exc:
        print(f"relightkit: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
