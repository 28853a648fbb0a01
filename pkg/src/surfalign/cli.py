"""``surfalign`` command line.

Exit codes: 0 success, 1 I/O or parse failure, 2 semantic failure such as a
failed validation or a topology mismatch.
"""
import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .fields import FieldConfigError, field_from_spec
from .mesh import MeshStructureError, ObjParseError, load_mesh, validate
from .projection import BARY_EPS, AmbiguousProjectionError, projector_for
from .render import Camera, CameraError, RenderConfig, DEFAULT_H0, DEFAULT_SAMPLES, render, write_ppm
from .shapes import sample_surface
from .surfcoord import MeshPair, TopologyMismatchError, canonical_points
from .spatial import nearest_surface_points

EXIT_OK = 0
EXIT_IO = 1
EXIT_SEMANTIC = 2


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _fmt(x):
    # repr of a Python float is the shortest string that round-trips
    return repr(float(x))


def _load(path):
    try:
        return load_mesh(path)
    except (OSError, ObjParseError, UnicodeDecodeError) as e:
        raise CliError(EXIT_IO, f"{path}: {e}") from None
    except MeshStructureError as e:
        raise CliError(EXIT_SEMANTIC, f"{path}: {e}") from None


def _pair(posed_path, canonical_path):
    posed = _load(posed_path)
    canonical = _load(canonical_path) if canonical_path else posed
    try:
        return MeshPair(posed, canonical)
    except TopologyMismatchError as e:
        raise CliError(EXIT_SEMANTIC, str(e)) from None


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(EXIT_IO, f"{path}: {e}") from None


def read_points(path):
    """``x,y,z`` rows; blank lines, ``#`` comments and a leading header are skipped."""
    try:
        fh = sys.stdin if path == "-" else open(path, newline="")
    except OSError as e:
        raise CliError(EXIT_IO, f"{path}: {e}") from None
    rows = []
    with fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row[:3]]
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header
                raise CliError(EXIT_IO, f"{path}:{lineno}: not a numeric point: {row}") from None
            if len(vals) != 3 or not np.isfinite(vals).all():
                raise CliError(EXIT_IO, f"{path}:{lineno}: expected three finite coordinates")
            rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _write_out(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as e:
            raise CliError(EXIT_IO, f"{path}: {e}") from None


def _dump(obj):
    return json.dumps(obj, indent=2) + "\n"


def cmd_validate(args):
    mesh = _load(args.mesh)
    rep = validate(mesh, area_eps=args.area_eps)
    _write_out(args.out, rep.to_json(indent=2) + "\n")
    return EXIT_OK if rep.ok else EXIT_SEMANTIC


PROJECT_HEADER = ["x", "y", "z", "face", "a1", "a2", "a3", "sx", "sy", "sz", "h", "fallback"]


def cmd_project(args):
    pair = _pair(args.posed, args.canonical)
    pts = read_points(args.points)
    proj = projector_for(pair.posed)
    res = proj.project(pts) if args.method == "dispersed" else proj.project_nearest(pts)
    s_c = canonical_points(pair, res.face, res.bary)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROJECT_HEADER)
    for i in range(len(pts)):
        w.writerow([*map(_fmt, pts[i]), int(res.face[i]), *map(_fmt, res.bary[i]),
                    *map(_fmt, s_c[i]), _fmt(res.height[i]), int(res.fallback[i])])
    _write_out(args.out, buf.getvalue())
    return EXIT_OK


def sample_shell(proj, n, rng, h_lo, h_hi):
    """``n`` shell points: area-uniform surface samples lifted by uniform heights."""
    faces, barys = sample_surface(proj.mesh, n, rng, margin=BARY_EPS * 2)
    h = rng.uniform(h_lo, h_hi, n)
    return proj.unproject(faces, barys, h), faces, barys, h


def roundtrip_stats(pair, n, seed, h_lo=-0.1, h_hi=0.2, exclude_eps=BARY_EPS * 10):
    """Errors of ``x -> (s_c, h) -> x`` over ``n`` shell samples.

    The inverse locates ``s_c`` on the canonical mesh and lifts it from the
    posed mesh.  Points whose projection is within ``exclude_eps`` of an edge
    are counted as excluded and left out of the error statistics.
    """
    out = {"n": int(n), "max_error": 0.0, "mean_error": 0.0, "max_relative_error": 0.0,
           "excluded_count": 0, "fallback_count": 0, "face_mismatch": 0}
    if n == 0:
        return out
    rng = np.random.default_rng(seed)
    proj = projector_for(pair.posed)
    x = sample_shell(proj, n, rng, h_lo, h_hi)[0]
    res = proj.project(x)
    s_c = canonical_points(pair, res.face, res.bary)
    loc = nearest_surface_points(projector_for(pair.canonical).bvh, pair.canonical, s_c)
    excluded = (res.bary.min(axis=1) < exclude_eps) | (loc.bary.min(axis=1) < exclude_eps)
    keep = ~excluded
    back = proj.unproject(loc.face[keep], loc.bary[keep], res.height[keep], check=False)
    err = np.linalg.norm(back - x[keep], axis=1)
    out.update(max_error=float(err.max()) if err.size else 0.0,
               mean_error=float(err.mean()) if err.size else 0.0,
               max_relative_error=float((err / (1 + np.linalg.norm(x[keep], axis=1))).max())
               if err.size else 0.0,
               excluded_count=int(excluded.sum()), fallback_count=int(res.fallback.sum()),
               face_mismatch=int((loc.face[keep] != res.face[keep]).sum()))
    return out


def cmd_roundtrip(args):
    pair = _pair(args.posed, args.canonical)
    if args.n < 0:
        raise CliError(EXIT_SEMANTIC, "--n must be non-negative")
    _write_out(args.out, _dump(roundtrip_stats(pair, args.n, args.seed, args.h_min, args.h_max)))
    return EXIT_OK


def dispersion_stats(mesh, h, n, seed, thresholds=(1e-3, 1e-2)):
    """Fractions of projections near edges for both projection methods on the same points."""
    proj = projector_for(mesh)
    rng = np.random.default_rng(seed)
    x = sample_shell(proj, n, rng, h, h)[0] if n else np.zeros((0, 3))
    out = {"h": float(h), "n": int(n), "thresholds": list(thresholds)}
    edges = np.linspace(0.0, 1.0 / 3.0, 21)
    for name, res in (("nearest", proj.project_nearest(x)), ("dispersed", proj.project(x))):
        mn = res.bary.min(axis=1) if n else np.zeros(0)
        frac = {repr(t): float((mn < t).mean()) if n else 0.0 for t in thresholds}
        hist, _ = np.histogram(mn, bins=edges)
        out[name] = {"fraction_below": frac, "on_edge_fraction": float((mn <= BARY_EPS).mean()) if n else 0.0,
                     "min_bary_histogram": {"bin_edges": edges.tolist(), "counts": hist.tolist()}}
        if name == "dispersed":
            out[name]["fallback_count"] = int(res.fallback.sum())
    return out


def cmd_stats(args):
    mesh = _load(args.posed)
    if args.n < 0:
        raise CliError(EXIT_SEMANTIC, "--n must be non-negative")
    _write_out(args.out, _dump(dispersion_stats(mesh, args.h, args.n, args.seed)))
    return EXIT_OK


def cmd_render(args):
    pair = _pair(args.posed, args.canonical)
    cam_d = _read_json(args.camera)
    spec = _read_json(args.field)
    try:
        camera = Camera.from_dict(cam_d)
    except CameraError as e:
        raise CliError(EXIT_SEMANTIC, f"{args.camera}: {e}") from None
    labels = args.labels
    if labels is None and isinstance(spec, dict) and isinstance(spec.get("labels"), str):
        labels = os.path.join(os.path.dirname(os.path.abspath(args.field)), spec["labels"])
    if labels is not None and not os.path.exists(labels):
        raise CliError(EXIT_IO, f"{labels}: no such label file")
    try:
        field = field_from_spec(spec, pair.canonical.n_faces, labels)
        bg = spec.get("background", (0.0, 0.0, 0.0)) if isinstance(spec, dict) else (0.0, 0.0, 0.0)
        cfg = RenderConfig(samples_per_ray=args.samples, h0=args.h0, seed=args.seed,
                           background=tuple(float(c) for c in bg), workers=args.workers)
    except OSError as e:
        raise CliError(EXIT_IO, str(e)) from None
    except (FieldConfigError, ValueError) as e:
        raise CliError(EXIT_SEMANTIC, str(e)) from None
    res = render(pair, projector_for(pair.posed).bvh, field, camera, cfg)
    try:
        write_ppm(args.out, res.image)
    except OSError as e:
        raise CliError(EXIT_IO, f"{args.out}: {e}") from None
    stats = res.stats()
    stats.update(width=camera.width, height=camera.height, samples_per_ray=cfg.samples_per_ray,
                 h0=cfg.h0, seed=cfg.seed, image=args.out)
    _write_out(args.stats, _dump(stats))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="surfalign", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check watertightness, face areas and normal acuteness")
    s.add_argument("mesh")
    s.add_argument("--area-eps", type=float, default=1e-12)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("project", help="project CSV points onto a posed mesh")
    s.add_argument("posed")
    s.add_argument("canonical")
    s.add_argument("points", help="CSV of x,y,z rows, or - for stdin")
    s.add_argument("--method", choices=("dispersed", "nearest"), default="dispersed")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("roundtrip", help="round-trip error of the surface-aligned map")
    s.add_argument("posed")
    s.add_argument("canonical")
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h-min", type=float, default=-0.1)
    s.add_argument("--h-max", type=float, default=0.2)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_roundtrip)

    s = sub.add_parser("stats", help="edge-proximity statistics of nearest vs dispersed projection")
    s.add_argument("posed")
    s.add_argument("--h", type=float, default=0.05)
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("render", help="volume-render a procedural field")
    s.add_argument("posed")
    s.add_argument("canonical")
    s.add_argument("camera", help="camera JSON")
    s.add_argument("field", help="field spec JSON")
    s.add_argument("--out", required=True, help="output PPM path")
    s.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    s.add_argument("--h0", type=float, default=DEFAULT_H0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--labels", default=None, help="per-face category file, one integer per line")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--stats", default=None, help="where to write the JSON stats (default stdout)")
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"surfalign {args.command}: {e}", file=sys.stderr)
        return e.code
    except AmbiguousProjectionError as e:
        print(f"surfalign {args.command}: {e}", file=sys.stderr)
        return EXIT_SEMANTIC


if __name__ == "__main__":
    sys.exit(main())
