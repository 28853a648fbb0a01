"""Compare the numba and numpy backends on the hot kernels.

    python benchmarks/bench_kernels.py [--n 20000] [--level 3] [--repeat 3]

The first numba call per kernel includes compilation (cached on disk after the
first run), so each kernel is warmed once before timing.  Results from both
backends are checked against each other before the timings are printed.
"""
import argparse
import time

import numpy as np

from surfalign import _accel, shapes
from surfalign.projection import Projector
from surfalign.render import Camera, RenderConfig, render
from surfalign.fields import CheckerShellField
from surfalign.surfcoord import MeshPair


def best_of(fn, repeat):
    fn()  # warm-up (and JIT for the numba backend)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000, help="query points")
    ap.add_argument("--level", type=int, default=3, help="icosphere subdivision level")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--image", type=int, default=24, help="side of the benchmark render in pixels")
    args = ap.parse_args()

    mesh = shapes.icosphere(args.level)
    rng = np.random.default_rng(0)
    proj = Projector(mesh)
    faces, barys = shapes.sample_surface(mesh, args.n, rng, margin=1e-6)
    x = proj.unproject(faces, barys, rng.uniform(-0.1, 0.2, args.n))
    pair = MeshPair.identity(mesh)
    cam = Camera.look_at((0, -3.5, 0), (0, 0, 0), width=args.image, height=args.image)
    field = CheckerShellField(0.25, tau=0.05, sigma=200.0)

    cases = {
        "nearest (bvh)": lambda: proj.nearest(x).dist_sq,
        "dispersed project": lambda: proj.project(x).height,
        f"render {args.image}x{args.image}": lambda: render(pair, proj.bvh, field, cam, RenderConfig()).image,
    }
    print(f"icosphere level {args.level}: {mesh.n_faces} faces, {args.n} points, best of {args.repeat}")
    print(f"{'kernel':<22}{'numba s':>10}{'numpy s':>10}{'speedup':>10}  max |diff|")
    for name, fn in cases.items():
        res = {}
        for be in ("numba", "numpy"):
            with _accel.using_backend(be):
                res[be] = best_of(fn, args.repeat)
        diff = float(np.max(np.abs(res["numba"][1] - res["numpy"][1])))
        tn, tp = res["numba"][0], res["numpy"][0]
        print(f"{name:<22}{tn:>10.4f}{tp:>10.4f}{tp / tn:>9.1f}x  {diff:.2e}")


if __name__ == "__main__":
    main()
