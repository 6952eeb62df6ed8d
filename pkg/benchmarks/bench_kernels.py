"""Time the compiled and numpy kernel backends on realistic inputs.

    python benchmarks/bench_kernels.py [--repeat 20]

Reports median wall time per call for each backend, the speed-up and the
largest absolute difference between backend outputs.
"""
import argparse
import time

import numpy as np

from facecascade._kernels import available_backends
from facecascade.camera import project, weak_perspective, yaw_rotation
from facecascade.synth import face_template


def _median_ms(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1000 * float(np.median(times))


def sift_case(rng):
    img = rng.random((256, 256))
    centers = rng.uniform(40, 216, (68, 2))
    return "sift_histograms (68 x 32px, 256^2)", (img, centers, 32, 4, 8)


def raster_case(rng):
    verts, tri, _ = face_template(5996, 68)
    r = yaw_rotation(20.0)
    xy = project(weak_perspective(r, 0.7 * 256 / 200, (128.0, 128.0)), verts.T)
    depth = verts @ r[2]
    shade = rng.random(len(verts))
    return f"rasterize ({len(tri)} tris, 256^2)", (xy, depth, shade, tri, 256, 256, 0.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = available_backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':<38}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speed-up':>10}{'max diff':>11}")
    for (name, args_), kernel in ((sift_case(rng), "sift_histograms"), (raster_case(rng), "rasterize")):
        times, outs = {}, {}
        for b, mod in backends.items():
            fn = getattr(mod, kernel)
            times[b] = _median_ms(lambda: fn(*args_), args.repeat)
            out = fn(*args_)
            outs[b] = out[0] if isinstance(out, tuple) else out
        row = f"{name:<38}" + "".join(f"{times[b]:>12.2f}" for b in backends)
        if "cython" in backends:
            diff = np.abs(outs["cython"] - outs["python"]).max()
            row += f"{times['python'] / times['cython']:>9.1f}x{diff:>11.1e}"
        print(row)


if __name__ == "__main__":
    main()
