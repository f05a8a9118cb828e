"""Time the hot kernels under the numba and the pure-numpy backend.

    python3 benchmarks/bench_kernels.py [--geometry desk-parallel] [--repeats 5]

Numba compilation happens in an untimed warm-up call.  Each row reports the
best of ``--repeats`` runs and checks that both backends agree.
"""
import argparse
import json
import time

import numpy as np

from smar import _accel
from smar.core import PRESETS
from smar.marops import compute_trace, li_interpolate, zero_trace
from smar.projector import back_project, fbp, fbp_vjp, forward_project
from smar.simulate import MaskSpec, PhantomSpec, hu_to_mu, make_metal_mask, make_phantom


def best_time(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--geometry", default="desk-parallel", choices=sorted(PRESETS))
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    g = PRESETS[args.geometry]()
    img = hu_to_mu(make_phantom(PhantomSpec(seed=0), g))
    mask = make_metal_mask(MaskSpec(seed=0, min_pixels=100, max_pixels=200), g, make_phantom(PhantomSpec(seed=0), g))
    sino = forward_project(img, g)
    trace = compute_trace(mask, g)
    holed = zero_trace(sino, trace)
    cases = {
        "forward_project": lambda: forward_project(img, g),
        "back_project": lambda: back_project(sino, g),
        "fbp": lambda: fbp(sino, g),
        "fbp_vjp": lambda: fbp_vjp(img, g),
        "li_interpolate": lambda: li_interpolate(holed, trace),
    }
    if not _accel.HAS_NUMBA:
        print("numba is not importable; only the numpy backend can run")

    rows = []
    previous = _accel.get_backend()
    try:
        for name, fn in cases.items():
            row = {"kernel": name}
            outputs = {}
            for backend in ("numba", "numpy"):
                if backend == "numba" and not _accel.HAS_NUMBA:
                    continue
                _accel.set_backend(backend)
                row[backend] = best_time(fn, args.repeats)
                outputs[backend] = fn()
            if len(outputs) == 2:
                row["speedup"] = row["numpy"] / row["numba"]
                row["max_abs_diff"] = float(np.abs(outputs["numba"] - outputs["numpy"]).max())
            rows.append(row)
    finally:
        _accel.set_backend(previous)

    print(f"geometry {args.geometry}: image {g.image_size}, sinogram {g.sino_shape}")
    print(f"{'kernel':<16}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>9}{'max diff':>11}")
    for r in rows:
        nb = f"{1e3 * r['numba']:.2f}" if "numba" in r else "-"
        sp = f"{r['speedup']:.1f}x" if "speedup" in r else "-"
        diff = f"{r['max_abs_diff']:.1e}" if "max_abs_diff" in r else "-"
        print(f"{r['kernel']:<16}{nb:>12}{1e3 * r['numpy']:>12.2f}{sp:>9}{diff:>11}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"geometry": args.geometry, "rows": rows}, fh, indent=2)
    return rows


if __name__ == "__main__":
    main()
