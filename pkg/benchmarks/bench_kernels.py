"""Time the numba kernels against their numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``.  Each kernel is called once
to trigger compilation, then timed with ``timeit``; results from both paths
are compared so a speedup never hides a wrong answer.
"""
import argparse
import timeit

import numpy as np

from pcanet import _accel


def _cases(points):
    rng = np.random.default_rng(0)
    a = 1.0 + 0.5 * rng.random((points, points))
    w = rng.standard_normal((points, points))
    f = np.ones((points, points))
    h = 1.0 / (points + 1)
    ax, ay = _accel.harmonic_faces_numpy(a)
    t = rng.random(200_000)
    return {
        "harmonic_faces": (lambda k: k(a),),
        "stencil_apply": (lambda k: k(w, ax, ay, h),),
        "cg": (lambda k: k(f, ax, ay, h, 1e-10, 10000)[0],),
        "face_energy": (lambda k: k(w, ax, ay),),
        "sawtooth_square": (lambda k: k(t, 12),),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--points", type=int, default=63)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if not _accel.HAS_NUMBA:
        print("numba is not installed; only the numpy path is available")
        return 0
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, (call,) in _cases(args.points).items():
        k_np = getattr(_accel, name + "_numpy")
        k_nb = getattr(_accel, name + "_numba")
        ref, got = call(k_np), call(k_nb)
        diff = max(float(np.max(np.abs(np.asarray(r) - np.asarray(g)))) for r, g in
                   zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)))
        t_np = min(timeit.repeat(lambda: call(k_np), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: call(k_nb), number=1, repeat=args.repeat))
        print(f"{name:<18}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
