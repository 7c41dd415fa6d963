"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--rays N] [--samples M] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from depthrefine import _kernels


def moments_inputs(rays, samples, rng):
    sigma = rng.exponential(2.0, size=(rays, samples)) * (rng.uniform(size=(rays, samples)) < 0.3)
    delta = np.full((rays, samples), 2.0 / samples)
    t = 1.0 + np.cumsum(delta, axis=1) - 0.5 * delta
    return sigma, delta, t, 1e-3


def splat_inputs(height, width, rng):
    n = height * width
    u = rng.uniform(-2, width + 1, n)
    v = rng.uniform(-2, height + 1, n)
    z = rng.uniform(0.5, 5.0, n)
    return u, v, z, rng.normal(size=n), height, width


def bench(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rays", type=int, default=160 * 120)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    cases = [
        ("termination_moments", moments_inputs(args.rays, args.samples, rng)),
        ("zbuffer_splat", splat_inputs(120, 160, rng)),
    ]
    backends = [("python", _kernels.fallback)]
    if _kernels.compiled is not None:
        backends.append(("cython", _kernels.compiled))
    else:
        print("compiled core not available; timing the fallback only")

    print(f"{'kernel':22s} {'backend':8s} {'best [ms]':>10s} {'speedup':>8s}")
    for name, inputs in cases:
        base = None
        for label, mod in backends:
            t = bench(getattr(mod, name), inputs, args.repeat)
            base = base or t
            print(f"{name:22s} {label:8s} {1e3 * t:10.2f} {base / t:8.1f}x")


if __name__ == "__main__":
    main()
