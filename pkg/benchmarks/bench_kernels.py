"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

The numpy path is what runs with MSPDE_NUMBA=0 (or when numba is missing).
"""

import argparse
import timeit

import numpy as np

from mspde import _kernels


def cases(rng):
    x = rng.standard_normal((64, 256)) * 3.0
    fp = -3.0 * x**2
    sp = 0.5 * np.cos(x)
    xi = rng.standard_normal(x.shape) * 0.05
    d = rng.standard_normal((9, 256, 16))
    return {
        "power_resolvent": (lambda f: f(x, 0.05, 3.0, 1.0)),
        "tangent_coefficient": (lambda f: f(fp, sp, xi, 1.0 / 256)),
        "h_norm_sq": (lambda f: f(d, 1.0 / 256)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _kernels.nb is None:
        print("numba not installed; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, call in cases(rng).items():
        f_np = getattr(_kernels, f"{name}_numpy")
        f_nb = getattr(_kernels, f"{name}_numba")
        diff = float(np.max(np.abs(call(f_np) - call(f_nb))))  # also triggers compilation
        t_np = min(timeit.repeat(lambda: call(f_np), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: call(f_nb), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
