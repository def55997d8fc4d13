"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--n 200000] [--p 8] [--groups 24]

Also times one full projection pass under each backend by re-importing the
package with OPTREGIME_NUMBA set accordingly.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from optregime import _kernels as K


def best_of(fn, repeat=5):
    fn()  # warm-up, includes JIT compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(n, p, groups, seed):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, groups, n).astype(np.int64)
    X = rng.normal(size=(n, p))
    Z = rng.normal(size=(n, p))
    B = rng.normal(size=(groups, p, p))
    cases = {
        "group_sum": ((codes, X, groups), K.group_sum_numpy, getattr(K, "group_sum_numba", None)),
        "group_outer": ((codes, X, Z, groups), K.group_outer_numpy, getattr(K, "group_outer_numba", None)),
        "rowwise_apply": ((codes, B, Z), K.rowwise_apply_numpy, getattr(K, "rowwise_apply_numba", None)),
    }
    print(f"n={n} p={p} groups={groups}")
    print(f"{'kernel':<15}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for name, (args, np_fn, nb_fn) in cases.items():
        t_np = best_of(lambda: np_fn(*args))
        if nb_fn is None:
            print(f"{name:<15}{t_np * 1e3:>11.2f}{'n/a':>11}")
            continue
        t_nb = best_of(lambda: nb_fn(*args))
        assert np.allclose(np_fn(*args), nb_fn(*args), atol=1e-9)
        print(f"{name:<15}{t_np * 1e3:>11.2f}{t_nb * 1e3:>11.2f}{t_np / t_nb:>9.1f}")


PIPELINE = """
import time
from optregime.ipw import estimate_value
from optregime.simulation import DgpSpec, generate, oracle_regime
from optregime.basis import BasisSpec
spec = DgpSpec("DGP1", n={n}, seed=3)
ds, regime = generate(spec), oracle_regime(spec)
run = lambda: estimate_value(ds, regime, "IPW_PROJECTED", basis_spec=BasisSpec())
run()
t = time.perf_counter()
run()
print(time.perf_counter() - t)
"""


def pipeline_table(n):
    print(f"\nprojected IPW on DGP1, n={n}")
    for flag in ("0", "1"):
        env = dict(os.environ, OPTREGIME_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", PIPELINE.format(n=n)], env=env,
                             capture_output=True, text=True, check=True)
        label = "numba" if flag == "1" else "numpy"
        print(f"{label:<8}{float(out.stdout.strip()) * 1e3:>10.1f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--p", type=int, default=8)
    ap.add_argument("--groups", type=int, default=24)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pipeline-n", type=int, default=100_000)
    args = ap.parse_args()
    kernel_table(args.n, args.p, args.groups, args.seed)
    pipeline_table(args.pipeline_n)


if __name__ == "__main__":
    main()
