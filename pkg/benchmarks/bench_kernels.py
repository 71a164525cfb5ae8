"""Compare the compiled SGD kernel against the pure-numpy fallback.

Runs the same training workload through both backends, reports wall
time per epoch and the relative parameter difference (expected ~1e-15:
the backends differ only in floating-point summation order).

Usage: python benchmarks/bench_kernels.py [--epochs N] [--samples N]
"""

import argparse
import importlib
import os
import sys
import time

import numpy as np


def _fresh_fedcal(pure):
    """(Re)import fedcal with the kernel backend forced by env var."""
    for name in [m for m in sys.modules if m.startswith("fedcal")]:
        del sys.modules[name]
    if pure:
        os.environ["FEDCAL_PURE_KERNELS"] = "1"
    else:
        os.environ.pop("FEDCAL_PURE_KERNELS", None)
    return importlib.import_module("fedcal")


def run_backend(pure, epochs, samples, dim, classes, seed):
    fedcal = _fresh_fedcal(pure)
    from fedcal.data import gen_synthetic
    from fedcal.nn import Batch, ModelSpec, init_params, sgd_epochs
    from fedcal.rng import named_rng

    spec = ModelSpec(dim, (2 * dim,), (dim, classes))
    ds = gen_synthetic(classes, dim, samples // classes, 1.0, seed=seed)
    batch = Batch(ds.inputs, ds.labels)
    params = init_params(spec, named_rng(seed, "bench.init"))

    t0 = time.perf_counter()
    out, losses = sgd_epochs(spec, params, batch, epochs, 0.05,
                             batch_size=64, rng=named_rng(seed, "bench.shuffle"))
    elapsed = time.perf_counter() - t0
    return fedcal.backend_name(), elapsed, out.as_vector(), losses


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    name_c, t_c, vec_c, loss_c = run_backend(False, args.epochs, args.samples,
                                             args.dim, args.classes, args.seed)
    name_p, t_p, vec_p, loss_p = run_backend(True, args.epochs, args.samples,
                                             args.dim, args.classes, args.seed)

    print(f"workload: {args.samples} samples, dim {args.dim}, "
          f"{args.classes} classes, {args.epochs} epochs")
    print(f"{name_c:>9}: {t_c:.3f}s  ({t_c / args.epochs * 1e3:.2f} ms/epoch)")
    print(f"{name_p:>9}: {t_p:.3f}s  ({t_p / args.epochs * 1e3:.2f} ms/epoch)")
    if name_c == name_p:
        print("note: compiled backend unavailable; both runs used the "
              "pure kernels")
    else:
        print(f"speedup: {t_p / t_c:.2f}x")
    denom = np.linalg.norm(vec_p)
    rel = np.linalg.norm(vec_c - vec_p) / denom if denom else 0.0
    print(f"parameter relative difference: {rel:.3e}")
    print(f"final-epoch loss difference:   "
          f"{abs(loss_c[-1] - loss_p[-1]):.3e}")


if __name__ == "__main__":
    main()
