"""Time the compiled kernels against the pure-Python fallback.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``. Every workload is
checked for identical output on both backends before it is timed.
"""

import argparse
import time

import numpy as np

from kermtkit import _kernels_py
from kermtkit.data import generate_molecules
from kermtkit.fingerprints import _csr, atom_invariant_table
from kermtkit.smiles import parse_smiles

try:
    from kermtkit import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _graph_inputs(n):
    graphs = [parse_smiles(s) for s in generate_molecules(n, np.random.default_rng(0))]
    return [(atom_invariant_table(g), *_csr(g)) for g in graphs]


def _fingerprints(k, inputs, radius=2, nbits=2048):
    out = []
    for table, indptr, nbrs, orders in inputs:
        init = k.atom_hashes(table)
        out.append(k.fold_bits(k.morgan_environments(init, indptr, nbrs, orders, radius), nbits))
    return np.stack(out)


def workloads():
    rng = np.random.default_rng(1)
    inputs = _graph_inputs(500)
    words = _fingerprints(_kernels_py, inputs)
    queries, refs = words[:100], words[100:]
    src = rng.normal(size=(20_000, 64))
    index = rng.integers(0, 2_000, size=20_000)
    return {
        "morgan fingerprints (500 molecules, r=2, 2048 bits)": lambda k: _fingerprints(k, inputs),
        "max Tanimoto (100 x 400)": lambda k: k.max_tanimoto(queries, refs),
        "pairwise Tanimoto (5000 pairs)": lambda k: [k.tanimoto_words(queries[i % 100], refs[i % 400]) for i in range(5000)],
        "scatter-add rows (20000 x 64 -> 2000)": lambda k: k.scatter_add_rows(src, index, 2_000),
    }


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'workload':<54}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name, fn in workloads().items():
        a, b = fn(_kernels_py), fn(_ckernels)
        if not np.array_equal(np.asarray(a), np.asarray(b)):
            raise AssertionError(f"backends disagree on {name}")
        tp, tc = best_time(lambda: fn(_kernels_py), args.repeat), best_time(lambda: fn(_ckernels), args.repeat)
        print(f"{name:<54}{tp:>10.4f}{tc:>10.4f}{tp / tc:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
