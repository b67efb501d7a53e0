"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 200]

Shapes match one OMSI step on MNIST: combined batch 20, 784-256-10 MLP.
"""

import argparse
import timeit

import numpy as np

from omsi import _kernels
from omsi.buffer import ReservoirBuffer
from omsi.strategies import OmsiConfig, omsi_step
from omsi.tensorcore import LabeledBatch, init_mlp


def kernel_cases(rng):
    n, d, h, c = 20, 784, 256, 10
    logits = rng.normal(size=(n, c))
    labels = rng.integers(0, c, size=n)
    weights = np.full(n, 1.0 / n)
    return {
        "softmax_ce": (logits, labels, weights),
        "relu_backward": (rng.normal(size=(n, h)), rng.normal(size=(n, h))),
        "rowwise_bilinear": (rng.normal(size=(n, h)), rng.normal(size=(h, d)),
                             rng.normal(size=(n, d))),
        "rowwise_outer": (rng.normal(size=(n, c)), rng.normal(size=(n, h))),
        "reservoir_slots": (500, 200, rng.integers(0, 500 + np.arange(1, 11)).astype(np.int64)),
    }


def time_call(fn, repeat):
    fn()  # warm-up (triggers numba compilation)
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e6


def omsi_step_case(rng):
    params = init_mlp([784, 256, 10], rng)
    stream = LabeledBatch(rng.uniform(size=(10, 784)), rng.integers(0, 10, size=10))
    buf = ReservoirBuffer(200, 784, np.random.default_rng(0))
    buf.update(LabeledBatch(rng.uniform(size=(200, 784)), rng.integers(0, 10, size=200)))
    cfg = OmsiConfig()

    def step():
        omsi_step(params, stream, buf.clone(), cfg, np.random.default_rng(1),
                  meta_rng=np.random.default_rng(2))

    return step


def use(table):
    for name, fn in table.items():
        setattr(_kernels, name, fn)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args(argv)

    tables = {"numpy": _kernels.NUMPY_KERNELS, "numba": _kernels.numba_kernels()}
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<18s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, call_args in cases.items():
        t = {b: time_call(lambda: tables[b][name](*call_args), args.repeat) for b in tables}
        print(f"{name:<18s} {t['numpy']:10.1f} {t['numba']:10.1f} {t['numpy'] / t['numba']:8.2f}")

    step = omsi_step_case(np.random.default_rng(0))
    t = {}
    for backend, table in tables.items():
        use(table)
        t[backend] = time_call(step, max(args.repeat // 10, 5))
    print(f"{'omsi_step':<18s} {t['numpy']:10.1f} {t['numba']:10.1f} {t['numpy'] / t['numba']:8.2f}")


if __name__ == "__main__":
    main()
