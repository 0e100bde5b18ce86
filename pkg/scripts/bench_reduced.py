"""Time the pipeline and the naive reference on a random reduced-topology model."""

import argparse
import statistics
import time

import numpy as np

from tinbinn import engine, oracle
from tinbinn.model_io import gen_random_model
from tinbinn.netgraph import builtin_network, count_ops


def timed(fn, n):
    runs = []
    for _ in range(n):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs), min(runs)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iterations", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = builtin_network("reduced")
    model = gen_random_model(spec, args.seed)
    image = np.random.default_rng(args.seed).integers(0, 256, (3, 32, 32), dtype=np.uint8)
    macs = count_ops(spec).total
    for name, fn in (("pipeline", lambda: engine.forward(model, image, keep_trace=False)),
                     ("naive", lambda: oracle.fixed_forward_naive(model, image))):
        med, best = timed(fn, args.iterations)
        print(f"{name:<9} median {med * 1e3:8.1f} ms  min {best * 1e3:8.1f} ms  {macs / med / 1e6:8.1f} MMAC/s")
    print("host measurement; not comparable to the 24 MHz FPGA overlay timings")


if __name__ == "__main__":
    main()
