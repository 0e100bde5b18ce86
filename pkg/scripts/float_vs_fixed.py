"""How far the integer pipeline drifts from the real-valued forward pass on random models."""

import argparse

import numpy as np

from tinbinn import engine, oracle
from tinbinn.model_io import gen_random_model
from tinbinn.netgraph import builtin_network, parse_network


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--network", default=None, help="layer notation; defaults to the reduced topology")
    ap.add_argument("--pairs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = parse_network(args.network) if args.network else builtin_network("reduced")
    rng = np.random.default_rng(args.seed)
    deltas, agree = [], 0
    for _ in range(args.pairs):
        model = gen_random_model(spec, int(rng.integers(0, 2**63)))
        image = rng.integers(0, 256, (3, 32, 32), dtype=np.uint8)
        fixed = engine.forward(model, image, keep_trace=False).scores
        real = oracle.float_forward(model, image)
        deltas.append(np.abs(real - fixed))
        agree += int(np.argmax(real) == np.argmax(fixed))
    deltas = np.concatenate(deltas)
    print(f"pairs: {args.pairs}")
    print(f"|float - fixed| mean {deltas.mean():.2f}  median {np.median(deltas):.2f}  max {deltas.max():.2f}")
    print(f"argmax agreement: {agree}/{args.pairs}")


if __name__ == "__main__":
    main()
