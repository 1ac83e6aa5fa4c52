"""Wall-clock of the three all-neuron gradient engines.

    python benchmarks/bench_engines.py [--sizes 784,300,300,300,300,10] [--batch 64]

Also prints the idealised operation counts (2M vs sum 2 i N_i).
"""

import argparse

import numpy as np

from rollnet.cli import time_engines
from rollnet.linearization import op_count_estimate
from rollnet.network import random_network


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="784,300,300,300,300,10")
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float64")
    args = ap.parse_args()
    sizes = tuple(int(s) for s in args.sizes.split(","))
    rng = np.random.default_rng(0)
    net = random_network(sizes, rng, dtype=np.dtype(args.dtype).type)
    X = rng.standard_normal((args.batch, sizes[0]))
    t = time_engines(net, X)
    ops = op_count_estimate(net)
    print(f"net {sizes}  batch {args.batch}  {args.dtype}")
    print(f"op counts   perturbation {ops[0]}   backprop {ops[1]}")
    for k in ("perturbation", "dp", "backprop"):
        print(f"{k:13s} {t[k]:8.4f} s   ({t[k] / t['perturbation']:6.2f}x perturbation)")


if __name__ == "__main__":
    main()
