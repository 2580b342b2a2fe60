"""Gated encoder vs adjacency-only ablation on the geometry-determined corpus.

Prints one row per run and the per-variant means.
"""

import argparse
import logging

from relcap.experiments import relational_run, summarize


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--scenes", type=int, default=500)
    parser.add_argument("--heldout", type=int, default=100)
    parser.add_argument("--epochs", type=int, default=35)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    runs = []
    print("seed\tvariant\taccuracy\theldout_xe\tepochs\tseconds")
    for seed in args.seeds:
        for gates in (True, False):
            r = relational_run(seed, gates, args.scenes, args.heldout, args.epochs)
            runs.append(r)
            print(f"{r.seed}\t{r.variant}\t{r.accuracy:.4f}\t{r.heldout_xe:.4f}\t{r.epochs}\t{r.seconds:.1f}", flush=True)
    for variant, stats in summarize(runs).items():
        print(f"# {variant}: accuracy {stats['accuracy']:.4f}, held-out XE {stats['heldout_xe']:.4f}, {stats['seconds']:.0f}s")


if __name__ == "__main__":
    main()
