"""Object-level vs hierarchical training on the superclass-dependent corpus.

Prints one row per run and the mean held-out XE gap.
"""

import argparse
import logging

from relcap.experiments import hierarchy_run, summarize


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--levels", nargs="+", default=["object", "hierarchical"])
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    runs = []
    print("seed\tlevel\taccuracy\theldout_xe\tepochs\tseconds")
    for seed in args.seeds:
        for level in args.levels:
            r = hierarchy_run(seed, level)
            runs.append(r)
            print(f"{r.seed}\t{r.variant}\t{r.accuracy:.4f}\t{r.heldout_xe:.4f}\t{r.epochs}\t{r.seconds:.1f}", flush=True)
    summary = summarize(runs)
    for level, stats in summary.items():
        print(f"# {level}: held-out XE {stats['heldout_xe']:.4f}, accuracy {stats['accuracy']:.4f}")
    if "object" in summary and "hierarchical" in summary:
        print(f"# gap (object - hierarchical): {summary['object']['heldout_xe'] - summary['hierarchical']['heldout_xe']:.4f} nats")


if __name__ == "__main__":
    main()
