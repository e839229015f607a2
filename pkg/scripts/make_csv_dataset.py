#!/usr/bin/env python3
"""Write a small synthetic classification CSV usable with dataset=csv configs."""

import argparse
import sys

import numpy as np


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.strip())
    parser.add_argument("path")
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--per-class", type=int, default=100)
    parser.add_argument("--dims", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    lines = []
    for cls in range(args.classes):
        center = rng.normal(scale=2.0, size=args.dims)
        for _ in range(args.per_class):
            x = center + rng.normal(scale=0.5, size=args.dims)
            lines.append(",".join(f"{v:.6f}" for v in x) + f",{cls}")
    with open(args.path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} rows to {args.path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
