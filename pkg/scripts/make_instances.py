#!/usr/bin/env python3
"""Regenerate the CSV marginals shipped under configs/.

Deterministic quantile discretizations of a narrow and a wide uniform law
with a common mean, kept in convex order by construction.
"""

import csv
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from fricmot.measures import quantile_discretize  # noqa: E402


def write(meas, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location", "weight"])
        for x, p in zip(meas.locations, meas.weights):
            w.writerow([repr(float(x)), repr(float(p))])
    print(f"wrote {path} ({meas.n} atoms)")


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "..", "configs")
    narrow = quantile_discretize(lambda u: 2.0 * u - 1.0, 48)
    wide = quantile_discretize(lambda u: 4.0 * u - 2.0, 48)
    write(narrow, os.path.join(out_dir, "uniform48_narrow.csv"))
    write(wide, os.path.join(out_dir, "uniform48_wide.csv"))


if __name__ == "__main__":
    main()
