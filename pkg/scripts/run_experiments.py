#!/usr/bin/env python3
"""Run the shipped experiment configs end to end.

Prices the two-step lookback example, then sweeps frictions, shrinks them
along the halving schedule, and jitters the source marginal on the one-step
instance.  Outputs land next to the configs (out/ and out_onestep/).
"""

import os
import subprocess
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, "..", "configs")


def run(cmd):
    print("+", " ".join(cmd))
    proc = subprocess.run(cmd)
    if proc.returncode:
        sys.exit(proc.returncode)


def main():
    example = os.path.join(CONFIGS, "example.ini")
    onestep = os.path.join(CONFIGS, "onestep.ini")
    py = [sys.executable, "-m", "fricmot.cli"]
    run(py + ["validate", "--config", example])
    run(py + ["price", "--config", example])
    run(py + ["validate", "--config", onestep])
    run(py + ["price", "--config", onestep, "--oracle", "both"])
    run(py + ["sweep", "--config", onestep])
    run(py + ["vanish", "--config", onestep])
    run(py + ["stability", "--config", onestep])


if __name__ == "__main__":
    main()
