"""Run the shipped demo configs end to end.

Sequences the five commands in dependency order (recoveries read the
series CSVs written by the trace runs) and stops at the first nonzero
exit code.  Run from the repository root:

    python3 scripts/run_demo_campaign.py [--workers N]
"""

import argparse
import sys
import time

from anderson_lab.cli import main as anderson_lab

STAGES = [
    ("silt-validate", "configs/silt_validate.ini"),
    ("trace", "configs/trace_square.ini"),
    ("trace", "configs/trace_exact_geometry.ini"),
    ("recover", "configs/recover_geometry.ini"),
    ("recover", "configs/recover_kappa2.ini"),
    ("mass", "configs/mass_koch.ini"),
    ("minkowski", "configs/minkowski_koch.ini"),
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    for command, config in STAGES:
        argv = [command, "--config", config, "--workers", str(args.workers)]
        print(f"== anderson-lab {' '.join(argv)}")
        started = time.time()
        code = anderson_lab(argv)
        print(f"   exit {code} in {time.time() - started:.1f}s")
        if code != 0:
            return code
    print("campaign complete; outputs under out/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
