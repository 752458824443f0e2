"""Run the acceptance criteria and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py            # all criteria (criteria 8-9 take ~30 min)
    python scripts/run_acceptance.py --fast     # skip the long Monte Carlo criteria 8 and 9
"""

import argparse
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true", help="skip criteria 8 and 9")
    a = ap.parse_args()
    args = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-rxX", "-p", "no:cacheprovider"]
    if a.fast:
        args += ["-k", "not test_8 and not test_9"]
    sys.exit(pytest.main(args))
