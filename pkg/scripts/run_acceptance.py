"""Generate the acceptance artifacts and print one PASS/FAIL line per check.

    python3 scripts/run_acceptance.py --criteria 5,6,7,4 --out artifacts

Existing artifacts whose run configuration still matches are reused; pass
``--force`` to regenerate them.  Criteria 4, 5, 6 and 7 take from tens of
minutes to about an hour each on one core.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from monitored_ising import acceptance as acc


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--criteria", default="1,2,3,5,6,7,4,8")
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "artifacts")
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args(argv)
    wanted = [int(c) for c in args.criteria.split(",")]
    failed = 0
    for c in wanted:
        if args.force:
            for p in acc.artifact_paths(args.out, c):
                p.unlink(missing_ok=True)
        t0 = time.time()
        progress = lambda row, c=c: print(f"  [{c}] {json.dumps(row, default=float)}", flush=True)
        data, arrays = acc.obtain(args.out, c, progress)
        scan = None
        if c == 8:
            scan = acc.obtain(args.out, 5, progress)[0]["rows"]
        for o in acc.evaluate(c, data, arrays, scan):
            print(o.line(), flush=True)
            failed += not o.passed
        print(f"  [{c}] done in {time.time() - t0:.0f}s", flush=True)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
