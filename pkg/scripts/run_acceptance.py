"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python3 scripts/run_acceptance.py [extra pytest args]

Exit status is 0 when every criterion passes.
"""

from __future__ import annotations

import re
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
LINE = re.compile(r"^\[AC-(\d+)\] (PASS|FAIL) (.*)$")


def main(argv=None) -> int:
    extra = list(sys.argv[1:] if argv is None else argv)
    cmd = [sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider", *extra]
    proc = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True)
    results = {}
    for line in proc.stdout.splitlines():
        m = LINE.match(line.strip())
        if m:
            results[int(m.group(1))] = (m.group(2), m.group(3))
    for n in sorted(results):
        status, summary = results[n]
        print(f"{n:>2}  {status}  {summary}")
    passed = sum(s == "PASS" for s, _ in results.values())
    print(f"\n{passed}/{len(results)} criteria passed (pytest exit {proc.returncode})")
    if not results:
        print(proc.stdout[-2000:], proc.stderr[-2000:], sep="\n")
    return 0 if proc.returncode == 0 and results and passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
