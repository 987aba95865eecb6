"""Collects the one-line PASS/FAIL verdicts printed by the acceptance tests."""

import sys

LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str, elapsed: float, limit: float) -> bool:
    """Print and store a verdict; the runtime limit is part of the verdict."""
    in_time = elapsed < limit
    passed = ok and in_time
    line = (f"{'PASS' if passed else 'FAIL'} criterion {number}: {title}: {detail}; "
            f"runtime {elapsed:.1f} s (limit {limit:g} s{'' if in_time else ', exceeded'})")
    LINES.append(line)
    print(line, file=sys.stderr if not passed else sys.stdout, flush=True)
    return passed
