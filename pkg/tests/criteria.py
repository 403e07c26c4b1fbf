"""Collects one verdict line per acceptance criterion for the terminal summary."""

RESULTS: dict = {}


def record(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return line
