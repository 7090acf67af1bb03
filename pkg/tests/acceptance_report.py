"""Collects one pass/fail line per acceptance criterion for the run summary."""

LINES: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    LINES.append(line)
    print(line)
