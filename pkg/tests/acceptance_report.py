"""Collects one PASS/FAIL line per acceptance criterion for the end-of-run summary."""

RESULTS: list[str] = []


def report(label: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok
