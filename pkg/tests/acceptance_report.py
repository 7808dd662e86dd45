"""Shared registry for one-line acceptance verdicts printed at session end."""

LINES: list[str] = []


def record(number: int, name: str, passed: bool, detail: str = "") -> None:
    verdict = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    LINES.append(f"[{verdict}] criterion {number:2d}: {name}{suffix}")
