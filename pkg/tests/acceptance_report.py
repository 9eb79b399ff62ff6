"""Shared collector for acceptance pass/fail lines, printed in the
pytest terminal summary (see conftest)."""

RESULTS: list[str] = []


def record(line: str) -> None:
    RESULTS.append(line)
