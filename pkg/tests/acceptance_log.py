"""Collects one status line per acceptance criterion for the terminal summary."""
LINES = {}


def report(number, passed, text):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {text}"
    LINES[number] = line
    print("\n" + line)
    return passed
