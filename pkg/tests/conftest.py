import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))

torch.set_num_threads(max(1, torch.get_num_threads()))

# Acceptance results keyed by criterion number: (title, passed, detail).
ACCEPTANCE: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def criterion():
    """Record and print a pass/fail line for one acceptance criterion."""

    def record(number, title, passed, detail=""):
        passed = bool(passed)
        ACCEPTANCE[number] = (title, passed, detail)
        line = f"[criterion {number}] {'PASS' if passed else 'FAIL'} {title}: {detail}"
        print(line, flush=True)
        sys.__stdout__.write(f"\n{line}\n")
        sys.__stdout__.flush()
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{n:>2}. {'PASS' if passed else 'FAIL'}  {title}  ({detail})")
