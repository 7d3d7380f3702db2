import numpy as np
import pytest
from hypothesis import settings, strategies as st

from treepool.suites import random_tree

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def tree_strategy(max_nodes: int = 10, min_nodes: int = 1):
    return st.integers(0, 2**32 - 1).map(
        lambda s: random_tree(np.random.default_rng(s), max_nodes, min_nodes))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
