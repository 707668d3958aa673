import numpy as np
import pytest

from shapdistill import EnvSpec, collect_dataset, make_env, oracle_table_policy


@pytest.fixture(scope="session")
def tree_env():
    return make_env(EnvSpec("tree", 4, 3, gamma=0.95, max_steps=50), "synthetic_tree", seed=11)


@pytest.fixture(scope="session")
def tree_oracle(tree_env):
    return oracle_table_policy(tree_env)


@pytest.fixture(scope="session")
def tree_dataset(tree_env, tree_oracle):
    return collect_dataset(tree_env, tree_oracle, 20, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, printed in the run summary."""

    def record(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
