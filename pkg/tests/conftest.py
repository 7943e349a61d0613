import numpy as np
import pytest

from mpraudit import AttributeSchema, JointDistribution

# filled by tests/test_acceptance.py; printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def gender_age():
    return AttributeSchema.from_pairs([("gender", ["male", "female"]), ("age", ["young", "old"])])


@pytest.fixture
def three_attr():
    return AttributeSchema.from_pairs(
        [("gender", ["f", "m"]), ("age", ["young", "old"]), ("skin", ["light", "mid", "dark"])]
    )


def random_pm1(rng, rows, cols):
    return rng.choice((-1, 1), size=(rows, cols)).astype(np.int8)


def binary_schema(n):
    return AttributeSchema.from_pairs([(f"a{i}", ["0", "1"]) for i in range(n)])


def perturbed_pair(n_attrs=4, scale=0.1, seed=7):
    """Full-support truth pair: a log-normal perturbation of uniform vs uniform."""
    schema = binary_schema(n_attrs)
    cells = schema.cells()
    rng = np.random.default_rng(seed)
    w = np.exp(scale * rng.standard_normal(len(cells)))
    w /= w.sum()
    p = JointDistribution(schema, {schema.cell_key(c): float(x) for c, x in zip(cells, w)})
    r = JointDistribution(schema, {schema.cell_key(c): 1 / len(cells) for c in cells})
    return p, r
