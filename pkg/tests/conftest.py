import numpy as np
import pytest

from neurosym.data import SYNTHETIC_PROGRAM_CHANNELS, SyntheticConfig, feature_augment, generate_synthetic
from neurosym.dsl import FeatureSchema, enumerate_children, init_params, trajectory_grammar
from neurosym.dsl.semantics import Program


def random_complete(grammar, max_depth, rng):
    """Walk the program graph from the root, picking uniformly among children."""
    arch = grammar.root()
    while not arch.is_complete:
        kids = enumerate_children(arch, grammar, max_depth)
        arch = kids[rng.integers(len(kids))]
    return arch


def random_program(grammar, max_depth, rng, scale=1.0):
    arch = random_complete(grammar, max_depth, rng)
    params = init_params(arch, rng)
    for p in params.values():
        p.data[:] = rng.normal(scale=scale, size=p.data.shape)
    return Program(arch, params, grammar.schema)


@pytest.fixture(scope="session")
def toy_schema():
    return FeatureSchema(("a", "b", "c"), 5)


@pytest.fixture(scope="session")
def toy_grammar(toy_schema):
    return trajectory_grammar(toy_schema)


@pytest.fixture(scope="session")
def small_synthetic():
    splits = generate_synthetic(SyntheticConfig(n_train=400, n_val=100, n_test=200, seed=11))
    return {name: feature_augment(ds, SYNTHETIC_PROGRAM_CHANNELS) for name, ds in splits.items()}


# acceptance report ------------------------------------------------------------
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
