import numpy as np
import pytest

from f3kit import load_rules, load_taxonomy


@pytest.fixture(scope="session")
def tennis():
    return load_taxonomy("tennis-singles")


@pytest.fixture(scope="session")
def tennis_rules(tennis):
    return load_rules(tennis)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small deterministic feature-mode dataset shared across tests."""
    from f3kit.simulator import SimConfig, generate

    out = tmp_path_factory.mktemp("tinyds")
    generate(SimConfig(seed=123, num_clips=30), out)
    return out


def seq(tax, strings):
    return [tax.parse_event(s) for s in strings]


@pytest.fixture(scope="session")
def parse_seq():
    return seq
