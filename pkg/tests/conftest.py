"""Shared fixtures: small digit datasets and network configs sized for tests."""

import pytest

from seccgan.models import NetConfig
from seccgan.toydata import make_digit_datasets

TINY_NET = NetConfig(
    z_dim=8, image_size=32, channels=1, num_classes=10,
    base_width=8, classifier_depth=1,
)


@pytest.fixture(scope="session")
def digit_sets():
    """(train, test) digit datasets, small but large enough to learn from."""
    return make_digit_datasets(400, 200, seed=0)


@pytest.fixture
def tiny_net_cfg():
    return TINY_NET
