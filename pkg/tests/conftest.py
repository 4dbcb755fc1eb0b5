import pytest

from lutfab import fixtures, simulator


@pytest.fixture(scope="session")
def tiny_net():
    return fixtures.tiny_network(seed=0)


@pytest.fixture(scope="session")
def tiny_image(tiny_net):
    return fixtures.random_image(tiny_net, seed=1)


@pytest.fixture(scope="session")
def mnv2_net():
    return fixtures.mobilenetv2_network(seed=0)


@pytest.fixture(scope="session")
def mnv2_image(mnv2_net):
    return fixtures.random_image(mnv2_net, seed=1)


@pytest.fixture(scope="session")
def mnv2_seq_output(mnv2_net, mnv2_image):
    # computed once; the full 224x224 network takes a few seconds
    return simulator.run_network(mnv2_net, mnv2_image)
