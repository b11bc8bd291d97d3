import logging

import pytest

from pia_qlc.pia import PiaConfig, run_pia
from pia_qlc.problem import make_example_problem

REF_N = 101


@pytest.fixture(scope="session")
def example():
    return make_example_problem()


@pytest.fixture(scope="session")
def ref_grid(example):
    return example.grid(REF_N)


@pytest.fixture(scope="session")
def ref_run(example, ref_grid):
    logging.getLogger("pia_qlc").setLevel(logging.ERROR)
    return run_pia(example, ref_grid, PiaConfig())
