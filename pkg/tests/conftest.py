import numpy as np
import pytest

from efimov.friedrichs import critical_params
from efimov.lattice import ModelParams, TrigPoly
from efimov.quadrature import graded_grid

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fine_grid_n1():
    return graded_grid(1, 16, 14, order=2)


@pytest.fixture(scope="session")
def resonance_n1(fine_grid_n1):
    return critical_params(ModelParams(n=1), TrigPoly.const(1.0), fine_grid_n1, on_grid=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_CONFIGS = {
    "classify": {"command": "classify", "coupling": {"scale": 1.0}, "grid": {"N": 8, "refine_depth": 6}},
    "calibrate": {"command": "calibrate", "grid": {"N": 8, "refine_depth": 6}},
    "friedrichs-spectrum": {"command": "friedrichs-spectrum", "params": {"v1": {"constant": 3.0}},
                            "grid": {"N": 8, "refine_depth": 2}, "K": [[0, 0, 0], [1.0, 0.5, -0.5]]},
    "essential-spectrum": {"command": "essential-spectrum", "coupling": {"scale": 1.0},
                           "grid": {"N": 8, "refine_depth": 3}, "p_resolution": 2},
    "count": {"command": "count", "coupling": {"scale": 0.9}, "grid": {"N": 8, "refine_depth": 2},
              "z_list": [-0.1, -0.01, -0.001]},
    "oracle-check": {"command": "oracle-check", "params": {"v0": {"constant": 2.0}, "v1": {"constant": 1.0}},
                     "grid": {"N": 3}, "z_list": [-40.0, -30.0, -20.0]},
    "expansion-fit": {"command": "expansion-fit", "coupling": {"scale": 1.0, "on_grid": True},
                      "grid": {"N": 8, "refine_depth": 8, "order": 2}, "t0": 0.2, "steps": 5},
    "u-coefficient": {"command": "u-coefficient", "gamma_list": [0.5, 1.0, 2.0]},
    "s-r-limit": {"command": "s-r-limit", "r_list": [5.0, 10.0]},
    "efimov-verify": {"command": "efimov-verify", "coupling": {"scale": 1.0, "on_grid": True},
                      "grid": {"N": 8, "refine_depth": 2}, "z_list": [-0.1, -0.01, -0.001, -0.0001]},
    "singular-part": {"command": "singular-part", "coupling": {"scale": 1.0}, "grid": {"N": 8, "refine_depth": 4},
                      "z_list": [-0.01, -0.0001]},
}


@pytest.fixture
def small_configs():
    return {k: dict(v) for k, v in SMALL_CONFIGS.items()}
