import time

import numpy as np
import pytest

from relboltz.config import BasisConfig, QuadConfig, RunConfig, SpectrumConfig
from relboltz.pipeline import build_model, compute_branches
from relboltz.semigroup import build_scenario, decay_experiment_multi

SMALL_CONFIG = RunConfig(
    basis=BasisConfig(n_radial=4, l_max=3),
    quadrature=QuadConfig(qmc_samples=1 << 19, seed=777),
    spectrum=SpectrumConfig(k_max=16.0, k_points=81),
)

TINY_CONFIG_DICT = {
    "basis": {"n_radial": 2, "l_max": 2},
    "quadrature": {"qmc_samples": 16384, "seed": 4242},
    "spectrum": {"k_max": 8.0, "k_points": 33},
    "decay": {"scenario": "generic", "t_min": 1.0, "t_max": 1000.0,
              "t_points": 24, "fit_window": [50.0, 1000.0]},
    "tolerances": {"assembly_rtol": 0.5},
}


@pytest.fixture(scope="session")
def small_model():
    model = build_model(SMALL_CONFIG)
    compute_branches(model)
    return model


@pytest.fixture(scope="session")
def default_model():
    """The full default configuration; shared by the acceptance suite."""
    config = RunConfig().validate()
    t0 = time.perf_counter()
    model = build_model(config)
    model.timings["assembly_wall"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    compute_branches(model)
    model.timings["branches_wall"] = time.perf_counter() - t0
    return model


@pytest.fixture(scope="session")
def default_decay(default_model):
    """Both decay scenarios through one shared propagator sweep."""
    model = default_model
    tau0 = model.branches.tau0
    scenarios = [build_scenario("generic", model, d0=1.0, k_support=tau0),
                 build_scenario("microscopic", model, d0=1.0, k_support=tau0)]
    t0 = time.perf_counter()
    series = decay_experiment_multi(scenarios, model, model.config.decay)
    wall = time.perf_counter() - t0
    return {"generic": series[0], "microscopic": series[1],
            "scenarios": {s.id: s for s in scenarios}, "wall": wall}


@pytest.fixture()
def rng():
    return np.random.default_rng(20250808)
