import numpy as np
import pytest

import fairsched as fs


@pytest.fixture
def example1():
    """Three-agent affine instance with a non-unique max-min face.

    J1 = 4 - t, J2 = J3 = 1.5 - t over sum(r) <= 1.5, 0 <= r <= 1. The value
    is 3, attained on {r1 = 1, r2 + r3 <= 0.5}; the projected dynamics settle
    at (1, 0.25, 0.25).
    """
    costs = fs.AffineCostModel([4.0, 1.5, 1.5], [1.0, 1.0, 1.0])
    region = fs.FeasibleRegion(1.5, np.zeros(3), np.ones(3))
    return costs, region


@pytest.fixture
def scalar_unit_process():
    """Scalar A=0, Q=1, C=1, R=1: Pbar = 1/2, J(r) = 1 - r/2, limit 1."""
    return fs.ProcessModel(A=[[0.0]], Q=[[1.0]])


@pytest.fixture(scope="session")
def bench_config():
    return fs.load_config(fs.fixture_path("paper_sec4"))


@pytest.fixture(scope="session")
def bench_instance(bench_config):
    cfg = bench_config
    n = len(cfg.processes)
    region = fs.FeasibleRegion(cfg.total_rate, np.zeros(n), np.ones(n))
    mask = np.array([not fs.classify_stability(p.A) for p in cfg.processes])
    costs = fs.CurveCostModel.from_processes(cfg.processes, unstable_floor=cfg.solver.eta)
    return cfg, region, costs, mask
