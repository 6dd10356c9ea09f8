import numpy as np
import pytest

from qlrom import fom
from qlrom.operators import QuadraticOperators, symmetrize_quadratic
from qlrom.rom import integrate, rhs
from qlrom.snapshots import SnapshotDataset, TimeGrid, block_layout


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)


def random_quadratic(d, rng, stable_margin=2.0, h_scale=0.2, c_scale=0.3):
    """A random quadratic system with a Hurwitz linear part."""
    A = rng.normal(size=(d, d))
    shift = np.max(np.real(np.linalg.eigvals(A))) + stable_margin
    A = A - shift * np.eye(d)
    H = symmetrize_quadratic(h_scale * rng.normal(size=(d, d * d)))
    C = c_scale * rng.normal(size=d)
    return QuadraticOperators(A, H, C)


def dataset_from_ops(ops, x0, grid, method="rk45-adaptive", **kwargs):
    """Integrate a quadratic system and attach exact RHS derivatives."""
    tr = integrate(ops, x0, grid, method=method, **kwargs)
    assert not tr.diverged
    deriv = np.column_stack([rhs(ops, tr.values[:, i]) for i in range(tr.values.shape[1])])
    return SnapshotDataset(tr.values, grid, block_layout([("x", ops.d)]), deriv)


@pytest.fixture(scope="session")
def reactor_dataset():
    """Default reactor start-up run, shared across tests (generation ~2 s)."""
    cfg = fom.ReactorSurrogateConfig()
    grid = TimeGrid.linspace(*fom.DEFAULT_REACTOR_GRID)
    return fom.generate_dataset("reactor", cfg, grid, "implicit-trbdf")


@pytest.fixture(scope="session")
def burgers_dataset():
    """Burgers n=100 training run with exact derivatives."""
    cfg = fom.BurgersConfig(n=100)
    grid = TimeGrid.linspace(*fom.DEFAULT_BURGERS_GRID)
    return fom.generate_dataset("burgers", cfg, grid, "rk45-adaptive")
