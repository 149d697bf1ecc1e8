import numpy as np
import pytest

from kflow.cfm import generate_trajectories, ot_path, train_cfm
from kflow.datasets import eight_gaussians, gauss
from kflow.koopman import TrajectoryData, default_encoder_spec, train_koopman


@pytest.fixture(scope="session")
def vf_small():
    """Lightly trained G->8G OT field shared by module tests (not full quality)."""
    model, losses = train_cfm(
        gauss(), eight_gaussians(), ot_path(), steps=1500, batch=128, seed=101
    )
    return model, losses


@pytest.fixture(scope="session")
def koop_small(vf_small):
    """Lightly trained embedding over vf_small, trajectory source."""
    vf, _ = vf_small
    traj = generate_trajectories(vf, gauss(), 600, seed=102)
    model, log = train_koopman(
        vf,
        TrajectoryData(traj, seed=103),
        steps=1200,
        batch=192,
        seed=104,
        p_learned=28,
        encoder_spec=default_encoder_spec(28, hidden=96, depth=3),
    )
    return model, log, vf


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
