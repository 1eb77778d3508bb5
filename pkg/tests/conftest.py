import numpy as np
import pytest

from pegassembly.calibration import collect_samples
from pegassembly.config import ExperimentConfig
from pegassembly.pipeline import build_scene


@pytest.fixture()
def cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def session_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def scene(session_cfg):
    return build_scene(session_cfg)


@pytest.fixture(scope="session")
def sample_set_full(session_cfg):
    """The paper-scale 24x16 embodied collection run (shared: ~3 s)."""
    ws = session_cfg.workspace_spec()
    geom = session_cfg.task_geometry()
    return collect_samples(ws, geom, m=24, n=16, seed=0)


@pytest.fixture(scope="session")
def sample_set_small(session_cfg):
    ws = session_cfg.workspace_spec()
    geom = session_cfg.task_geometry()
    return collect_samples(ws, geom, m=5, n=2, seed=0)


def rand_pose(rng, span=0.5):
    from pegassembly.geometry import Pose

    return Pose(
        x=float(rng.uniform(-span, span)),
        y=float(rng.uniform(-span, span)),
        z=float(rng.uniform(-span, span)),
        rz=float(rng.uniform(-np.pi, np.pi)),
    )
