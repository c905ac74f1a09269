import pytest

from membranecal.sim import NoiseModel, PhantomScene, protocol_poses

SMALL_DIMS = (61, 61, 61)
SMALL_SCALE = 1.5


@pytest.fixture(scope="session")
def scene():
    return PhantomScene.default()


@pytest.fixture(scope="session")
def small_scene():
    return PhantomScene.default(dims=SMALL_DIMS, scale=SMALL_SCALE)


@pytest.fixture(scope="session")
def noiseless():
    return NoiseModel.noiseless()


@pytest.fixture(scope="session")
def poses(scene):
    return protocol_poses(scene, seed=1)


@pytest.fixture(scope="session")
def small_poses(small_scene):
    return protocol_poses(small_scene, seed=1)


SMALL_CONFIG = """
scene.dims = 61 61 61
scene.scale = 1.5
noise.pose_noise_rms = 0
bead.volumes_per_side = 2
solver.restarts = 10
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.conf"
    path.write_text(SMALL_CONFIG)
    return path
