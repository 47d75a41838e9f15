import pytest

from streetsplat.model import ModelConfig
from streetsplat.scene_io import SyntheticSceneConfig, generate_synthetic_scene

TINY_MODEL = dict(patch=8, embed_dim=16, enc_depth=1, enc_heads=2, dec_depth=1, dec_heads=2,
                  head_features=8)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(**TINY_MODEL)


@pytest.fixture(scope="session")
def tiny_scenes():
    return [generate_synthetic_scene(SyntheticSceneConfig(seed=s, n_frames=4, resolution=(32, 48),
                                                          supersample=1, lidar_density=0.1))
            for s in (0, 1)]


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
