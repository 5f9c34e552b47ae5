import os

import numpy as np
import pytest

from mucosanet.checkpoint import Checkpoint, save_checkpoint
from mucosanet.data.synthetic import write_synthetic

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    """Eight-class PPM dataset, 4 images per class, 48x48."""
    root = tmp_path_factory.mktemp("synthetic") / "data"
    write_synthetic(str(root), task="target", per_class=4, size=48, seed=0)
    return str(root)


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, synthetic_root):
    """An untrained 32x32 vgg_mini checkpoint over the synthetic class names."""
    from mucosanet.architectures import build_model

    classes = sorted(os.listdir(synthetic_root))
    model = build_model("vgg_mini", len(classes), 32, 1, seed=0)
    path = tmp_path_factory.mktemp("ckpt") / "tiny.ckpt"
    save_checkpoint(Checkpoint.from_model(model, classes), str(path))
    return str(path)


@pytest.fixture
def record_acceptance():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_RESULTS[number] = (passed, detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
