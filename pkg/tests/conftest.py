import json

import pytest
import torch

from sliderkit.backends.toy import build_toy_backend
from sliderkit.encoders import get_encoder
from sliderkit.workspace import DiscoveryConfig, Workspace

from . import _criteria

torch.set_num_threads(1)

PROMPT = "a medium purple square on a bright background"


@pytest.fixture(scope="session")
def backend():
    # trained once, then disk-cached under the sliderkit cache dir
    return build_toy_backend()


@pytest.fixture(scope="session")
def semantic_encoder():
    return get_encoder("toy-semantic")


@pytest.fixture(scope="session")
def oracle_encoder():
    return get_encoder("toy-oracle")


@pytest.fixture(scope="session")
def tiny_config():
    """Small but real discovery config for persistence/service/CLI tests."""
    return DiscoveryConfig(
        prompt=PROMPT,
        num_seeds=24,
        num_sliders=2,
        steps_per_slider=30,
        eval_probes=6,
        eval_seeds=4,
        oracle_encoder_id="toy-oracle",
    )


@pytest.fixture(scope="session")
def tiny_workspace(tmp_path_factory, tiny_config, backend):
    root = tmp_path_factory.mktemp("tiny-ws")
    ws = Workspace(root, tiny_config, backend=backend)
    ws.discover()
    return ws


@pytest.fixture(scope="session")
def tiny_bundle(tiny_workspace):
    return tiny_workspace.bundle()


def pytest_terminal_summary(terminalreporter):
    lines = _criteria.lines()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
