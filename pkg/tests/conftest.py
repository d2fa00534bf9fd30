import pytest
import torch

from casft.config import ExperimentConfig
from casft.dataset import prepare

torch.set_num_threads(1)


def tiny_config(**overrides) -> ExperimentConfig:
    """A configuration small enough to train in seconds."""
    base = ExperimentConfig()
    syn = dict(base.data.synthetic, n=90, n_users=400)
    values = {
        "data.synthetic": syn, "data.max_seq_len": 24,
        "embed.n_points": 4, "embed.d_g": 8,
        "model.d_attn": 8, "model.d_h": 6, "model.head_width": 16,
        "ode.method": "rk4", "ode.step": 0.25,
        "diff.K": 20, "diff.ddim_steps": 5, "diff.width": 16, "diff.layers": 2,
        "train.epochs": 3, "train.batch_size": 16, "train.patience": 5,
    }
    values.update(overrides)
    return base.with_overrides(**values)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_data(tiny_cfg):
    return prepare(tiny_cfg)


# acceptance criteria register one line each; printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
