import pytest

from lcmt.config import TrainConfig
from lcmt.persistence import with_overrides

TINY = [
    "data.n=160", "data.test_n=100", "data.n_labeled=6",
    "model.feature_layers=16,16",
    "schedule.total_epochs=8", "schedule.mt_only_epochs=4", "schedule.lc_rampup_length=2",
    "schedule.lr_decay_start=6", "schedule.lr_decay_length=4",
    "batch.labeled=4", "batch.unlabeled=32",
]


def tiny_config(*overrides: str) -> TrainConfig:
    """A two-moons run small enough to train in well under a second."""
    return with_overrides(TrainConfig(), TINY + list(overrides))


@pytest.fixture
def tiny():
    return tiny_config


# criterion number -> (title, passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} [{title}]: {'PASS' if ok else 'FAIL'}  {detail}")
