import pytest
import torch

from deepoint.annopipe import annotate_session
from deepoint.dataset import Dataset
from deepoint.simkit import make_benchmark, make_splits

torch.set_num_threads(1)


def build_dataset(n_rooms=1, n_actors=2, duration_s=20.0, n_cameras=3, seed=0, mode="T"):
    sessions = make_benchmark(n_rooms=n_rooms, n_actors=n_actors, duration_s=duration_s, n_cameras=n_cameras, seed=seed)
    ann = {s.session_id: annotate_session(s) for s in sessions}
    splits = make_splits([s.truth for s in sessions], mode)
    return Dataset({s.session_id: s for s in sessions}, ann, splits)


@pytest.fixture(scope="session")
def tiny_dataset():
    return build_dataset()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
