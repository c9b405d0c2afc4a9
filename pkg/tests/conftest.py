import pytest
import torch

from zerokey.data import ingest_dataset, write_toy_corpus

torch.set_num_threads(1)

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_corpus")
    write_toy_corpus(root, count=120, size=64, seed=0)
    return root


@pytest.fixture(scope="session")
def toy_set(toy_dir):
    return ingest_dataset(toy_dir, 64)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
