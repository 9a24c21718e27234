import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from srdetbench.synth import make_toy_dataset  # noqa: E402

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str):
    _CRITERIA[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return make_toy_dataset(root, n_sequences=3, frames_per_sequence=3, seed=0)


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    from srdetbench.rlfn import SRModelConfig, build_model, save_checkpoint

    path = tmp_path_factory.mktemp("ckpt") / "tiny_x2.srdb"
    save_checkpoint(build_model(SRModelConfig.tiny(2), seed=0), path)
    return path
