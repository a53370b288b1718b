import os
from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

DEFAULT_MNIST = Path("/root/data/mnist")


def mnist_dir():
    d = Path(os.environ.get("FASTMETRIC_MNIST_DIR", DEFAULT_MNIST))
    if (d / "train-images-idx3-ubyte").exists() and (d / "t10k-labels-idx1-ubyte").exists():
        return d
    return None


@pytest.fixture(scope="session")
def mnist_path():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found; set FASTMETRIC_MNIST_DIR")
    return d


# one line per acceptance criterion, repeated in the terminal summary
_CRITERIA = {}


@pytest.fixture
def criterion():
    def report(number, title, ok, detail):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number:>2} {status}: {title} | {detail}"
        _CRITERIA[number] = line
        print(line)
        if ok is None:
            pytest.skip(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
