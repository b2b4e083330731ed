import os
from pathlib import Path

import numpy as np
import pytest

# criterion number -> [passed flags], detail lines
_OUTCOMES: dict[int, list[bool]] = {}
_DETAILS: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.fixture
def detail(request):
    """Attach a one-line summary to the criterion of the running test."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str) -> None:
        _DETAILS.setdefault(marker.args[0], []).append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.skipped:
        return
    if report.when == "call" or report.failed:
        _OUTCOMES.setdefault(marker.args[0], []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        verdict = "PASS" if all(_OUTCOMES[number]) else "FAIL"
        text = "; ".join(_DETAILS.get(number, []))
        terminalreporter.write_line(f"criterion {number}: {verdict}" + (f"  ({text})" if text else ""))


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """Paths to (images, labels) IDX files.

    Uses ``PPAN_MNIST_IMAGES`` and ``PPAN_MNIST_LABELS`` when set, otherwise
    converts the 5000 digits bundled with mlxtend.
    """
    images, labels = os.environ.get("PPAN_MNIST_IMAGES"), os.environ.get("PPAN_MNIST_LABELS")
    if images and labels:
        return Path(images), Path(labels)
    mlxtend_data = pytest.importorskip("mlxtend.data")
    from ppan.datagen import write_idx

    pixels, digits = mlxtend_data.mnist_data()
    root = tmp_path_factory.mktemp("mnist")
    write_idx(root / "images.idx", pixels.reshape(-1, 28, 28).astype(np.uint8))
    write_idx(root / "labels.idx", digits.astype(np.uint8))
    return root / "images.idx", root / "labels.idx"
