from __future__ import annotations

import random

import pytest
from PIL import Image, ImageDraw

from collage_agent.plan_model import GridLayout, ProductInput

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    previous = _CRITERIA.get(number, (title, "PASS"))[1]
    if report.failed:
        status = "FAIL"
    elif report.skipped and report.when != "teardown":
        status = "SKIP"
    else:
        status = previous
    if previous == "FAIL":
        status = "FAIL"
    _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")


def make_packshot(size: int = 256) -> Image.Image:
    img = Image.new("RGB", (size, size), "white")
    draw = ImageDraw.Draw(img)
    draw.rectangle((size * 0.35, size * 0.15, size * 0.65, size * 0.85), fill=(205, 120, 70))
    draw.rectangle((size * 0.4, size * 0.05, size * 0.6, size * 0.15), fill=(40, 40, 40))
    return img


def make_grid(layout: GridLayout, seed: int, panel: int = 64) -> Image.Image:
    """Grid whose panels are distinct random flat colors."""
    rng = random.Random(seed)
    img = Image.new("RGB", (panel * layout.cols, panel * layout.rows))
    for i in range(layout.panel_count):
        r, c = divmod(i, layout.cols)
        color = tuple(rng.randrange(256) for _ in range(3))
        img.paste(color, (c * panel, r * panel, (c + 1) * panel, (r + 1) * panel))
    return img


@pytest.fixture
def packshot():
    return make_packshot()


@pytest.fixture
def product(packshot):
    return ProductInput(packshot, "Hand Cream")


@pytest.fixture
def layout():
    return GridLayout.of(2, 2)
