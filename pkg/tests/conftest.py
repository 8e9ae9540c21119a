import sys

import numpy as np
import pytest
from PIL import Image, ImageDraw

from sparseviews.features import FeatureParams
from sparseviews.layout import ModalityLayout
from sparseviews.solver import ProblemInstance

SMALL_PARAMS = FeatureParams(resize_edge=32, hog_cell=8, hog_block=2)


def random_instance(rng, n, d, m, scale=1.0):
    """Random instance with ``m`` nearly equal blocks covering ``d`` columns."""
    sizes = [d // m + (i < d % m) for i in range(m)]
    layout = ModalityLayout(tuple((f"b{i}", s) for i, s in enumerate(sizes)))
    X = scale * rng.standard_normal((n, d)) / np.sqrt(d)
    o = scale * rng.standard_normal(d) / np.sqrt(d)
    return ProblemInstance(X, o, layout)


def _draw_object(category, angle, size=48):
    """Render one view: a category-specific textured shape, rotated by ``angle``."""
    colors = [(200, 40, 40), (40, 180, 60), (50, 70, 210)]
    img = Image.new("RGB", (size, size), (230, 230, 220))
    draw = ImageDraw.Draw(img)
    c = colors[category % len(colors)]
    if category % 3 == 0:
        draw.rectangle([12, 12, 36, 36], fill=c)
        for x in range(12, 36, 4):
            draw.line([x, 12, x, 36], fill=(90, 10, 10))
    elif category % 3 == 1:
        draw.ellipse([10, 10, 38, 38], fill=c)
        draw.ellipse([18, 18, 30, 30], fill=(250, 250, 100))
    else:
        draw.polygon([(24, 6), (42, 40), (6, 40)], fill=c)
        for y in range(14, 40, 6):
            draw.line([6, y, 42, y], fill=(20, 20, 90))
    return img.rotate(angle, resample=Image.BILINEAR, fillcolor=(230, 230, 220))


def make_image_dataset(root, categories=3, views=6, flat=False):
    root.mkdir(parents=True, exist_ok=True)
    for k in range(categories):
        for v in range(views):
            img = _draw_object(k, 15 * v)
            if flat:
                img.save(root / f"obj{k + 1}__{v * 5}.png")
            else:
                folder = root / f"cat{k}"
                folder.mkdir(exist_ok=True)
                img.save(folder / f"view{v:02d}.png")
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def image_dataset(tmp_path_factory):
    return make_image_dataset(tmp_path_factory.mktemp("data") / "tiny")


@pytest.fixture
def small_params():
    return SMALL_PARAMS


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance")
    for name, status, detail in results:
        terminalreporter.write_line(f"[{status}] {name}: {detail}")
