import numpy as np
import pytest

from vos_cascade.geometry import BoundingBox
from vos_cascade.synth import generate_scene, preset


def random_box_pairs(n: int, seed: int = 0) -> list[tuple[BoundingBox, BoundingBox]]:
    """Seeded box pairs: half independent, half overlapping perturbations."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        x, y = rng.uniform(-50, 100, size=2)
        w, h = rng.uniform(1, 60, size=2)
        a = BoundingBox(x, y, w, h)
        if i % 2:
            b = BoundingBox(x + rng.normal(0, w / 3), y + rng.normal(0, h / 3),
                            w * rng.uniform(0.5, 2.0), h * rng.uniform(0.5, 2.0))
        else:
            bx, by = rng.uniform(-50, 100, size=2)
            b = BoundingBox(bx, by, *rng.uniform(1, 60, size=2))
        pairs.append((a, b))
    return pairs


@pytest.fixture(scope="session")
def easy_seq():
    return generate_scene(preset("easy"))


@pytest.fixture(scope="session")
def multi_seq():
    return generate_scene(preset("multi-object"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance criterion lines collected during the session."""
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
