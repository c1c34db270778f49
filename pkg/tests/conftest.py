import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from echoseg.raster import Raster, SectorGeometry

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")



def full_raster(pixels, spacing: float = 0.5) -> Raster:
    """Raster whose sector covers the whole frame."""
    pixels = np.asarray(pixels, dtype=float)
    h, w = pixels.shape
    return Raster(pixels, spacing, SectorGeometry((-2000.0, (w - 1) / 2), 30.0, 1e5))


def disk_mask(shape, center, radius) -> np.ndarray:
    rr, cc = np.indices(shape)
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius ** 2


def ellipse_mask(shape, center, semi_r, semi_c, angle_deg: float = 0.0) -> np.ndarray:
    rr, cc = np.indices(shape, dtype=float)
    dr, dc = rr - center[0], cc - center[1]
    t = np.radians(angle_deg)
    u = dr * np.cos(t) + dc * np.sin(t)
    v = -dr * np.sin(t) + dc * np.cos(t)
    return (u / semi_r) ** 2 + (v / semi_c) ** 2 <= 1.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
