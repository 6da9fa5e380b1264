import numpy as np
import pytest
from skimage import data

from condtrans.imaging import extract_patches


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def camera():
    return data.camera().astype(np.float64)


@pytest.fixture(scope="session")
def desk_y(camera):
    """8x8 non-overlapping mean-subtracted patches of one 512x512 image: (64, 4096)."""
    y, _ = extract_patches(camera, 8, stride=8, subtract_mean=True)
    return y


@pytest.fixture(scope="session")
def crop128(camera):
    return camera[192:320, 192:320].copy()


# one PASS/FAIL line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
