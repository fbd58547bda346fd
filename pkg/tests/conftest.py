"""Shared fixtures: tiny scan setups and the acceptance summary printer."""

import numpy as np
import pytest

from spectfield.geometry import CircularOrbit, make_geometry
from spectfield.phantom import PhantomSpec, SphereSpec

# acceptance tests register one line each; printed at the end of the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture
def small_geometry():
    """16x16 detector, 8 views on a circle; grid is 16^3."""
    return make_geometry(n_views=8, orbit=CircularOrbit(radius_mm=60.0),
                         det_nu=16, det_nv=16, det_pixel_mm=4.8)


@pytest.fixture
def small_phantom_spec():
    """Body plus one warm sphere, sized to fit a 16^3 grid at 4.8 mm."""
    return PhantomSpec(
        semi_axes_mm=(30.0, 25.0, 20.0),
        background_conc=0.05,
        spheres=[SphereSpec(center_mm=(10.0, 0.0, 0.0), volume_ml=2.0, conc=0.4)],
    )


def rng(seed=0):
    return np.random.default_rng(seed)
