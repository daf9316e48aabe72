from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from cropmap.indices import S1_BANDS, S2_BANDS
from cropmap.rastercube import CubeManifest, TimeSeriesCube
from cropmap.synthgen import default_scene_spec, generate_scene


def make_cube(width=8, height=6, n_dates=10, bands=S2_BANDS, year=2018, seed=0, cloud=0.3, lo=0.01, hi=0.5):
    rng = np.random.default_rng(seed)
    start = date(year, 1, 5)
    step = 360 // max(n_dates, 1)
    dates = [start + timedelta(days=i * step) for i in range(n_dates)]
    values = rng.uniform(lo, hi, size=(n_dates, len(bands), height, width)).astype(np.float32)
    valid = rng.random((n_dates, height, width)) >= cloud
    return TimeSeriesCube(CubeManifest(width, height, dates, tuple(bands), 10.0, year), values, valid)


def make_sar(width=8, height=6, n_dates=10, year=2018, seed=1):
    return make_cube(width, height, n_dates, S1_BANDS, year, seed, cloud=0.1, lo=0.001, hi=0.2)


@pytest.fixture(scope="session")
def small_scene():
    spec = default_scene_spec(seed=11, width=64, height=64, years=(2018, 2019), drift=(0.0, 0.0),
                              labeled_polygons=30, min_polygons_per_class=3, n_dates=12)
    return generate_scene(spec)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
