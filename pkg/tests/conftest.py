import math
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bvloc.config import Config
from bvloc.pipeline import bv_image, cached_bank
from bvloc.synth import synth_scene

settings.register_profile(
    "default", deadline=None, max_examples=100, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

G, C = 0.4, 50.0
D = 250
CENTER = C / G - 0.5


@pytest.fixture(scope="session")
def cfg():
    return Config()


@pytest.fixture(scope="session")
def bank(cfg):
    return cached_bank(D, cfg.bank)


@pytest.fixture(scope="session")
def scene():
    return synth_scene(0)


@pytest.fixture(scope="session")
def scene_image(scene, cfg):
    return bv_image(scene, cfg)


def rot_deg(deg):
    return math.radians(deg)


def rng(seed=0):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, collected by tests/test_acceptance.py
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
