import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ducjcas.channel import ChannelRealization
from ducjcas.harness.config import default_config

settings.register_profile("ducjcas", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ducjcas")


@pytest.fixture(scope="session")
def scenario():
    """Desk-scale default scenario (8x8 BS, 1x1 user, 64 x 32 grid)."""
    return default_config()


@pytest.fixture(scope="session")
def numerology(scenario):
    return scenario.numerology_obj()


@pytest.fixture(scope="session")
def bs_array(scenario):
    return scenario.bs_array()


@pytest.fixture(scope="session")
def user_array(scenario):
    return scenario.user_array()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def los_only_realization(cfg, fading=False, rng=None):
    """User line-of-sight path only, unit reflection factors."""
    return ChannelRealization.draw(
        cfg.scene(),
        cfg.bs_array(),
        cfg.user_array(),
        cfg.numerology_obj(),
        rng if rng is not None else np.random.default_rng(0),
        include_nlos=False,
        fading=fading,
    )


# lines recorded by the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
