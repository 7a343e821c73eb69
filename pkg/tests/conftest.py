import sys
from pathlib import Path

import numpy as np
import pytest

HELPERS = Path(__file__).parent / "helpers"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def agent_cmd():
    """Command line for the scripted expert agent used in bridge tests."""
    return [sys.executable, str(HELPERS / "replay_agent.py")]
