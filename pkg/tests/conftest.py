import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).resolve().parent))

from avgmdp.instances import random_model  # noqa: E402

settings.register_profile("repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"


@st.composite
def small_models(draw, max_states=3, max_actions=3, known=True, min_states=1):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(min_states, max_states))
    rng = np.random.default_rng(seed)
    det = draw(st.sampled_from([0.0, 0.3]))
    return random_model(rng, n, max_actions, density=0.7, known=known, deterministic_fraction=det)


@pytest.fixture
def models_dir():
    return MODELS


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
