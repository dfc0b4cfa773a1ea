import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

from extremism_eleven.corpus import Post
from extremism_eleven.itembank import load_item_bank

DAY = 86400


@pytest.fixture(scope="session")
def bank():
    return load_item_bank()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_post(pid, user="u", forum="f", ts=1_500_000_000, text=None, lang=None):
    text = text if text is not None else " ".join(f"w{i}" for i in range(12))
    return Post(pid, user, forum, ts, text, lang)


@pytest.fixture
def post_factory():
    return make_post


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.pytest_terminal_summary_lines():
        terminalreporter.write_line(line)
