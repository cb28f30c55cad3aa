import time

import pytest

from carrygap.pipeline import RunConfig, Session
from carrygap.synth_oracle import SynthWorldConfig, gen_world

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def world(tmp_path_factory):
    """Ten-year, two-market world at the default planted model (in-sample R2 near 0.40)."""
    t0 = time.perf_counter()
    w = gen_world(SynthWorldConfig(), tmp_path_factory.mktemp("world"))
    w.gen_seconds = time.perf_counter() - t0
    return w


@pytest.fixture(scope="session")
def session(world, tmp_path_factory):
    cfg = RunConfig.load(world.out_dir / "config.yaml")
    s = Session(cfg, tmp_path_factory.mktemp("reports"))
    t0 = time.perf_counter()
    s.builder
    s.build_seconds = time.perf_counter() - t0
    return s


@pytest.fixture(scope="session")
def sharp_world(tmp_path_factory):
    """Same planted windows with a 0.97 signal share, for window-level identification."""
    return gen_world(SynthWorldConfig(target_r2=0.97), tmp_path_factory.mktemp("sharp"))


@pytest.fixture(scope="session")
def sharp_session(sharp_world, tmp_path_factory):
    cfg = RunConfig.load(sharp_world.out_dir / "config.yaml")
    return Session(cfg, tmp_path_factory.mktemp("sharp_reports"))
