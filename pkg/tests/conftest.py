from __future__ import annotations

import pytest

from prediql.campaign import CampaignConfig, run_campaign_full
from prediql.fixture import FOREIGN_IDS, FIXTURE_IR, start_fixture


@pytest.fixture
def fixture_handle():
    handle = start_fixture()
    yield handle
    handle.stop()


@pytest.fixture
def fixture_client(fixture_handle):
    with fixture_handle.client() as client:
        yield client


@pytest.fixture
def fixture_ir():
    return FIXTURE_IR


def fixture_campaign(**overrides):
    """One campaign against a fresh in-process testbed (data is reset per run)."""
    handle = start_fixture()
    settings = {"rate_limit": None, "foreign_ids": FOREIGN_IDS, "max_episodes": 200, "seed": 7, **overrides}
    config = CampaignConfig(endpoint=handle.url, **settings)
    with handle.client() as client:
        return run_campaign_full(config, client, figures=False)


@pytest.fixture
def run_fixture_campaign():
    return fixture_campaign


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
