"""Shared fixtures: the bundled test network and its reference orbits."""
from pathlib import Path

import pytest

from gasmpc.css import solve_css
from gasmpc.network import load_network

CONFIG_DIR = Path(__file__).resolve().parent.parent / "src" / "gasmpc" / "configs"
NETWORK_PATH = CONFIG_DIR / "testnet.json"

PERIOD_STEPS = 24
DT_SECONDS = 3600.0


@pytest.fixture(scope="session")
def net():
    return load_network(NETWORK_PATH)


@pytest.fixture(scope="session")
def css_nominal(net):
    css = solve_css(net, PERIOD_STEPS, DT_SECONDS)
    assert css.success, css.status
    return css


@pytest.fixture(scope="session")
def css_all_levels(net, css_nominal):
    out = {"nominal": css_nominal}
    for level in ("min", "max"):
        css = solve_css(net, PERIOD_STEPS, DT_SECONDS, demand_level=level)
        assert css.success, css.status
        out[level] = css
    return out
