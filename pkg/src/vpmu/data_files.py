"""Loaders for the bundled network, scenario and link calibration files."""

from __future__ import annotations

from importlib import resources

from .grid import GridModel, parse_cdf
from .netsim import LinkSpec, parse_links
from .pmu import Scenario, load_scenario

GRID_FILE = "ieee14cdf.txt"
SCENARIO_FILE = "scenario14.csv"
LINKS_FILE = "links_calibrated.cfg"


def _read(name: str) -> str:
    return (resources.files("vpmu") / "data" / name).read_text()


def default_grid_text() -> str:
    return _read(GRID_FILE)


def default_grid() -> GridModel:
    return parse_cdf(default_grid_text())


def default_scenario() -> Scenario:
    return load_scenario(_read(SCENARIO_FILE))


def calibrated_links() -> dict[str, LinkSpec]:
    return parse_links(_read(LINKS_FILE))
