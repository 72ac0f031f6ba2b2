"""Shared helpers for the demo scripts."""
from importlib import resources

from gnnsfc.topology import load_topology


def bundled_topology(name: str = "internet2.json"):
    return load_topology(resources.files("gnnsfc.data").joinpath(name).read_text())


def bundled_path(name: str):
    return resources.files("gnnsfc.data").joinpath(name)
