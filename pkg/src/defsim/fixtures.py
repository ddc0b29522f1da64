"""Access to the bundled example networks and scenarios."""

from importlib.resources import files
from pathlib import Path


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled data file, e.g. 'single_pipe.network.json'."""
    p = files("defsim").joinpath("data", name)
    return Path(str(p))


def bundled_names() -> list[str]:
    return sorted(p.name for p in Path(str(files("defsim").joinpath("data"))).glob("*.json"))
