"""Sampled time series of the full system state: the common output
currency of every solver, fed to the comparison harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DefsimError


def column_names(system, layout) -> list[str]:
    """Layout-ordered variable names.

    Convention: ``pipe.<id>.pi.<n>`` / ``pipe.<id>.m.<n>`` for grid-point
    states, ``node.<id>.pi`` / ``node.<id>.m`` for nodal pressure and
    injection, ``bus.<id>.e`` / ``bus.<id>.f`` for rectangular voltage
    parts and ``bus.<id>.pcp`` for unknown coupled injections.
    """
    names = []
    for j, p in enumerate(system.gas.pipelines):
        npts = layout.n_points[j]
        names.extend(f"pipe.{p.id}.pi.{n}" for n in range(npts))
        names.extend(f"pipe.{p.id}.m.{n}" for n in range(npts))
    names.extend(f"node.{n.id}.pi" for n in system.gas.nodes)
    names.extend(f"node.{n.id}.m" for n in system.gas.nodes)
    names.extend(f"bus.{b.id}.e" for b in system.eps.buses)
    names.extend(f"bus.{b.id}.f" for b in system.eps.buses)
    names.extend(f"bus.{bid}.pcp" for bid in system.pcp_buses())
    return names


def sample_grid(horizon_s: float, sample_dt: float) -> np.ndarray:
    """Uniform sample times covering [0, horizon]. The horizon is always the
    final sample; sample_dt should divide it for a perfectly uniform grid."""
    if sample_dt <= 0:
        raise DefsimError("sample spacing must be positive")
    n = horizon_s / sample_dt
    if abs(n - round(n)) < 1e-9 * max(1.0, n):
        times = np.arange(int(round(n)) + 1) * sample_dt
    else:
        times = np.append(np.arange(int(np.floor(n)) + 1) * sample_dt, horizon_s)
    times[-1] = horizon_s
    return times


@dataclass
class Trajectory:
    times: np.ndarray
    columns: list
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.times.shape[0], len(self.columns)):
            raise DefsimError(
                f"trajectory shape {self.values.shape} does not match "
                f"{self.times.shape[0]} times x {len(self.columns)} columns"
            )
        if np.any(np.diff(self.times) <= 0):
            raise DefsimError("trajectory sample times must be strictly increasing")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError as exc:
            raise KeyError(f"no column '{name}'") from exc

    def has_column(self, name: str) -> bool:
        return name in self.columns
