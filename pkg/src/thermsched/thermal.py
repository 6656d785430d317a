"""Per-tile power and the stochastic RC-lattice temperature model.

One lumped thermal node per tile (core plus its router). Each node leaks to
ambient through ``r_vert``, exchanges heat with its lateral neighbours through
``r_lat`` and, on die-boundary sides, sheds heat into the spreader overhang
through ``r_edge`` per exposed side. Integration is explicit Euler with a
Gaussian perturbation added every substep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .topology import Mesh
from .workload import DEFAULT_LEVELS, VFLevel


class ThermalConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ThermalParams:
    t_amb: float = 318.0  # K
    r_vert: float = 2.0  # K/W
    r_lat: float = 3.0  # K/W
    capacitance: float = 2.0  # J/K
    dt: float = 1e-3  # s
    sigma: float = 0.5  # K / sqrt(s)
    r_edge: float | None = 4.0  # K/W per exposed side; None disables the boundary path

    def validate(self) -> None:
        for name in ("r_vert", "r_lat", "capacitance", "dt"):
            if getattr(self, name) <= 0:
                raise ThermalConfigError(f"{name} must be positive")
        if self.sigma < 0:
            raise ThermalConfigError("sigma must be nonnegative")
        if self.r_edge is not None and self.r_edge <= 0:
            raise ThermalConfigError("r_edge must be positive or None")
        if not self.dt < self.capacitance * self.r_vert / 2:
            raise ThermalConfigError(
                f"dt={self.dt} violates explicit-Euler bound C*R_vert/2={self.capacitance * self.r_vert / 2}")
        # Gershgorin bound on the full conductance matrix
        g_max = 1 / self.r_vert + 8 / self.r_lat + (2 / self.r_edge if self.r_edge else 0.0)
        if not self.dt * g_max / self.capacitance < 2:
            raise ThermalConfigError(f"dt={self.dt} too large for lateral coupling (need < {2 * self.capacitance / g_max:.3g})")


@dataclass(frozen=True)
class PowerParams:
    p_static: float = 2.0  # W, core leakage
    p_dyn_max: float = 14.0  # W, core dynamic at the top V-F level
    p_rtr_static: float = 0.5  # W
    p_rtr_dyn: float = 3.0  # W at full injection
    levels: tuple[VFLevel, ...] = DEFAULT_LEVELS

    def dyn_power(self, level: int) -> float:
        """Busy-core dynamic power, scaled by V^2 f relative to the top level."""
        try:
            lv = self.levels[level]
        except (IndexError, TypeError):
            raise KeyError(f"unknown V-F level {level!r}") from None
        top = max(self.levels, key=lambda v: v.voltage ** 2 * v.freq)
        return self.p_dyn_max * (lv.voltage ** 2 * lv.freq) / (top.voltage ** 2 * top.freq)


def tile_power(busy: bool, level: int, injection_sum: float,
               params: PowerParams = PowerParams()) -> float:
    if injection_sum < 0:
        raise ValueError("injection_sum must be nonnegative")
    dyn = params.dyn_power(level)
    return (params.p_static + (dyn if busy else 0.0) + params.p_rtr_static
            + params.p_rtr_dyn * min(injection_sum, 1.0))


@dataclass
class ThermalField:
    temps: np.ndarray  # K, one node per tile
    t_amb: float

    @classmethod
    def ambient(cls, n_tiles: int, t_amb: float) -> "ThermalField":
        return cls(np.full(n_tiles, float(t_amb)), float(t_amb))

    def copy(self) -> "ThermalField":
        return ThermalField(self.temps.copy(), self.t_amb)


def peak_temperature(field: ThermalField | np.ndarray) -> float:
    temps = field.temps if isinstance(field, ThermalField) else np.asarray(field)
    if temps.size == 0:
        raise ValueError("empty thermal field")
    return float(temps.max())


def temperature_margin(field: ThermalField | np.ndarray | float, t_th: float) -> float:
    if t_th <= 0:
        raise ValueError("threshold must be positive")
    peak = field if isinstance(field, (int, float)) else peak_temperature(field)
    return max(t_th - peak, 0.0)


class RCLattice:
    """Thermal network over a set of tiles; advances a temperature vector in ``dt`` substeps."""

    def __init__(self, neighbors: np.ndarray, exposed: np.ndarray, params: ThermalParams,
                 backend: str | None = None):
        params.validate()
        self.params = params
        self.nbr = np.ascontiguousarray(neighbors, dtype=np.int32)
        if self.nbr.ndim != 2 or self.nbr.shape[1] != 4:
            raise ValueError("neighbor table must be (M, 4)")
        exposed = np.asarray(exposed, dtype=float)
        if params.r_edge is None:
            self.g_edge = np.zeros(len(self.nbr))
        else:
            self.g_edge = np.ascontiguousarray(exposed / params.r_edge)
        self._advance = kernels.advance if backend is None else kernels.get_advance(backend)
        self.step_gain = params.dt / params.capacitance
        self.noise_scale = params.sigma * np.sqrt(params.dt)
        self._no_noise = np.zeros((0, len(self.nbr)))

    @classmethod
    def for_mesh(cls, mesh: Mesh, params: ThermalParams, backend: str | None = None) -> "RCLattice":
        return cls(mesh.neighbor_table(), mesh.exposed_sides(), params, backend)

    @classmethod
    def isolated(cls, params: ThermalParams, n_tiles: int = 1) -> "RCLattice":
        """Tiles with no lateral coupling and no boundary path."""
        return cls(np.full((n_tiles, 4), -1, dtype=np.int32), np.zeros(n_tiles), params)

    @property
    def size(self) -> int:
        return len(self.nbr)

    def advance(self, temps: np.ndarray, powers: np.ndarray, n_steps: int,
                rng: np.random.Generator | None, t_th: float) -> tuple[float, float, float]:
        """Step ``temps`` in place ``n_steps`` times under constant ``powers``.

        Returns the trapezoidal integrals of the margin and of the peak over the
        stepped interval, plus the final peak.
        """
        if n_steps <= 0:
            peak = float(temps.max())
            return 0.0, 0.0, peak
        if rng is not None and self.noise_scale > 0:
            noise = rng.standard_normal((n_steps, self.size))
            noise *= self.noise_scale
        else:
            noise = self._no_noise
        p = self.params
        return self._advance(temps, np.ascontiguousarray(powers, dtype=float), self.nbr,
                             self.g_edge, p.t_amb, p.r_vert, p.r_lat, self.step_gain,
                             noise, int(n_steps), float(t_th), p.dt)

    def advance_time(self, temps: np.ndarray, powers: np.ndarray, duration: float,
                     rng: np.random.Generator | None, t_th: float) -> tuple[float, float, float]:
        """Step ``temps`` over an arbitrary ``duration``: whole substeps, then one short step.

        The short step uses the same Euler update with ``dt`` replaced by the
        remainder (and the noise variance scaled to match), so integrals cover
        exactly ``duration`` seconds.
        """
        if duration < 0:
            raise ValueError("negative duration")
        p = self.params
        n = int(duration / p.dt + 1e-9)
        rest = duration - n * p.dt
        int_m, int_p, peak = self.advance(temps, powers, n, rng, t_th)
        if rest > 1e-12:
            if rng is not None and self.noise_scale > 0:
                noise = rng.standard_normal((1, self.size)) * (p.sigma * np.sqrt(rest))
            else:
                noise = self._no_noise
            m2, p2, peak = self._advance(temps, np.ascontiguousarray(powers, dtype=float), self.nbr,
                                         self.g_edge, p.t_amb, p.r_vert, p.r_lat, rest / p.capacitance,
                                         noise, 1, float(t_th), rest)
            int_m += m2
            int_p += p2
        return int_m, int_p, peak


def step_thermal(field: ThermalField, powers: Sequence[float], lattice: RCLattice, duration: float,
                 rng: np.random.Generator | None = None, t_th: float = 358.0) -> ThermalField:
    """Return the field after ``duration`` seconds (a whole number of substeps)."""
    n = duration / lattice.params.dt
    n_steps = int(round(n))
    if abs(n - n_steps) > 1e-6:
        raise ValueError(f"duration {duration} is not a multiple of dt={lattice.params.dt}")
    out = field.copy()
    lattice.advance(out.temps, np.asarray(powers, dtype=float), n_steps, rng, t_th)
    return out
