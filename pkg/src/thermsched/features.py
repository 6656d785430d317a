"""Gaussian RBF features for the linear Q approximation.

Two layouts are provided:

* block layout (DVFS-Enabled and the LCT/LDT baselines): RBFs over the nine
  down-sampled, normalized temperatures are copied into the slot of the chosen
  action, every other slot stays zero;
* IR layout: a four-element descriptor of the candidate core (its temperature,
  distance to the chip centre, distance to the hotspot, pairing ratio), each
  element expanded on its own 1-D centre set and combined by outer product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .topology import Mesh, interpolation_weights, xy_route

# temperatures are mapped onto [0, 1] over [T_amb, T_th] of the default thermal model before the RBFs
T_NORM = (318.0, 358.0)

_DEFAULT_BANKS = {
    2: ((0.33, 0.66), 0.09),
    3: ((0.25, 0.5, 0.75), 0.07),
    5: ((0.0, 0.25, 0.5, 0.75, 1.0), 0.05),
}


class FeatureConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RbfBank:
    centers: tuple[float, ...]
    sigma: float

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise FeatureConfigError(f"RBF width must be positive, got {self.sigma}")
        if list(self.centers) != sorted(self.centers) or not self.centers:
            raise FeatureConfigError("centers must be a nonempty ascending sequence")

    @classmethod
    def default(cls, x: int) -> "RbfBank":
        try:
            centers, sigma = _DEFAULT_BANKS[x]
        except KeyError:
            raise FeatureConfigError(f"no default bank for {x} centers (use 2, 3 or 5)") from None
        return cls(centers, sigma)

    @property
    def x(self) -> int:
        return len(self.centers)

    @property
    def norm(self) -> float:
        return 1.0 / math.sqrt(2.0 * math.pi * self.sigma ** 2)

    def activations(self, v, scale: float = 1.0) -> np.ndarray:
        """Unnormalized 1-D Gaussians of ``v`` (scalar or array) against each centre."""
        v = np.asarray(v, dtype=float)[..., None]
        c = np.asarray(self.centers)
        return np.exp(-((v - c) ** 2) / (2.0 * self.sigma ** 2 * scale))

    def soft_assign(self, v) -> np.ndarray:
        """Gaussians divided by their sum over centres (rows sum to 1).

        Shifted by the nearest centre's exponent first, so points far from every
        centre still get a finite, well-spread row.
        """
        v = np.asarray(v, dtype=float)[..., None]
        e = -((v - np.asarray(self.centers)) ** 2) / (2.0 * self.sigma ** 2)
        w = np.exp(e - e.max(axis=-1, keepdims=True))
        return w / w.sum(axis=-1, keepdims=True)

    def expand(self, v, mode: str, n_dims: int) -> np.ndarray:
        """Per-dimension factors of a product kernel in ``n_dims`` dimensions."""
        if mode == "raw":
            return self.activations(v)
        if mode == "scaled":
            return self.activations(v, scale=float(n_dims))
        if mode == "normalized":
            return self.soft_assign(v)
        raise FeatureConfigError(f"unknown RBF mode {mode!r}; choose raw, scaled or normalized")


def rbf(v, omega, sigma: float) -> float:
    """Gaussian kernel ``exp(-|v - omega|^2 / 2 sigma^2) / sqrt(2 pi sigma^2)``."""
    if sigma <= 0:
        raise FeatureConfigError(f"RBF width must be positive, got {sigma}")
    d = np.asarray(v, dtype=float) - np.asarray(omega, dtype=float)
    return float(np.exp(-np.dot(np.ravel(d), np.ravel(d)) / (2.0 * sigma ** 2))
                 / math.sqrt(2.0 * math.pi * sigma ** 2))


def normalize_temps(temps, t_range: tuple[float, float] = T_NORM) -> np.ndarray:
    lo, hi = t_range
    if not hi > lo:
        raise FeatureConfigError(f"empty normalization window {t_range}")
    return np.clip((np.asarray(temps, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


RBF_MODES = ("raw", "scaled", "normalized")


def grid_rbf(v: np.ndarray, bank: RbfBank, mode: str = "raw") -> np.ndarray:
    """All ``x**d`` multivariate RBFs of ``v`` with centres on the bank's grid.

    Index order is row-major over dimensions (dimension 0 most significant).

    * ``raw``: Gaussian kernel with the ``1/sqrt(2 pi sigma^2)`` prefactor;
    * ``scaled``: same, squared distance divided by ``d`` (mean square per dimension);
    * ``normalized``: kernels divided by their sum over the grid, so the
      features are nonnegative and add up to 1 (no prefactor).
    """
    v = np.asarray(v, dtype=float)
    acts = bank.expand(v, mode, len(v))
    out = reduce(lambda a, b: np.outer(a, b).ravel(), acts)
    return out if mode == "normalized" else bank.norm * out


@dataclass
class FeatureVector:
    """Sparse feature vector: ``values`` occupy ``[offset, offset + len(values))``."""

    offset: int
    values: np.ndarray
    dim: int

    def nonzero(self) -> list[tuple[int, float]]:
        return [(self.offset + i, float(v)) for i, v in enumerate(self.values) if v != 0.0]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.offset:self.offset + len(self.values)] = self.values
        return out


def q_hat(theta: np.ndarray, fv: FeatureVector) -> float:
    if fv.dim != len(theta):
        raise ValueError(f"theta has {len(theta)} entries, features {fv.dim}")
    return float(theta[fv.offset:fv.offset + len(fv.values)] @ fv.values)


class BlockBatch:
    """Features of several actions sharing one state vector, one block per action."""

    def __init__(self, blocks: np.ndarray, values: np.ndarray, dim: int):
        self.blocks = blocks
        self.values = values
        self.dim = dim

    def __len__(self) -> int:
        return len(self.blocks)

    def q(self, theta: np.ndarray) -> np.ndarray:
        return theta.reshape(-1, len(self.values))[self.blocks] @ self.values

    def __getitem__(self, i: int) -> FeatureVector:
        g = len(self.values)
        return FeatureVector(int(self.blocks[i]) * g, self.values, self.dim)


class DenseBatch:
    """One dense feature row per action (offset 0)."""

    def __init__(self, rows: np.ndarray):
        self.rows = rows
        self.dim = rows.shape[1]

    def __len__(self) -> int:
        return len(self.rows)

    def q(self, theta: np.ndarray) -> np.ndarray:
        return self.rows @ theta

    def __getitem__(self, i: int) -> FeatureVector:
        return FeatureVector(0, self.rows[i], self.dim)


class BlockFeatures:
    """Temperature-grid RBFs placed in a per-action block.

    ``n_levels`` > 1 gives the DVFS-Enabled layout (action = core x level);
    ``n_levels`` = 1 gives the core-only layout of the LCT/LDT baselines.
    """

    def __init__(self, mesh: Mesh, bank: RbfBank, n_levels: int = 1, mode: str = "raw",
                 t_range: tuple[float, float] = T_NORM):
        if mode not in RBF_MODES:
            raise FeatureConfigError(f"unknown RBF mode {mode!r}")
        self.mesh = mesh
        self.t_range = t_range
        self.bank = bank
        self.n_levels = n_levels
        self.mode = mode
        self.g = bank.x ** 9
        self.n_actions = mesh.size * n_levels
        self.dim = self.g * self.n_actions
        self._w = interpolation_weights(mesh)

    def state_features(self, temps) -> np.ndarray:
        w = self._w @ np.asarray(temps, dtype=float)
        return grid_rbf(normalize_temps(w, self.t_range), self.bank, self.mode)

    def action_index(self, core: int, level: int) -> int:
        return core * self.n_levels + (level if self.n_levels > 1 else 0)

    def batch(self, view, actions) -> BlockBatch:
        phi = self.state_features(view.temps)
        blocks = np.array([self.action_index(a.core, a.level) for a in actions], dtype=np.intp)
        return BlockBatch(blocks, phi, self.dim)


def dvfs_features(state9, core: int, level: int, bank: RbfBank, n_levels: int, n_cores: int,
                  mode: str = "raw") -> FeatureVector:
    """Block feature vector for one (core, level) action, given nine normalized temperatures."""
    phi = grid_rbf(np.asarray(state9, dtype=float), bank, mode)
    g = len(phi)
    return FeatureVector((core * n_levels + level) * g, phi, g * n_levels * n_cores)


def pairing_ratio(core: int, partner_cores: Sequence[int], hotspot: int, mesh: Mesh) -> float:
    """Share of the would-be pairing routes from ``core`` that pass the hotspot's router."""
    if not partner_cores:
        return 0.0
    hits = sum(1 for j in partner_cores if hotspot in xy_route(mesh, core, j))
    return hits / len(partner_cores)


class IRFeatures:
    """Outer product of four 1-D RBF expansions of the candidate core's descriptor."""

    def __init__(self, mesh: Mesh, banks: Sequence[RbfBank], mode: str = "raw",
                 t_range: tuple[float, float] = T_NORM):
        if len(banks) != 4:
            raise FeatureConfigError("IR features need exactly four banks")
        if mode not in RBF_MODES:
            raise FeatureConfigError(f"unknown RBF mode {mode!r}")
        self.t_range = t_range
        self.mesh = mesh
        self.banks = tuple(banks)
        self.mode = mode
        self.dim = int(np.prod([b.x for b in self.banks]))
        # a single Gaussian prefactor for the joint 4-D kernel (geometric mean of the banks')
        self.norm = float(np.prod([b.norm for b in self.banks]) ** (1.0 / len(self.banks)))
        diag = mesh.diagonal
        self._d_center = np.array([math.hypot(*(mesh.positions[i] - mesh.center))
                                   for i in range(mesh.size)]) / diag
        pos = mesh.positions
        self._d_pair = np.hypot(pos[:, None, 0] - pos[None, :, 0], pos[:, None, 1] - pos[None, :, 1]) / diag
        self._on_route = np.zeros((mesh.size, mesh.size, mesh.size), dtype=bool)
        for a in range(mesh.size):
            for b in range(mesh.size):
                self._on_route[a, b, xy_route(mesh, a, b)] = True

    def descriptors(self, view, cores: Sequence[int]) -> np.ndarray:
        """(n, 4) normalized quadruples for the candidate cores."""
        cores = np.asarray(cores, dtype=np.intp)
        temps = np.asarray(view.temps, dtype=float)
        hot = int(np.argmax(temps))
        partners = np.asarray(view.partner_cores, dtype=np.intp)
        if len(partners):
            ratio = self._on_route[cores[:, None], partners[None, :], hot].mean(axis=1)
        else:
            ratio = np.zeros(len(cores))
        return np.column_stack([normalize_temps(temps[cores], self.t_range), self._d_center[cores],
                                self._d_pair[cores, hot], ratio])

    def from_descriptors(self, quad: np.ndarray) -> np.ndarray:
        n = len(self.banks)
        acts = [b.expand(quad[:, i], self.mode, n) for i, b in enumerate(self.banks)]
        out = acts[0]
        for a in acts[1:]:
            out = (out[:, :, None] * a[:, None, :]).reshape(len(quad), -1)
        return out if self.mode == "normalized" else self.norm * out

    def batch(self, view, actions) -> DenseBatch:
        return DenseBatch(self.from_descriptors(self.descriptors(view, [a.core for a in actions])))


def ir_features(view, core: int, banks: Sequence[RbfBank], mesh: Mesh, mode: str = "raw",
                t_range: tuple[float, float] = T_NORM) -> FeatureVector:
    f = IRFeatures(mesh, banks, mode, t_range)
    return FeatureVector(0, f.from_descriptors(f.descriptors(view, [core]))[0], f.dim)


class OneHotFeatures:
    """Tabular indicator features: one weight per (state id, action id)."""

    def __init__(self, n_states: int, n_actions: int):
        self.n_states = n_states
        self.n_actions = n_actions
        self.dim = n_states * n_actions

    def batch(self, view, actions) -> BlockBatch:
        blocks = np.array([view.state_id * self.n_actions + int(a) for a in actions], dtype=np.intp)
        return BlockBatch(blocks, np.ones(1), self.dim)
