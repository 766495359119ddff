"""Ring configurations, local moves and block averages.

Sites are indexed modulo ``n``.  Exclusion configurations hold 0/1
occupations in a ``uint8`` array, energy configurations hold strictly
positive ``float64`` energies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import BlockTooLargeError, ParameterError

EXCLUSION = "exclusion"
ENERGY = "energy"


@dataclass(frozen=True, eq=False)
class Configuration:
    """State of a periodic ring of ``n`` sites."""

    kind: Literal["exclusion", "energy"]
    values: np.ndarray

    def __post_init__(self):
        if self.kind == EXCLUSION:
            vals = np.asarray(self.values)
            if vals.ndim != 1 or not np.isin(vals, (0, 1)).all():
                raise ParameterError("exclusion values must be a 1-d array of 0/1")
            object.__setattr__(self, "values", vals.astype(np.uint8, copy=False))
        elif self.kind == ENERGY:
            vals = np.asarray(self.values, dtype=np.float64)
            if vals.ndim != 1 or not (vals > 0).all():
                raise ParameterError("energy values must be a 1-d array of positive reals")
            object.__setattr__(self, "values", vals)
        else:
            raise ParameterError(f"unknown configuration kind {self.kind!r}")

    @classmethod
    def exclusion(cls, values) -> "Configuration":
        return cls(EXCLUSION, np.asarray(values, dtype=np.uint8))

    @classmethod
    def energy(cls, values) -> "Configuration":
        return cls(ENERGY, np.asarray(values, dtype=np.float64))

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def copy(self) -> "Configuration":
        return Configuration(self.kind, self.values.copy())

    def as_float(self) -> np.ndarray:
        return self.values.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"Configuration({self.kind!r}, {self.values.tolist()!r})"


@dataclass(frozen=True)
class BlockSpec:
    """A block of ``length`` sites to the right (x+1..x+l) or left (x-l..x-1) of ``x``."""

    x: int
    length: int
    side: Literal["right", "left"] = "right"

    def __post_init__(self):
        if self.length < 1:
            raise ParameterError("block length must be >= 1")
        if self.side not in ("right", "left"):
            raise ParameterError(f"block side must be 'right' or 'left', got {self.side!r}")

    def sites(self, n: int) -> np.ndarray:
        if self.length > n // 4:
            raise BlockTooLargeError(f"block length {self.length} exceeds n/4 = {n // 4}")
        if self.side == "right":
            offsets = np.arange(1, self.length + 1)
        else:
            offsets = -np.arange(self.length, 0, -1)
        return (self.x + offsets) % n


def centered(config: Configuration, rho: float, x: int) -> float:
    """Centered variable at site ``x`` (reduced mod n)."""
    return float(config.values[x % config.n]) - rho


def centered_array(config: Configuration, rho: float) -> np.ndarray:
    return config.as_float() - rho


def block_avg(config: Configuration, rho: float, block: BlockSpec) -> float:
    """Mean of the centered values over ``block``."""
    idx = block.sites(config.n)
    return float(config.values[idx].astype(np.float64).mean() - rho)


def right_block_averages(eta_bar: np.ndarray, ell: int) -> np.ndarray:
    """Vector of right-block averages ``(1/ell) sum_{y=x+1}^{x+ell} eta_bar(y)`` for every x."""
    n = eta_bar.shape[0]
    ext = np.concatenate((eta_bar, eta_bar[: ell + 1]))
    csum = np.concatenate(([0.0], np.cumsum(ext)))
    x = np.arange(n)
    return (csum[x + ell + 1] - csum[x + 1]) / ell


def left_block_averages(eta_bar: np.ndarray, ell: int) -> np.ndarray:
    """Vector of left-block averages ``(1/ell) sum_{y=x-ell}^{x-1} eta_bar(y)`` for every x."""
    return np.roll(right_block_averages(eta_bar, ell), ell + 1)


def exchange(config: Configuration, z: int) -> Configuration:
    """Swap the values at sites ``z`` and ``z+1``."""
    n = config.n
    z %= n
    vals = config.values.copy()
    w = (z + 1) % n
    vals[z], vals[w] = config.values[w], config.values[z]
    return Configuration(config.kind, vals)


def total_mass(config: Configuration) -> float:
    if config.kind == EXCLUSION:
        return float(int(config.values.sum(dtype=np.int64)))
    return float(config.values.sum())
