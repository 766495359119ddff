"""Model catalogue: jump rates, invariant samplers, currents and their decompositions.

Four conservative models on the ring are supported:

* :class:`Wasep` -- weakly asymmetric exclusion, rates ``1/2 +- b/(2 n^gamma)``;
* :class:`Asep` -- asymmetric exclusion, rates ``p`` and ``1 - p``;
* :class:`SpeedChange` -- weakly asymmetric exclusion with the rate factor
  ``c_{x,x+1} = eta(x-1) + eta(x+2) + 1``;
* :class:`ExpChain` -- the exponential-interaction chain, drift
  ``eta_x (eta_{x+1} - eta_{x-1})`` plus nearest-neighbour exchanges at rate
  ``gamma_noise``.

All currents are *centered*: the mean under the product measure at the
requested density is subtracted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .errors import KindMismatchError, ParameterError, UnsupportedDensityError
from .lattice import ENERGY, EXCLUSION, Configuration

_DENSITY_TOL = 1e-12


def rho0_speedchange() -> float:
    """Positive root of ``6 rho^2 - 2 rho - 1 = 0``."""
    return (1.0 + math.sqrt(7.0)) / 6.0


@dataclass(frozen=True)
class Wasep:
    b: float = 1.0
    gamma: float = 0.5


@dataclass(frozen=True)
class Asep:
    p: float = 0.7


@dataclass(frozen=True)
class SpeedChange:
    b: float = 1.0
    gamma: float = 0.5


@dataclass(frozen=True)
class ExpChain:
    gamma_noise: float = 1.0
    beta: float = 1.0
    lam: float = 0.0


Variant = Union[Wasep, Asep, SpeedChange, ExpChain]

# integer codes understood by the compiled kernels
KIND_WASEP, KIND_ASEP, KIND_SPEED = 0, 1, 2


@dataclass(frozen=True)
class ModelSpec:
    """A model variant together with the ring size ``n``, time exponent ``a`` and density.

    ``rho`` defaults to the critical density of the variant (1/2 for the
    simple exclusions, ``rho0`` for the speed-change model) and is always
    ``(lam + 1) / beta`` for :class:`ExpChain`.
    """

    variant: Variant
    n: int
    a: float = 2.0
    rho: float | None = field(default=None)

    def __post_init__(self):
        v = self.variant
        if not isinstance(v, (Wasep, Asep, SpeedChange, ExpChain)):
            raise ParameterError(f"unknown model variant {v!r}")
        if int(self.n) != self.n or self.n < 2:
            raise ParameterError(f"n must be an integer >= 2, got {self.n}")
        if not self.a > 0:
            raise ParameterError(f"time exponent a must be positive, got {self.a}")
        if isinstance(v, (Wasep, SpeedChange)):
            if v.b < 0 or v.gamma <= 0:
                raise ParameterError("need b >= 0 and gamma > 0")
            if v.b / (2.0 * self.n ** v.gamma) >= 0.5:
                raise ParameterError("asymmetry b/(2 n^gamma) must stay below 1/2")
        if isinstance(v, Asep) and not 0.0 < v.p < 1.0:
            raise ParameterError(f"ASEP needs p in (0,1), got {v.p}")
        if isinstance(v, ExpChain):
            if v.gamma_noise <= 0 or v.beta <= 0 or v.lam <= -1:
                raise ParameterError("ExpChain needs gamma_noise > 0, beta > 0, lambda > -1")
            derived = (v.lam + 1.0) / v.beta
            if self.rho is not None and abs(self.rho - derived) > _DENSITY_TOL * max(1.0, derived):
                raise ParameterError(f"ExpChain density is fixed to (lambda+1)/beta = {derived}")
            object.__setattr__(self, "rho", derived)
        else:
            rho = critical_density(v) if self.rho is None else float(self.rho)
            if not 0.0 < rho < 1.0:
                raise ParameterError(f"exclusion density must lie in (0,1), got {rho}")
            object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "n", int(self.n))

    @property
    def is_exclusion(self) -> bool:
        return not isinstance(self.variant, ExpChain)

    @property
    def scale(self) -> float:
        """Time acceleration ``n^a`` (micro time per macro time unit)."""
        return float(self.n) ** self.a

    @property
    def asymmetry(self) -> float:
        """``b / (2 n^gamma)`` for the weakly asymmetric models, 0 otherwise."""
        v = self.variant
        if isinstance(v, (Wasep, SpeedChange)):
            return v.b / (2.0 * self.n ** v.gamma)
        return 0.0

    @property
    def base_rates(self) -> tuple[float, float]:
        """Rightward and leftward jump rates before the speed-change factor."""
        v = self.variant
        if isinstance(v, Asep):
            return v.p, 1.0 - v.p
        if isinstance(v, ExpChain):
            return v.gamma_noise, v.gamma_noise
        eps = self.asymmetry
        return 0.5 + eps, 0.5 - eps

    @property
    def kind_code(self) -> int:
        v = self.variant
        if isinstance(v, Wasep):
            return KIND_WASEP
        if isinstance(v, Asep):
            return KIND_ASEP
        if isinstance(v, SpeedChange):
            return KIND_SPEED
        raise KindMismatchError("ExpChain has no exclusion kernel code")

    def with_(self, **changes) -> "ModelSpec":
        fields = {"variant": self.variant, "n": self.n, "a": self.a, "rho": self.rho}
        if "n" in changes and "rho" not in changes and isinstance(self.variant, ExpChain):
            fields["rho"] = None
        fields.update(changes)
        return ModelSpec(**fields)


def critical_density(variant: Variant) -> float:
    if isinstance(variant, (Wasep, Asep)):
        return 0.5
    if isinstance(variant, SpeedChange):
        return rho0_speedchange()
    return 0.0  # ExpChain decomposition frame


class Moments(NamedTuple):
    rho: float
    chi: float
    xi: float


def bernoulli_moments(rho: float) -> Moments:
    return Moments(rho, rho * (1.0 - rho), rho * (1.0 - rho) * (1.0 - 2.0 * rho))


def model_moments(model: ModelSpec) -> Moments:
    """Density, variance and third centered moment of the one-site marginal."""
    v = model.variant
    if isinstance(v, ExpChain):
        k = v.lam + 1.0
        return Moments(k / v.beta, k / v.beta**2, 2.0 * k / v.beta**3)
    return bernoulli_moments(model.rho)


def invariant_sample(model: ModelSpec, rng: np.random.Generator) -> Configuration:
    """Draw a configuration from the product invariant measure.

    The ExpChain one-site law has density proportional to
    ``exp(-beta u) u^lambda`` on ``(0, inf)``, i.e. Gamma(lambda+1, rate beta).
    """
    v = model.variant
    if isinstance(v, ExpChain):
        vals = rng.gamma(shape=v.lam + 1.0, scale=1.0 / v.beta, size=model.n)
        # Gamma draws are positive with probability one; guard denormal underflow
        np.maximum(vals, np.finfo(np.float64).tiny, out=vals)
        return Configuration(ENERGY, vals)
    occ = (rng.random(model.n) < model.rho).astype(np.uint8)
    return Configuration(EXCLUSION, occ)


def _check_kind(model: ModelSpec, config: Configuration):
    want = EXCLUSION if model.is_exclusion else ENERGY
    if config.kind != want:
        raise KindMismatchError(f"{type(model.variant).__name__} needs a {want} configuration")
    if config.n != model.n:
        raise ParameterError(f"configuration has {config.n} sites, model has n={model.n}")


def _speed_factor(eta: np.ndarray, z: int, n: int) -> float:
    return float(eta[(z - 1) % n]) + float(eta[(z + 2) % n]) + 1.0


def bond_rates(model: ModelSpec, config: Configuration, z: int) -> tuple[float, float]:
    """Micro-time rates of the rightward and leftward move across bond ``(z, z+1)``."""
    _check_kind(model, config)
    pr, pl = model.base_rates
    if not model.is_exclusion:
        return pr, pl
    n = model.n
    eta = config.values
    z %= n
    here, there = int(eta[z]), int(eta[(z + 1) % n])
    c = _speed_factor(eta, z, n) if isinstance(model.variant, SpeedChange) else 1.0
    return pr * c * here * (1 - there), pl * c * there * (1 - here)


def zeta(model: ModelSpec, config: Configuration, z: int) -> float:
    """Dirichlet-form weight of bond ``(z, z+1)``: total exchange rate across it."""
    right, left = bond_rates(model, config, z)
    return right + left


def mean_current(model: ModelSpec, rho: float) -> float:
    """Expectation of the raw current under the product measure at density ``rho``."""
    v = model.variant
    if isinstance(v, ExpChain):
        return -rho * rho
    pr, pl = model.base_rates
    chi = rho * (1.0 - rho)
    if isinstance(v, SpeedChange):
        return (pr - pl) * (2.0 * rho + 1.0) * chi
    return (pr - pl) * chi


def raw_current(model: ModelSpec, config: Configuration, x: int) -> float:
    _check_kind(model, config)
    n = model.n
    if model.is_exclusion:
        right, left = bond_rates(model, config, x)
        return right - left
    eta = config.values
    ex, ey = float(eta[x % n]), float(eta[(x + 1) % n])
    return -ex * ey + model.variant.gamma_noise * (ex - ey)


def current(model: ModelSpec, config: Configuration, x: int, rho: float | None = None) -> float:
    """Centered instantaneous current across bond ``(x, x+1)``.

    The centering uses the product measure at ``rho`` (default: the model
    density).  For ExpChain, ``rho=0`` gives the uncentered frame used by
    the decomposition.
    """
    rho = model.rho if rho is None else rho
    return raw_current(model, config, x) - mean_current(model, rho)


@dataclass(frozen=True)
class CurrentDecomposition:
    grad_h: float
    quad_coeff: float
    quad_term: float
    g_term: float

    @property
    def total(self) -> float:
        return self.grad_h + self.quad_term + self.g_term


def speedchange_polynomial_terms(config: Configuration, x: int, rho: float) -> np.ndarray:
    """The five polynomial groups whose sum, times ``-b/(2 n^gamma)``, is the antisymmetric current.

    Returned in order: cubic terms, nearest-neighbour quadratic, the two
    shifted quadratic pairs, and the linear remainder.
    """
    n = config.n
    e = config.as_float() - rho
    m1, e0, e1, e2 = e[(x - 1) % n], e[x % n], e[(x + 1) % n], e[(x + 2) % n]
    return np.array(
        [
            2.0 * m1 * e0 * e1 + 2.0 * e0 * e1 * e2,
            (2.0 + 4.0 * rho) * e0 * e1,
            (2.0 * rho - 1.0) * (m1 * e0 + e1 * e2),
            (2.0 * rho - 1.0) * (m1 * e1 + e0 * e2),
            (4.0 * rho**2 - 1.0) * (e0 + e1) + 2.0 * rho * (rho - 1.0) * (m1 + e2),
        ]
    )


def speedchange_h(config: Configuration, x: int) -> float:
    """Local function whose discrete gradient is the symmetric speed-change current."""
    n = config.n
    e = config.values
    m1, e0, e1 = float(e[(x - 1) % n]), float(e[x % n]), float(e[(x + 1) % n])
    return 0.5 * (m1 * e0 + e0 * e1 - m1 * e1) + 0.5 * e0


def is_critical(model: ModelSpec, rho: float) -> bool:
    return abs(rho - critical_density(model.variant)) <= _DENSITY_TOL


def current_decomposition(
    model: ModelSpec, rho: float, config: Configuration, x: int, general: bool = False
) -> CurrentDecomposition:
    """Split the centered current into gradient, quadratic and remainder parts.

    Without ``general`` only the critical density of each model is accepted
    (1/2, ``rho0``, or the ``rho = 0`` frame for ExpChain).  With
    ``general=True`` the explicit remainder ``g`` is used at any density.
    """
    _check_kind(model, config)
    if not general and not is_critical(model, rho):
        raise UnsupportedDensityError(
            f"{type(model.variant).__name__} decomposition needs the critical density "
            f"{critical_density(model.variant)!r}; pass general=True for rho={rho!r}"
        )
    n = model.n
    e = config.as_float() - rho
    e0, e1 = e[x % n], e[(x + 1) % n]
    v = model.variant
    if isinstance(v, Asep):
        kappa = (1.0 - v.p) * (1.0 - rho) + v.p * rho
        grad_h = kappa * (e0 - e1)
        coeff = -(2.0 * v.p - 1.0)
        g = (2.0 * v.p - 1.0) * (1.0 - 2.0 * rho) * e0
    elif isinstance(v, Wasep):
        eps = model.asymmetry
        grad_h = 0.5 * (e0 - e1)
        coeff = -2.0 * eps
        g = eps * (1.0 - 2.0 * rho) * (e0 + e1)
    elif isinstance(v, SpeedChange):
        eps = model.asymmetry
        grad_h = speedchange_h(config, x) - speedchange_h(config, x + 1)
        terms = speedchange_polynomial_terms(config, x, rho)
        coeff = -eps * (2.0 + 4.0 * rho)
        g = -eps * (terms[0] + terms[2] + terms[3] + terms[4])
    else:
        grad_h = v.gamma_noise * (e0 - e1)
        coeff = -1.0
        g = -rho * (e0 + e1)
    return CurrentDecomposition(float(grad_h), float(coeff), float(coeff * e0 * e1), float(g))


def drift_field(model: ModelSpec, config: Configuration) -> np.ndarray:
    """ExpChain drift ``eta_x (eta_{x+1} - eta_{x-1})`` at every site."""
    if not isinstance(model.variant, ExpChain) or config.kind != ENERGY:
        raise KindMismatchError("drift_field needs an ExpChain model and an energy configuration")
    eta = config.values
    return eta * (np.roll(eta, -1) - np.roll(eta, 1))
