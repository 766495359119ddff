"""Test functions, fluctuation fields and the replacement integrands.

All spatial objects live on the ring ``{0, ..., n-1}``; a test function
``H`` on the unit torus is sampled at ``x/n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import BlockTooLargeError, KindMismatchError, MollifierError, ParameterError, ScaleOrderError
from .kernel import Channel, ObserverHook
from .lattice import EXCLUSION, Configuration, centered_array, right_block_averages
from .models import bernoulli_moments

__all__ = [
    "TestFunction", "WeightVector", "discretize", "weights", "fluct_field", "block_length",
    "bg_local_terms", "bg_integrand", "bg_channel", "multiscale_terms", "doubling_terms",
    "mollified_square_density", "mollified_square_increment", "msq_channel",
    "MollifiedSquareObserver",
]


@dataclass(frozen=True)
class TestFunction:
    """A 1-periodic real function on the unit torus.

    ``func`` is vectorized over numpy arrays; inputs are reduced mod 1
    before evaluation.  ``smoothness`` is informational (``"smooth"`` or
    ``"lipschitz"``).
    """

    __test__ = False  # not a pytest class

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    smoothness: str = "smooth"
    params: dict = field(default_factory=dict)

    def __call__(self, u):
        u = np.mod(np.asarray(u, dtype=np.float64), 1.0)
        return np.asarray(self.func(u), dtype=np.float64)

    def __add__(self, other: "TestFunction") -> "TestFunction":
        f, g = self, other
        smooth = "smooth" if f.smoothness == g.smoothness == "smooth" else "lipschitz"
        return TestFunction(f"({f.name}+{g.name})", lambda u: f(u) + g(u), smooth)

    def __mul__(self, c: float) -> "TestFunction":
        f = self
        c = float(c)
        return TestFunction(f"{c:g}*{f.name}", lambda u: c * f(u), f.smoothness)

    __rmul__ = __mul__

    # -- library ---------------------------------------------------------
    @classmethod
    def gaussian_bump(cls, center: float = 0.5, width: float = 0.1, images: int = 4) -> "TestFunction":
        """``sum_k exp(-(u - center + k)^2 / (2 width^2))`` over ``|k| <= images``."""
        if width <= 0:
            raise ParameterError("width must be positive")
        ks = np.arange(-images, images + 1)

        def f(u):
            d = u[..., None] - center + ks
            return np.exp(-0.5 * (d / width) ** 2).sum(axis=-1)

        return cls("gaussian", f, "smooth", {"center": center, "width": width})

    @classmethod
    def sine(cls, k: int = 1) -> "TestFunction":
        return cls(f"sin{k}", lambda u: np.sin(2 * np.pi * k * u), "smooth", {"k": k})

    @classmethod
    def cosine(cls, k: int = 1) -> "TestFunction":
        return cls(f"cos{k}", lambda u: np.cos(2 * np.pi * k * u), "smooth", {"k": k})

    @classmethod
    def hat(cls, center: float = 0.5, width: float = 0.25) -> "TestFunction":
        """Triangular bump of half-width ``width``; only Lipschitz (robustness tests)."""

        def f(u):
            d = np.abs(np.mod(u - center + 0.5, 1.0) - 0.5)
            return np.clip(1.0 - d / width, 0.0, None)

        return cls("hat", f, "lipschitz", {"center": center, "width": width})

    @classmethod
    def constant(cls, c: float = 1.0) -> "TestFunction":
        return cls("const", lambda u: np.full(np.shape(u), float(c)), "smooth", {"c": c})

    @classmethod
    def by_name(cls, name: str, **params) -> "TestFunction":
        table = {"gaussian": cls.gaussian_bump, "sin": cls.sine, "cos": cls.cosine,
                 "hat": cls.hat, "const": cls.constant}
        if name not in table:
            raise ParameterError(f"unknown test function {name!r}; known: {sorted(table)}")
        return table[name](**params)


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Weights ``v(x)`` on the ring together with ``||v||^2_{2,n} = n^{-1} sum v(x)^2``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or not np.isfinite(w).all():
            raise ParameterError("weights must be a finite 1-d array")
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return int(self.w.shape[0])

    @property
    def norm_2n(self) -> float:
        return float(np.dot(self.w, self.w) / self.n)

    @classmethod
    def ones(cls, n: int) -> "WeightVector":
        return cls(np.ones(n))

    @classmethod
    def indicator(cls, n: int, x: int = 0) -> "WeightVector":
        w = np.zeros(n)
        w[x % n] = 1.0
        return cls(w)


def discretize(H: TestFunction, n: int, mode: str = "values") -> WeightVector:
    """Sample ``H`` on the ring.

    ``values``: ``H(x/n)``; ``gradient``: ``n [H((x+1)/n) - H(x/n)]``;
    ``laplacian``: ``n^2 [H((x+1)/n) + H((x-1)/n) - 2 H(x/n)]``.
    """
    if n < 4:
        raise ParameterError("n must be at least 4")
    h = H(np.arange(n) / n)
    if mode == "values":
        return WeightVector(h)
    if mode == "gradient":
        return WeightVector(n * (np.roll(h, -1) - h))
    if mode == "laplacian":
        return WeightVector(n * n * (np.roll(h, -1) + np.roll(h, 1) - 2.0 * h))
    raise ParameterError(f"unknown discretization mode {mode!r}")


def weights(kind: str, n: int, H: TestFunction | None = None) -> WeightVector:
    """Weight vector by mode name: ``gradient`` (default in experiments), ``values``, ``ones``, ``indicator``."""
    if kind == "ones":
        return WeightVector.ones(n)
    if kind == "indicator":
        return WeightVector.indicator(n, 0)
    if H is None:
        raise ParameterError(f"weight mode {kind!r} needs a test function")
    return discretize(H, n, kind)


def _as_weights(v, n: int) -> np.ndarray:
    w = v.w if isinstance(v, WeightVector) else np.asarray(v, dtype=np.float64)
    if w.shape != (n,):
        raise ParameterError(f"weight vector has length {w.shape}, configuration has n={n}")
    return w


def fluct_field(config: Configuration, H, rho: float) -> float:
    """``n^{-1/2} sum_x H(x/n) (eta(x) - rho)``; ``H`` may also be a sampled array."""
    n = config.n
    h = H(np.arange(n) / n) if isinstance(H, TestFunction) else np.asarray(H, dtype=np.float64)
    return float(np.dot(h, centered_array(config, rho)) / math.sqrt(n))


def _moments(config: Configuration, rho: float, chi, xi):
    if chi is None or xi is None:
        if config.kind != EXCLUSION:
            raise KindMismatchError("chi and xi must be given for energy configurations")
        m = bernoulli_moments(rho)
        chi = m.chi if chi is None else chi
        xi = m.xi if xi is None else xi
    return chi, xi


def _check_L(L: int, n: int):
    if not (isinstance(L, (int, np.integer)) and L >= 1):
        raise ParameterError(f"block length must be a positive integer, got {L!r}")
    if L > n // 4:
        raise BlockTooLargeError(f"block length {L} exceeds n/4 = {n // 4}")


def bg_local_terms(config: Configuration, L: int, rho: float, degree: int = 2,
                   chi: float | None = None, xi: float | None = None) -> np.ndarray:
    """Per-site replacement integrand, one entry per ``x``.

    degree 2: ``eta_bar(x) eta_bar(x+1) - (R_L(x))^2 + chi/L``;
    degree 3: ``eta_bar(x-1) eta_bar(x) eta_bar(x+1) - (R_L(x))^3 + xi/L^2``,
    with ``R_L(x)`` the centered right-block average of length ``L``.
    """
    n = config.n
    _check_L(L, n)
    chi, xi = _moments(config, rho, chi, xi)
    eb = centered_array(config, rho)
    R = right_block_averages(eb, L)
    nxt = np.roll(eb, -1)
    if degree == 2:
        return eb * nxt - R * R + chi / L
    if degree == 3:
        return np.roll(eb, 1) * eb * nxt - R ** 3 + xi / L ** 2
    raise ParameterError(f"degree must be 2 or 3, got {degree}")


def bg_integrand(config: Configuration, v, L: int, rho: float, degree: int = 2,
                 chi: float | None = None, xi: float | None = None) -> float:
    """Spatial sum ``sum_x v(x) * local_x`` of the replacement integrand."""
    w = _as_weights(v, config.n)
    return float(np.dot(w, bg_local_terms(config, L, rho, degree, chi, xi)))


def bg_channel(v, L: int, rho: float, degree: int = 2, chi: float | None = None,
               xi: float | None = None) -> Channel:
    """Kernel channel tracking :func:`bg_integrand` along an exclusion trajectory."""
    w = np.asarray(v.w if isinstance(v, WeightVector) else v, dtype=np.float64)
    _check_L(L, w.shape[0])
    m = bernoulli_moments(rho)
    chi = m.chi if chi is None else chi
    xi = m.xi if xi is None else xi
    if degree == 2:
        return Channel("bg2", int(L), w, chi / L)
    if degree == 3:
        return Channel("bg3", int(L), w, xi / L ** 2)
    raise ParameterError(f"degree must be 2 or 3, got {degree}")


def _right(eb: np.ndarray, x: int, ell: int) -> float:
    n = eb.shape[0]
    return float(eb[(x + 1 + np.arange(ell)) % n].mean())


def _left(eb: np.ndarray, x: int, ell: int) -> float:
    n = eb.shape[0]
    return float(eb[(x - ell + np.arange(ell)) % n].mean())


def multiscale_terms(config: Configuration, x: int, L: int, ell0: int, rho: float,
                     degree: int = 2, chi: float | None = None, xi: float | None = None) -> list[float]:
    """Terms of the multiscale splitting of the local replacement integrand at ``x``.

    Degree 2 gives six terms (one-block pieces at scale ``ell0``, the
    ``ell0 -> L`` transfer, the quadratic correction and the bookkeeping
    constant); degree 3 gives seven.  Both lists add up to the local value
    of :func:`bg_local_terms`, exactly up to rounding.
    """
    n = config.n
    if not 1 <= ell0 <= L:
        raise ScaleOrderError(f"need 1 <= ell0 <= L, got ell0={ell0}, L={L}")
    _check_L(L, n)
    chi, xi = _moments(config, rho, chi, xi)
    eb = centered_array(config, rho)
    e0 = float(eb[x % n])
    e1 = float(eb[(x + 1) % n])
    rL = _right(eb, x, L)
    if degree == 2:
        r0 = _right(eb, x, ell0)
        l0 = _left(eb, x, ell0)
        d2 = (e0 - e1) ** 2 / (2 * L)
        return [
            e0 * (e1 - r0),
            r0 * (e0 - l0),
            l0 * (r0 - rL),
            rL * (l0 - e0),
            rL * e0 - rL * rL + d2,
            -d2 + chi / L,
        ]
    if degree == 3:
        em = float(eb[(x - 1) % n])
        rLm = _right(eb, x - 1, L)
        q = (L - 1) / L
        diff = e1 - e0  # equals eta(x+1) - eta(x)
        return [
            em * (e0 * e1 - rL * rL + chi / L),
            rL * rL * (em - rLm),
            q * (diff ** 3 / (2 * L * L) + rL * diff * diff / L),
            -q * diff ** 3 / (2 * L * L),
            -q * (rL * diff * diff / L - xi / L ** 2),
            -em * chi / L - (xi / L ** 2) * (q - 1.0),
            rL * rL * (rLm - rL),
        ]
    raise ParameterError(f"degree must be 2 or 3, got {degree}")


def doubling_terms(config: Configuration, x: int, L: int, ell0: int, rho: float) -> list[float]:
    """Dyadic expansion of the transfer term ``l0 (r0 - rL)`` when ``L = 2^M ell0``.

    Returns ``M`` doubling steps ``l_k (r_k - r_{k+1})``, ``M-1`` left-box
    corrections ``r_{k+1} (l_k - l_{k+1})`` and the closing term
    ``rL (l_{M-1} - l_0)``; for ``L = ell0`` the list is empty.
    """
    ratio = L // ell0
    if ell0 < 1 or ratio * ell0 != L or ratio & (ratio - 1):
        raise ScaleOrderError("doubling needs L = 2^M * ell0")
    _check_L(L, config.n)
    M = ratio.bit_length() - 1
    eb = centered_array(config, rho)
    r = [_right(eb, x, ell0 << k) for k in range(M + 1)]
    lf = [_left(eb, x, ell0 << k) for k in range(M + 1)]
    if M == 0:
        return []
    out = [lf[k] * (r[k] - r[k + 1]) for k in range(M)]
    out += [r[k + 1] * (lf[k] - lf[k + 1]) for k in range(M - 1)]
    out.append(r[M] * (lf[M - 1] - lf[0]))
    return out


def block_length(epsilon: float, n: int) -> int:
    """Box length ``max(1, round(epsilon n))`` realizing the mollifier at scale ``epsilon``.

    Scales up to ``1/2`` are accepted (the box must not wrap the ring).
    """
    if not epsilon > 1.0 / n:
        raise MollifierError(f"epsilon={epsilon} is not coarser than the lattice spacing 1/{n}")
    if epsilon > 0.5:
        raise MollifierError(f"epsilon={epsilon} exceeds 1/2")
    return max(1, int(round(epsilon * n)))


def mollified_square_density(config: Configuration, gradH: np.ndarray, ell: int, rho: float) -> float:
    """``sum_x gradH(x) (R_ell(x))^2``: the instantaneous integrand of the mollified square."""
    eb = centered_array(config, rho)
    R = right_block_averages(eb, ell)
    return float(np.dot(gradH, R * R))


def mollified_square_increment(snapshots: Iterable[tuple[Configuration, float]], H: TestFunction,
                               epsilon: float, rho: float) -> float:
    """Mollified-square increment ``B^eps_{s,t}(H)`` over piecewise-constant snapshots.

    The box mollifier ``eps^{-1} 1_[0, eps]`` turns ``(Y * iota_eps)^2`` into
    ``n R_ell(x)^2`` with ``ell = round(eps n)``; the spatial integral is the
    Riemann sum over sites and the time integral is exact over the dwells.
    """
    total = 0.0
    grad = None
    ell = None
    for cfg, dwell in snapshots:
        if grad is None:
            grad = discretize(H, cfg.n, "gradient").w
            ell = block_length(epsilon, cfg.n)
        total += dwell * mollified_square_density(cfg, grad, ell, rho)
    return total


def msq_channel(H: TestFunction, n: int, epsilon: float) -> Channel:
    """Kernel channel accumulating :func:`mollified_square_increment` along a run."""
    return Channel("msq", block_length(epsilon, n), discretize(H, n, "gradient").w, 0.0)


class MollifiedSquareObserver(ObserverHook):
    """Observer form of :func:`mollified_square_increment` (works for any kernel)."""

    def __init__(self, H: TestFunction, n: int, epsilon: float, rho: float):
        self.grad = discretize(H, n, "gradient").w
        self.ell = block_length(epsilon, n)
        self.rho = rho
        self.value = 0.0

    def observe(self, config, dwell):
        self.value += dwell * mollified_square_density(config, self.grad, self.ell, self.rho)
