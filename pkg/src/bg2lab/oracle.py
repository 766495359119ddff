"""Exact computations on tiny exclusion rings.

States are integers ``s`` in ``[0, 2^n)`` with bit ``i`` holding the
occupation of site ``i``.  The generator is in micro-time units (no
``n^a`` acceleration); stationary weights are the Bernoulli product at the
model density.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import KindMismatchError, QuadratureError, StateSpaceTooLargeError
from .lattice import EXCLUSION, Configuration
from .models import KIND_SPEED, ModelSpec

MAX_SITES = 12


class CenteringNotice(UserWarning):
    """A functional passed to a correlation routine was not centered and got centered."""


@dataclass(frozen=True, eq=False)
class SmallSystem:
    """Dense generator of a ring with ``n <= 12`` sites."""

    model: ModelSpec
    n: int
    states: np.ndarray   # (2^n, n) uint8 occupations
    G: np.ndarray        # (2^n, 2^n), rows sum to zero
    pi: np.ndarray       # (2^n,) Bernoulli product weights
    bond_moves: tuple    # per bond z: (rate array, target index array)

    @property
    def size(self) -> int:
        return int(self.states.shape[0])

    @property
    def rate_bound(self) -> float:
        return float(np.max(-np.diag(self.G))) if self.size else 0.0

    def config(self, s: int) -> Configuration:
        return Configuration(EXCLUSION, self.states[s].copy())

    def index(self, config: Configuration) -> int:
        return int(np.dot(config.values.astype(np.int64), 1 << np.arange(self.n)))

    def vector(self, func: Callable[[Configuration], float]) -> np.ndarray:
        """Evaluate a configuration functional on every state."""
        return np.array([func(self.config(s)) for s in range(self.size)], dtype=np.float64)

    def mean(self, f: np.ndarray) -> float:
        return float(np.dot(self.pi, f))

    def variance(self, f: np.ndarray) -> float:
        m = self.mean(f)
        return float(np.dot(self.pi, (f - m) ** 2))


def build_generator(model: ModelSpec, n: int | None = None) -> SmallSystem:
    """Assemble the dense generator of ``model`` on a ring of ``n`` sites."""
    if not model.is_exclusion:
        raise KindMismatchError("oracle supports exclusion models only")
    n = model.n if n is None else int(n)
    if n > MAX_SITES:
        raise StateSpaceTooLargeError(f"n={n} exceeds the oracle cap of {MAX_SITES} sites")
    if n != model.n:
        model = model.with_(n=n)
    N = 1 << n
    idx = np.arange(N, dtype=np.int64)
    states = ((idx[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    pr, pl = model.base_rates
    G = np.zeros((N, N))
    moves = []
    for z in range(n):
        w = (z + 1) % n
        a = states[:, z].astype(np.int64)
        b = states[:, w].astype(np.int64)
        c = np.ones(N)
        if model.kind_code == KIND_SPEED:
            c = 1.0 + states[:, (z - 1) % n] + states[:, (z + 2) % n]
        rate = np.where((a == 1) & (b == 0), pr * c, 0.0) + np.where((a == 0) & (b == 1), pl * c, 0.0)
        target = idx ^ (1 << z) ^ (1 << w)
        np.add.at(G, (idx, target), rate)
        G[idx, idx] -= rate
        moves.append((rate, target))
    k = states.sum(axis=1)
    rho = model.rho
    pi = rho ** k * (1.0 - rho) ** (n - k)
    return SmallSystem(model, n, states, G, pi, tuple(moves))


def stationarity_check(sys: SmallSystem) -> float:
    """``max |pi G|``; zero (up to rounding) iff the Bernoulli product is invariant."""
    return float(np.max(np.abs(sys.pi @ sys.G)))


def row_sum_residual(sys: SmallSystem) -> float:
    return float(np.max(np.abs(sys.G.sum(axis=1))))


def reversibility_residual(sys: SmallSystem) -> float:
    """``max |diag(pi) G - (diag(pi) G)^T|``."""
    A = sys.pi[:, None] * sys.G
    return float(np.max(np.abs(A - A.T)))


def _center(sys: SmallSystem, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    m = sys.mean(f)
    if abs(m) > 1e-13 * max(1.0, float(np.max(np.abs(f)))):
        warnings.warn(f"functional had stationary mean {m:.3g}; centered before use",
                      CenteringNotice, stacklevel=3)
        f = f - m
    return f


def _poisson_weights(lam: float, tol: float) -> np.ndarray:
    """Poisson(lam) probabilities from 0 up to a tail of mass at most ``tol``."""
    if lam == 0.0:
        return np.ones(1)
    kmax = int(lam + 12.0 * math.sqrt(lam) + 40)
    k = np.arange(kmax + 1)
    logw = k * math.log(lam) - lam - np.array([math.lgamma(i + 1.0) for i in k])
    w = np.exp(logw)
    cum = np.cumsum(w)
    last = int(np.searchsorted(cum, 1.0 - tol)) + 1
    return w[: min(last + 1, kmax + 1)]


def _uniformized(P: sp.csr_matrix, vec: np.ndarray, lam: float, tol: float, left: bool = False) -> np.ndarray:
    w = _poisson_weights(lam, tol)
    out = w[0] * vec
    cur = vec
    PT = P.T.tocsr() if left else P
    for k in range(1, w.shape[0]):
        cur = PT @ cur
        out = out + w[k] * cur
    return out


def _unif_matrix(sys: SmallSystem):
    lam = sys.rate_bound
    if lam == 0.0:
        return None, 0.0
    P = sp.identity(sys.size, format="csr") + sp.csr_matrix(sys.G / lam)
    return P, lam


def semigroup_apply(sys: SmallSystem, f: np.ndarray, s: float, tol: float = 1e-10) -> np.ndarray:
    """``e^{sG} f`` by uniformization (``s`` in micro units)."""
    P, lam = _unif_matrix(sys)
    if P is None or s == 0.0:
        return np.asarray(f, dtype=np.float64).copy()
    return _uniformized(P, np.asarray(f, dtype=np.float64), lam * s, tol)


def transition_distribution(sys: SmallSystem, p0: np.ndarray, s: float, tol: float = 1e-12) -> np.ndarray:
    """Law at micro time ``s`` of the chain started from the distribution ``p0`` (``p0 e^{sG}``)."""
    P, lam = _unif_matrix(sys)
    if P is None or s == 0.0:
        return np.asarray(p0, dtype=np.float64).copy()
    return _uniformized(P, np.asarray(p0, dtype=np.float64), lam * s, tol, left=True)


def exact_correlation(sys: SmallSystem, f, s: float, tol: float = 1e-10) -> float:
    """Stationary two-point function ``<f, e^{sG} f>_pi`` at micro time ``s``.

    Non-centered ``f`` is centered first (and a :class:`CenteringNotice` is
    issued).  The truncation of the Poisson series leaves a tail of
    probability mass at most ``tol``, hence a relative error at most ``tol``
    in the sup norm of ``e^{sG} f``.
    """
    f = _center(sys, f)
    g = semigroup_apply(sys, f, s, tol)
    return float(np.dot(sys.pi * f, g))


def _adaptive_simpson(func, a, b, rtol, max_depth=50):
    """Adaptive Simpson with tolerance halving, relative to a coarse first estimate."""
    fa, fm, fb = func(a), func(0.5 * (a + b)), func(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6.0
    eps0 = 0.1 * rtol * max(abs(whole), 1e-300)

    def rec(a, b, fa, fm, fb, whole, eps, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = func(lm), func(rm)
        left = (m - a) * (fa + 4 * flm + fm) / 6.0
        right = (b - m) * (fm + 4 * frm + fb) / 6.0
        delta = left + right - whole
        if depth >= 3 and abs(delta) <= 15.0 * eps:
            return left + right + delta / 15.0
        if depth >= max_depth:
            raise QuadratureError("adaptive Simpson quadrature did not converge")
        return (rec(a, m, fa, flm, fm, left, 0.5 * eps, depth + 1)
                + rec(m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))

    return rec(a, b, fa, fm, fb, whole, eps0, 0)


def exact_time_variance(sys: SmallSystem, f, t: float, a: float | None = None, rtol: float = 1e-8) -> float:
    """``E_pi[(int_0^t f(eta_{s n^a}) ds)^2] = 2 int_0^t (t-s) C(s n^a) ds`` for centered ``f``.

    ``a`` defaults to the model's time exponent.
    """
    a = sys.model.a if a is None else a
    f = _center(sys, f)
    if t == 0.0 or not np.any(f):
        return 0.0
    scale = float(sys.n) ** a
    ctol = min(1e-12, 0.01 * rtol)
    P, lam = _unif_matrix(sys)
    pf = sys.pi * f

    def corr(u):
        if P is None or u == 0.0:
            return float(np.dot(pf, f))
        return float(np.dot(pf, _uniformized(P, f, lam * u * scale, ctol)))

    return 2.0 * _adaptive_simpson(lambda u: (t - u) * corr(u), 0.0, float(t), rtol)


def _phi(mu: np.ndarray, t: float) -> np.ndarray:
    """``2 int_0^t (t-s) e^{mu s} ds`` elementwise (complex-safe)."""
    mu = np.asarray(mu, dtype=np.complex128)
    x = mu * t
    out = np.empty_like(mu)
    small = np.abs(x) < 1e-3
    xs = x[small]
    out[small] = t * t * (1.0 + xs / 3.0 + xs ** 2 / 12.0 + xs ** 3 / 60.0 + xs ** 4 / 360.0)
    xl = x[~small]
    out[~small] = 2.0 * t * t * (np.exp(xl) - 1.0 - xl) / (xl * xl)
    return out


def exact_time_variance_eig(sys: SmallSystem, f, t: float, a: float | None = None) -> float:
    """Same quantity as :func:`exact_time_variance`, via an eigendecomposition of ``G``.

    Reversible generators use the symmetric form ``D^{1/2} G D^{-1/2}``;
    otherwise the general (complex) eigendecomposition is used.
    """
    a = sys.model.a if a is None else a
    f = _center(sys, f)
    scale = float(sys.n) ** a
    pf = sys.pi * f
    if t == 0.0 or not np.any(f):
        return 0.0
    if reversibility_residual(sys) <= 1e-13:
        keep = sys.pi > 0
        d = np.sqrt(sys.pi[keep])
        Gs = sys.G[np.ix_(keep, keep)]
        S = d[:, None] * Gs / d[None, :]
        S = 0.5 * (S + S.T)
        lam, U = np.linalg.eigh(S)
        coef = U.T @ (d * f[keep])
        return float(np.sum(coef ** 2 * _phi(lam * scale, t).real))
    lam, V = np.linalg.eig(sys.G)
    left = pf @ V
    right = np.linalg.solve(V, f.astype(np.complex128))
    return float(np.sum(left * right * _phi(lam * scale, t)).real)


def exact_time_variance_expm(sys: SmallSystem, f, t: float, a: float | None = None) -> float:
    """Same quantity via one block matrix exponential (no spectral assumptions)."""
    a = sys.model.a if a is None else a
    f = _center(sys, f)
    N = sys.size
    A = sys.G * float(sys.n) ** a
    M = np.zeros((3 * N, 3 * N))
    M[:N, :N] = A
    M[:N, N:2 * N] = np.eye(N)
    M[N:2 * N, 2 * N:] = np.eye(N)
    E = scipy.linalg.expm(M * t)
    K = E[:N, 2 * N:]  # int_0^t (t-s) e^{sA} ds
    return float(2.0 * np.dot(sys.pi * f, K @ f))


def dirichlet_form(sys: SmallSystem, f) -> float:
    """``-<f, G f>_pi`` (micro units)."""
    f = np.asarray(f, dtype=np.float64)
    return float(-np.dot(sys.pi * f, sys.G @ f))


def bond_dirichlet(sys: SmallSystem, f, z: int) -> float:
    """Bond contribution ``(1/2) E_pi[zeta_z (f(eta^{z,z+1}) - f(eta))^2]``.

    ``zeta_z`` is the total exchange rate of the bond in the current state;
    under an invariant ``pi`` these add up to :func:`dirichlet_form`.
    """
    f = np.asarray(f, dtype=np.float64)
    rate, target = sys.bond_moves[z % sys.n]
    return float(0.5 * np.dot(sys.pi * rate, (f[target] - f) ** 2))
