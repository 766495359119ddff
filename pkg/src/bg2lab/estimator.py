"""Replicated Monte Carlo experiments.

Every replica ``i`` draws its own generator ``seed_stream(base_seed, i)``,
samples a configuration from the invariant product measure and runs the
dynamics with that same generator.  Results are gathered in replica-index
order, so the numbers do not depend on the number of workers.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import AbsorbingStateWarning, BlockTooLargeError, KindMismatchError, MollifierError, ParameterError
from .kernel import Channel, ExclusionKernel, IntegratingObserver, simulate_pdmp
from .lattice import centered_array
from .models import ModelSpec, Wasep, invariant_sample, model_moments
from .observables import (TestFunction, WeightVector, bg_channel, bg_integrand, block_length,
                          discretize)
from .seeding import seed_stream

Z95 = 1.96


# ---------------------------------------------------------------------------
# replica plumbing
# ---------------------------------------------------------------------------


def _run_chunk(fn, payload, base_seed, lo, hi):
    # empty and full rings are legitimate (rare) samples on tiny systems
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AbsorbingStateWarning)
        return [np.asarray(fn(payload, seed_stream(base_seed, i)), dtype=np.float64) for i in range(lo, hi)]


def run_replicas(fn: Callable, payload, replicas: int, base_seed: int, workers: int = 1) -> np.ndarray:
    """Evaluate ``fn(payload, rng_i)`` for ``i < replicas``; rows stacked in index order.

    ``fn`` and ``payload`` must be picklable when ``workers > 1``.
    """
    if workers <= 1 or replicas < 2:
        rows = _run_chunk(fn, payload, base_seed, 0, replicas)
    else:
        nchunks = min(replicas, 4 * workers)
        edges = np.linspace(0, replicas, nchunks + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_chunk, fn, payload, base_seed, int(lo), int(hi))
                    for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
            rows = [r for f in futs for r in f.result()]
    return np.stack(rows)


def default_workers() -> int:
    env = os.environ.get("BG2LAB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ParameterError(f"BG2LAB_WORKERS must be an integer, got {env!r}") from exc
    return 1


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=np.float64)
    R = samples.shape[0]
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(R))


# ---------------------------------------------------------------------------
# bound, block choice, fits
# ---------------------------------------------------------------------------


def theoretical_bound(t: float, L: float, n: int, a: float, norm_2n: float, C: float = 1.0) -> float:
    """``C t (L / n^(a-1) + t n / L^2) ||v||^2_{2,n}``."""
    if min(t, L, n, a, norm_2n) <= 0:
        raise ParameterError("theoretical_bound needs positive arguments")
    return C * t * (L / n ** (a - 1.0) + t * n / L ** 2) * norm_2n


def optimal_block(t: float, n: int, a: float, mode: str = "cube") -> int:
    """Block length balancing the two terms of the bound.

    ``cube``: ``round((2 t n^a)^(1/3))``, the minimizer of
    ``L/n^(a-1) + t n/L^2``; ``power``: ``round(n^(a/2))``, i.e. ``n^theta`` with
    ``theta = (alpha+1)/2`` for ``a = 1 + alpha``.  Clamped to ``[1, n/4]``.
    """
    if min(t, n, a) <= 0:
        raise ParameterError("optimal_block needs positive arguments")
    if mode == "cube":
        L = round(np.cbrt(2.0 * t * float(n) ** a))
    elif mode == "power":
        L = round(float(n) ** (a / 2.0))
    else:
        raise ParameterError(f"unknown block mode {mode!r}")
    return int(min(max(L, 1), max(1, n // 4)))


@dataclass
class ScalingReport:
    """Log-log least-squares summary of ``estimate ~ prefactor * x^exponent``."""

    grid: list            # [(x, estimate), ...] sorted by x
    fitted_exponent: float
    fit_residual: float
    exponent_stderr: float = float("nan")
    prefactor: float = float("nan")
    std_errors: list = field(default_factory=list)
    variable: str = "n"
    extra: dict = field(default_factory=dict)


def scaling_fit(points: Sequence, variable: str = "n") -> ScalingReport:
    """OLS of ``log(estimate)`` on ``log(x)``; points are ``(x, est)`` or ``(x, est, se)``."""
    pts = sorted((tuple(p) for p in points), key=lambda p: p[0])
    if len(pts) < 3:
        raise ParameterError("a scaling fit needs at least 3 points")
    xs = np.array([p[0] for p in pts], dtype=np.float64)
    ys = np.array([p[1] for p in pts], dtype=np.float64)
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise ParameterError("scaling fit needs positive abscissae and estimates")
    lx, ly = np.log(xs), np.log(ys)
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    return ScalingReport(
        grid=[(float(x), float(y)) for x, y in zip(xs, ys)],
        fitted_exponent=float(res.slope),
        fit_residual=float(np.sqrt(np.mean(resid ** 2))),
        exponent_stderr=float(res.stderr),
        prefactor=float(np.exp(res.intercept)),
        std_errors=[float(p[2]) if len(p) > 2 else float("nan") for p in pts],
        variable=variable,
    )


def _zero_report(xs, variable):
    return ScalingReport([(float(x), 0.0) for x in xs], float("nan"), float("nan"),
                         std_errors=[0.0] * len(xs), variable=variable)


# ---------------------------------------------------------------------------
# second-order replacement variance
# ---------------------------------------------------------------------------


@dataclass
class VarianceEstimate:
    """Replica estimate of ``E[(int_0^t sum_x v(x) F_x ds)^2]``."""

    mean_square: float
    std_error: float
    replicas: int
    bound_value: float
    bound_constant_fitted: float | None = None
    L: int = 0
    samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def upper(self) -> float:
        return self.mean_square + Z95 * self.std_error


@dataclass
class BGExperiment:
    """One point of the second-order replacement experiment.

    ``shifts > 1`` averages the squared integral over that many equally
    spaced translates of ``v`` within each replica (tracked as separate
    channels); by translation invariance the expectation is unchanged.
    ``freeze`` switches all jumps off (test hook).  ``xi`` overrides the
    third-moment correction of the degree-3 integrand.
    """

    model: ModelSpec
    L: int | str = "optimal"
    t: float = 1.0
    v: WeightVector | None = None
    replicas: int = 100
    base_seed: int = 0
    degree: int = 2
    H: TestFunction | None = None
    shifts: int = 1
    freeze: bool = False
    xi: float | None = None
    block_mode: str = "cube"

    def block(self) -> int:
        if self.L == "optimal":
            return optimal_block(self.t, self.model.n, self.model.a, self.block_mode)
        L = self.L
        if not isinstance(L, (int, np.integer)) or L < 1:
            raise ParameterError(f"L must be a positive integer or 'optimal', got {L!r}")
        return int(L)

    def weight_vector(self) -> WeightVector:
        if self.v is not None:
            if self.v.n != self.model.n:
                raise ParameterError("weight vector length differs from n")
            return self.v
        H = self.H if self.H is not None else TestFunction.gaussian_bump()
        return discretize(H, self.model.n, "gradient")

    def validate(self):
        if self.replicas < 2:
            raise ParameterError("at least 2 replicas are needed for a standard error")
        if not self.t > 0:
            raise ParameterError("t must be positive")
        if self.degree not in (2, 3):
            raise ParameterError("degree must be 2 or 3")
        if not 1 <= self.shifts <= self.model.n:
            raise ParameterError("shifts must lie in [1, n]")
        L = self.block()
        if L > self.model.n // 4:
            raise BlockTooLargeError(f"L={L} exceeds n/4")


@dataclass(frozen=True)
class _BGPayload:
    model: ModelSpec
    L: int
    t: float
    weights: np.ndarray     # (shifts, n)
    degree: int
    chi: float
    xi: float
    freeze: bool


def _bg_replica(p: _BGPayload, rng: np.random.Generator) -> np.ndarray:
    cfg = invariant_sample(p.model, rng)
    if p.model.is_exclusion:
        chans = [bg_channel(w, p.L, p.model.rho, p.degree, p.chi, p.xi) for w in p.weights]
        kern = ExclusionKernel(p.model, cfg, rng, channels=chans, freeze=p.freeze)
        kern.advance(p.t)
        return kern.integrals
    obs = [IntegratingObserver(lambda c, w=w: bg_integrand(c, w, p.L, p.model.rho, p.degree, p.chi, p.xi))
           for w in p.weights]
    if p.freeze:
        return np.array([o.obs(cfg) * p.t for o in obs])
    simulate_pdmp(p.model, cfg, p.t, rng, observers=obs)
    return np.array([o.value for o in obs])


def _bg_payload(exp: BGExperiment) -> _BGPayload:
    exp.validate()
    v = exp.weight_vector().w
    n = exp.model.n
    offs = [round(k * n / exp.shifts) for k in range(exp.shifts)]
    W = np.stack([np.roll(v, o) for o in offs])
    mom = model_moments(exp.model)
    xi = mom.xi if exp.xi is None else exp.xi
    return _BGPayload(exp.model, exp.block(), float(exp.t), W, exp.degree, mom.chi, xi, exp.freeze)


def bg_integrals(exp: BGExperiment, workers: int = 1) -> np.ndarray:
    """Raw per-replica time integrals, shape ``(replicas, shifts)``."""
    return run_replicas(_bg_replica, _bg_payload(exp), exp.replicas, exp.base_seed, workers)


def run_bg_variance(exp: BGExperiment, workers: int = 1) -> VarianceEstimate:
    """Monte Carlo estimate of the replacement variance with its bound (``C = 1``)."""
    ints = bg_integrals(exp, workers)
    per_rep = (ints ** 2).mean(axis=1)
    ms, se = _mean_se(per_rep)
    v = exp.weight_vector()
    L = exp.block()
    bound = theoretical_bound(exp.t, L, exp.model.n, exp.model.a, v.norm_2n)
    return VarianceEstimate(ms, se, exp.replicas, bound, None, L, per_rep)


def fit_uniform_constant(estimates: Sequence[VarianceEstimate], ref: int = 0, z: float = Z95):
    """Fit ``C`` at the reference point (upper confidence limit over the bound) and test the rest.

    Returns ``(C, ok)`` where ``ok[i]`` says ``mean_square_i <= C * bound_i``;
    the fitted constant is also stored on each estimate.
    """
    r = estimates[ref]
    C = (r.mean_square + z * r.std_error) / r.bound_value
    ok = []
    for e in estimates:
        e.bound_constant_fitted = C
        ok.append(bool(e.mean_square <= C * e.bound_value))
    return C, ok


# ---------------------------------------------------------------------------
# fluctuation-field experiments
# ---------------------------------------------------------------------------


def _shift_fields(h: np.ndarray, eb: np.ndarray) -> np.ndarray:
    """``Y(tau_j H)`` for every translate ``j`` (circular correlation via FFT)."""
    n = h.shape[0]
    return np.fft.irfft(np.conj(np.fft.rfft(h)) * np.fft.rfft(eb), n) / math.sqrt(n)


@dataclass(frozen=True)
class _FieldPayload:
    model: ModelSpec
    h: np.ndarray
    times: tuple
    shift_average: bool


def _field_increment_replica(p: _FieldPayload, rng) -> np.ndarray:
    cfg = invariant_sample(p.model, rng)
    (t,) = p.times
    kern = ExclusionKernel(p.model, cfg, rng)
    kern.advance(t)
    d = kern.occ.astype(np.float64) - cfg.values.astype(np.float64)
    if p.shift_average:
        return np.array([np.mean(_shift_fields(p.h, d) ** 2)])
    return np.array([(np.dot(p.h, d) / math.sqrt(p.model.n)) ** 2])


def _field_cov_replica(p: _FieldPayload, rng) -> np.ndarray:
    cfg = invariant_sample(p.model, rng)
    rho = p.model.rho
    y0 = _shift_fields(p.h, centered_array(cfg, rho))
    if not p.shift_average:
        y0 = y0[:1]
    out = []
    kern = ExclusionKernel(p.model, cfg, rng)
    now = 0.0
    for t in p.times:
        if t > now:
            kern.advance(t - now)
            now = t
        yt = _shift_fields(p.h, kern.occ.astype(np.float64) - rho)
        if not p.shift_average:
            yt = yt[:1]
        out.append(np.mean(yt * y0))
    return np.array(out)


def trivial_limit_experiment(model: ModelSpec | None = None, H: TestFunction | None = None,
                             n_grid: Sequence[int] = (128, 256, 512, 1024), t: float = 0.5,
                             replicas: int = 4000, base_seed: int = 0, workers: int = 1,
                             shift_average: bool = True) -> ScalingReport:
    """``Var(Y_t(H) - Y_0(H))`` per ``n`` and its fitted decay exponent.

    ``model`` fixes variant, density and time exponent (default ASEP p=0.7 at
    rho=1/2, a=5/4); its ``n`` is replaced by each grid value.  With
    ``shift_average`` every replica averages over all translates of ``H``.
    """
    from .models import Asep
    model = model if model is not None else ModelSpec(Asep(0.7), 8, a=1.25, rho=0.5)
    H = H if H is not None else TestFunction.gaussian_bump()
    if not model.is_exclusion:
        raise KindMismatchError("trivial-limit experiment needs an exclusion model")
    if model.a >= 4.0 / 3.0:
        raise ParameterError("trivial-limit experiment needs a < 4/3")
    if replicas < 2:
        raise ParameterError("at least 2 replicas are needed")
    if list(n_grid) != sorted(set(n_grid)):
        raise ParameterError("n grid must be strictly increasing")
    if t == 0:
        return _zero_report(n_grid, "n")
    pts = []
    for n in n_grid:
        m = model.with_(n=n)
        p = _FieldPayload(m, H(np.arange(n) / n), (float(t),), shift_average)
        rows = run_replicas(_field_increment_replica, p, replicas, base_seed + n, workers)[:, 0]
        pts.append((n, *_mean_se(rows)))
    return scaling_fit(pts, "n")


def ou_covariance_analytic(H: TestFunction, t: float, nu: float = 0.5, sigma2: float = 0.25,
                           M: int = 4096) -> float:
    """``sigma^2 <H, e^{nu t Delta} H>`` on the unit torus via Fourier multipliers."""
    Hk = np.fft.fft(H(np.arange(M) / M)) / M
    k = np.fft.fftfreq(M, 1.0 / M)
    return float(sigma2 * np.sum(np.abs(Hk) ** 2 * np.exp(-nu * t * (2 * np.pi * k) ** 2)))


@dataclass
class CrossoverTable:
    """Monte Carlo autocovariances next to their analytic values."""

    times: list
    estimates: list
    std_errors: list
    analytic: list

    @property
    def z_scores(self) -> list:
        return [(e - a) / s if s > 0 else float("inf") if e != a else 0.0
                for e, a, s in zip(self.estimates, self.analytic, self.std_errors)]


def ou_covariance_experiment(model: ModelSpec, H: TestFunction | None = None,
                             t_grid: Sequence[float] = (0.01, 0.05, 0.1), replicas: int = 2000,
                             base_seed: int = 0, workers: int = 1, shift_average: bool = True,
                             nu: float = 0.5, sigma2: float = 0.25) -> CrossoverTable:
    """Stationary ``E[Y_t(H) Y_0(H)]`` against the Ornstein-Uhlenbeck prediction."""
    if not isinstance(model.variant, Wasep) or model.variant.gamma < 0.5:
        raise ParameterError("crossover experiment needs WASEP with gamma >= 1/2")
    if abs(model.a - 2.0) > 1e-12 or abs(model.rho - 0.5) > 1e-12:
        raise ParameterError("crossover experiment needs a = 2 and rho = 1/2")
    if replicas < 2:
        raise ParameterError("at least 2 replicas are needed")
    H = H if H is not None else TestFunction.gaussian_bump()
    ts = [float(x) for x in t_grid]
    if ts != sorted(ts) or ts[0] < 0:
        raise ParameterError("t grid must be nondecreasing and nonnegative")
    n = model.n
    p = _FieldPayload(model, H(np.arange(n) / n), tuple(ts), shift_average)
    rows = run_replicas(_field_cov_replica, p, replicas, base_seed, workers)
    est, ses = zip(*(_mean_se(rows[:, j]) for j in range(len(ts))))
    return CrossoverTable(ts, list(est), list(ses), [ou_covariance_analytic(H, t, nu, sigma2) for t in ts])


# ---------------------------------------------------------------------------
# energy estimate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _EnergyPayload:
    model: ModelSpec
    ells: tuple
    grads: np.ndarray      # (shifts, n)
    duration: float
    partitions: int


def _energy_replica(p: _EnergyPayload, rng) -> np.ndarray:
    cfg = invariant_sample(p.model, rng)
    chans = [Channel("msq", ell, g) for g in p.grads for ell in p.ells]
    kern = ExclusionKernel(p.model, cfg, rng, channels=chans)
    m = max(1, p.partitions)
    prev = np.zeros(len(chans))
    qv = np.zeros(len(chans))
    for _ in range(m):
        kern.advance(p.duration / m)
        cur = kern.integrals
        qv += (cur - prev) ** 2
        prev = cur
    k = len(p.ells)
    return np.concatenate([prev.reshape(-1, k), qv.reshape(-1, k)], axis=1).ravel()


def energy_estimate_experiment(model: ModelSpec, H: TestFunction | None = None,
                               eps_grid: Sequence[float] = (0.4, 0.2, 0.1, 0.05),
                               s: float = 0.0, t: float = 0.05, replicas: int = 100,
                               base_seed: int = 0, workers: int = 1, shifts: int = 1,
                               qv_partitions: int = 0) -> ScalingReport:
    """``E[(B^eps_{s,t} - B^{eps/2}_{s,t})^2]`` per ``eps`` and its fitted slope in ``eps``.

    The process starts stationary, so only ``t - s`` matters.  ``shifts``
    averages over translates of ``H`` inside every replica.  With
    ``qv_partitions = m > 0`` the report's ``extra["qv"]`` holds the mean
    partition sum ``sum_i (B^eps increments over m equal pieces)^2`` for
    each ``eps``.
    """
    if not model.is_exclusion:
        raise KindMismatchError("energy experiment needs an exclusion model")
    if replicas < 2:
        raise ParameterError("at least 2 replicas are needed")
    H = H if H is not None else TestFunction.gaussian_bump()
    eps = sorted(float(e) for e in eps_grid)[::-1]
    n = model.n
    if 0.5 * eps[-1] <= 1.0 / n:
        raise MollifierError("the finest scale eps/2 must exceed 1/n")
    for a, b in zip(eps[:-1], eps[1:]):
        if abs(a / b - 2.0) > 1e-9:
            raise ParameterError("eps grid must be dyadic")
    duration = t - s
    grad = discretize(H, n, "gradient").w
    if duration == 0 or not np.any(grad):
        return _zero_report(sorted(eps), "epsilon")
    if duration < 0:
        raise ParameterError("need s <= t")
    scales = eps + [0.5 * eps[-1]]
    ells = tuple(block_length(e, n) for e in scales)
    offs = [round(k * n / shifts) for k in range(shifts)]
    grads = np.stack([np.roll(grad, o) for o in offs])
    p = _EnergyPayload(model, ells, grads, float(duration), int(qv_partitions))
    rows = run_replicas(_energy_replica, p, replicas, base_seed, workers)
    k = len(ells)
    rows = rows.reshape(replicas, shifts, 2 * k)
    B = rows[:, :, :k]
    diffs = (B[:, :, :-1] - B[:, :, 1:]) ** 2          # (R, shifts, len(eps))
    per_rep = diffs.mean(axis=1)
    pts = [(e, *_mean_se(per_rep[:, j])) for j, e in enumerate(eps)]
    rep = scaling_fit(pts, "epsilon")
    rep.extra["ell"] = {e: l for e, l in zip(scales, ells)}
    if qv_partitions:
        qv = rows[:, :, k:k + len(eps)].mean(axis=1)
        rep.extra["qv"] = {e: float(qv[:, j].mean()) for j, e in enumerate(eps)}
    return rep
