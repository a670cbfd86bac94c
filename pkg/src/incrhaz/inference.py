"""Simultaneous inference over a grid of hazard shifts.

The multiplier bootstrap perturbs the centered, standardized influence
values with i.i.d. sign flips (or standard normals) and records the sup of
the perturbed process over the grid; the empirical upper quantile of those
sups calibrates a uniform confidence band. The same bootstrap draws feed a
test of a flat effect curve. A Bayesian bootstrap supplies standard errors
for the weighting-only estimator, which has no plug-in sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, StepCumHazard, ThetaGrid
from .eif import ipw_weights, phi_matrix
from .errors import ConfigError, FitError, NumericError
from .estimators import crossfit_nuisances, crossfit_phi_matrix
from .nuisance import LearnerConfig, fit_cox, fit_hazard, fit_outcome, make_folds

__all__ = [
    "BandResult",
    "multiplier_critical_value",
    "uniform_band",
    "global_null_pvalue",
    "bayesian_bootstrap_se",
    "ipw_with_weights",
]

_MULTIPLIERS = ("rademacher", "gaussian")


def _draw_rng(seed: int, b: int) -> np.random.Generator:
    """Independent counter-based stream for bootstrap draw b."""
    key = np.random.SeedSequence((seed, b)).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def multiplier_sups(phi: np.ndarray, psi_hat: np.ndarray, sigma_hat: np.ndarray,
                    B: int, seed: int, multiplier: str = "rademacher") -> np.ndarray:
    """Bootstrap sup statistics, one per draw.

    Draw b computes ``max_g | n^{-1/2} sum_i xi_i (phi_ig - psi_g) / sigma_g |``
    with multipliers ``xi`` from a stream keyed by ``(seed, b)``, so any
    single draw can be reproduced in isolation.
    """
    if multiplier not in _MULTIPLIERS:
        raise ConfigError(f"unknown multiplier '{multiplier}' (use one of {_MULTIPLIERS})")
    n, G = phi.shape
    bad = np.flatnonzero(~(sigma_hat > 0.0))
    if bad.size:
        raise NumericError(
            f"sigma is not positive at grid index {int(bad[0])}; "
            "the influence values there are degenerate"
        )
    Z = (phi - psi_hat) / (sigma_hat * math.sqrt(n))
    sups = np.empty(B)
    chunk = max(1, 4_000_000 // max(n, 1))
    xi = np.empty((min(chunk, B), n))
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        for b in range(lo, hi):
            rng = _draw_rng(seed, b)
            if multiplier == "rademacher":
                xi[b - lo] = rng.integers(0, 2, size=n) * 2.0 - 1.0
            else:
                rng.standard_normal(n, out=xi[b - lo])
        sups[lo:hi] = np.abs(xi[: hi - lo] @ Z).max(axis=1)
    return sups


def multiplier_critical_value(phi: np.ndarray, psi_hat: np.ndarray,
                              sigma_hat: np.ndarray, alpha: float = 0.05,
                              B: int = 2000, seed: int = 0,
                              multiplier: str = "rademacher") -> tuple[float, np.ndarray]:
    """Empirical (1-alpha) quantile of the bootstrap sups, plus the sups.

    The quantile is the ceil((1-alpha)*B)-th order statistic, which never
    undershoots the nominal level for finite B.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if B < 100:
        raise ConfigError(f"at least 100 bootstrap draws are required, got {B}")
    sups = multiplier_sups(phi, psi_hat, sigma_hat, B, seed, multiplier)
    k = math.ceil((1.0 - alpha) * B)
    c_alpha = float(np.sort(sups)[k - 1])
    return c_alpha, sups


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BandResult:
    """Uniform confidence band over a shift grid.

    ``lower``/``upper`` are ``psi_hat -/+ c_alpha * sigma_hat / sqrt(n)``;
    ``boot_sups`` keeps the bootstrap draws so the flatness test can reuse
    them without resampling.
    """

    thetas: np.ndarray
    psi_hat: np.ndarray
    sigma_hat: np.ndarray
    c_alpha: float
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    B: int
    seed: int
    n: int
    estimator: str
    boot_sups: np.ndarray

    @property
    def se(self) -> np.ndarray:
        return self.sigma_hat / math.sqrt(self.n)

    def covers(self, truth: np.ndarray) -> bool:
        truth = np.asarray(truth, dtype=float)
        return bool(np.all((self.lower <= truth) & (truth <= self.upper)))

    def to_rows(self) -> list[dict[str, float]]:
        se = self.se
        return [
            {
                "theta": float(self.thetas[g]),
                "psi_hat": float(self.psi_hat[g]),
                "se": float(se[g]),
                "lower": float(self.lower[g]),
                "upper": float(self.upper[g]),
            }
            for g in range(self.thetas.size)
        ]


def uniform_band(ds: Dataset, grid: ThetaGrid,
                 learners: LearnerConfig | None = None,
                 estimator: str = "aipw_cf", alpha: float = 0.05,
                 B: int = 2000, seed: int = 0,
                 multiplier: str = "rademacher") -> BandResult:
    """Simultaneous confidence band for the effect curve over a shift grid.

    Parameters
    ----------
    ds : Dataset
    grid : ThetaGrid
        Shifts to evaluate, with their scalar labels.
    learners : LearnerConfig, optional
        Nuisance learners; the config's K and seed drive the folds when
        ``estimator="aipw_cf"``.
    estimator : {"aipw_cf", "aipw"}
        Cross-fitted (default) or single-fit augmented estimator.
    alpha : float
        One minus the simultaneous coverage level.
    B : int
        Bootstrap draws (at least 100).
    seed : int
        Seed for the multiplier streams.
    multiplier : {"rademacher", "gaussian"}

    Returns
    -------
    BandResult
    """
    if learners is None:
        learners = LearnerConfig()
    shifts = list(grid.shifts)
    if estimator == "aipw_cf":
        plan = make_folds(ds.n, learners.K, learners.seed)
        fits = crossfit_nuisances(ds, plan, learners)
        phi = crossfit_phi_matrix(ds, shifts, plan, fits)
    elif estimator == "aipw":
        Lam = fit_hazard(ds, learners.hazard)
        mu = fit_outcome(ds, learners.outcome)
        phi = phi_matrix(ds, shifts, Lam, mu)
    else:
        raise ConfigError(
            f"estimator '{estimator}' does not support uniform bands "
            "(use 'aipw_cf' or 'aipw')"
        )
    psi = phi.mean(axis=0)
    sigma = np.sqrt(np.mean((phi - psi) ** 2, axis=0))
    c_alpha, sups = multiplier_critical_value(phi, psi, sigma, alpha, B, seed, multiplier)
    half = c_alpha * sigma / math.sqrt(ds.n)
    return BandResult(
        thetas=_freeze(np.asarray(grid.labels)),
        psi_hat=_freeze(psi),
        sigma_hat=_freeze(sigma),
        c_alpha=c_alpha,
        lower=_freeze(psi - half),
        upper=_freeze(psi + half),
        alpha=alpha,
        B=B,
        seed=seed,
        n=ds.n,
        estimator=estimator,
        boot_sups=_freeze(sups),
    )


def _flatline_stat(psi: np.ndarray, se: np.ndarray) -> float:
    """Smallest q >= 0 such that the intervals psi_g ± q*se_g share a point."""
    gap = float(np.max(psi) - np.min(psi))
    if gap <= 0.0:
        return 0.0

    def excess(q: float) -> float:
        return float(np.max(psi - q * se) - np.min(psi + q * se))

    lo, hi = 0.0, 1.0
    while excess(hi) > 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise NumericError("flatness statistic did not converge (zero scales?)")
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def global_null_pvalue(band: BandResult) -> tuple[float, float]:
    """Test that the effect curve is constant across the grid.

    The statistic is the smallest half-width multiplier q at which every
    pointwise interval ``psi_g ± q * se_g`` overlaps; its null distribution
    is approximated by the band's bootstrap sups.

    Returns
    -------
    (p_value, q_star)
        ``p_value = mean(boot_sups >= q_star)``; a flat observed curve
        gives ``q_star = 0`` and p-value 1.
    """
    q_star = _flatline_stat(band.psi_hat, band.se)
    p = float(np.mean(band.boot_sups >= q_star))
    return p, q_star


def ipw_with_weights(ds: Dataset, shift, Lam: StepCumHazard,
                     weights: np.ndarray) -> float:
    """Weighted-mean version of the weighting estimator: sum w*y*W / sum w."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (ds.n,) or not np.isfinite(weights).all() or (weights < 0).any():
        raise ConfigError("weights must be a nonnegative finite vector of length n")
    W = ipw_weights(ds, shift, Lam)
    return float(np.sum(weights * ds.y * W) / np.sum(weights))


def bayesian_bootstrap_se(ds: Dataset, shift, hazard: str = "cox",
                          B: int = 200, seed: int = 0) -> float:
    """Bayesian-bootstrap standard error for the weighting estimator.

    Each draw reweights units with normalized standard exponentials,
    refits the hazard under those case weights, and recomputes the
    weighted estimate; the standard deviation across draws is returned.
    Draws whose hazard refit fails are skipped, but more than 10% failures
    aborts.
    """
    if B < 50:
        raise ConfigError(f"at least 50 bootstrap draws are required, got {B}")
    warm = None
    if hazard == "cox":
        try:
            warm = fit_cox(ds).beta
        except FitError:
            warm = None
    psis = []
    failures = 0
    for b in range(B):
        rng = _draw_rng(seed, b)
        w = rng.standard_exponential(ds.n)
        w /= w.mean()
        try:
            if hazard == "cox":
                Lam_b = fit_cox(ds, weights=w, beta0=warm).cum_hazard
            else:
                Lam_b = fit_hazard(ds, hazard, weights=w)
            psis.append(ipw_with_weights(ds, shift, Lam_b, w))
        except (FitError, NumericError):
            failures += 1
    if failures > 0.1 * B:
        raise FitError(
            f"bayesian bootstrap: {failures}/{B} hazard refits failed; "
            "the standard error is unreliable"
        )
    return float(np.std(psis, ddof=1))
