"""Nuisance fitters: conditional cumulative hazards and outcome regressions.

Hazard side: Nelson–Aalen (optionally the -log Kaplan–Meier variant), a
weighted Cox proportional-hazards fit with Breslow tie handling and Breslow
baseline, and a "flexible" Cox variant whose covariates interact with
polynomial time terms. Outcome side: linear least squares, logistic
regression, and Nadaraya–Watson kernel smoothing on (u, l). Plus the
deterministic K-fold plan used for cross-fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import Dataset, StepCumHazard
from .errors import ConfigError, FitError, NumericError

HAZARD_LEARNERS = ("cox", "nelson-aalen", "km-log", "cox-flex")
OUTCOME_LEARNERS = ("linear", "logistic", "kernel")

__all__ = [
    "fit_nelson_aalen",
    "fit_cox",
    "fit_cox_flex",
    "fit_outcome",
    "fit_hazard",
    "make_folds",
    "CoxFit",
    "LinearOutcome",
    "LogisticOutcome",
    "KernelOutcome",
    "FoldPlan",
    "LearnerConfig",
]


def _event_layout(ds: Dataset, weights: np.ndarray | None):
    """Sort by follow-up time and locate each unit's risk-set start index."""
    if weights is None:
        weights = np.ones(ds.n)
    else:
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if weights.size != ds.n:
            raise ConfigError("weights must have one entry per unit")
        if not np.isfinite(weights).all() or weights.min() < 0:
            raise NumericError("case weights must be finite and nonnegative")
    order = np.argsort(ds.u, kind="stable")
    us = ds.u[order]
    ws = weights[order]
    evt = ds.delta[order] == 1
    if evt.any() and us[evt].min() <= 0.0:
        raise NumericError("treatment at time 0 cannot carry a hazard jump")
    # With ties, every member of a tie block shares the block's first index.
    first_idx = np.searchsorted(us, us, side="left")
    return order, us, ws, evt, first_idx


def fit_nelson_aalen(ds: Dataset, weights=None, *, km_log: bool = False) -> StepCumHazard:
    """Covariate-free cumulative-hazard estimate with jumps d_j / r_j.

    Parameters
    ----------
    ds : Dataset
    weights : array-like, optional
        Nonnegative case weights (used by the Bayesian bootstrap); both the
        event counts d_j and the at-risk totals r_j are weighted sums.
    km_log : bool
        When True, return the -log Kaplan-Meier transform instead: jumps
        -log(1 - d_j / r_j). A time point whose events exhaust the risk set
        makes that transform infinite and raises a NumericError.

    Returns
    -------
    StepCumHazard with one jump per distinct event time (no events: no jumps).
    """
    _, us, ws, evt, first_idx = _event_layout(ds, weights)
    if not evt.any():
        return StepCumHazard(np.empty(0), np.empty(0), ds.tau, cap=0.0)
    r_suffix = np.concatenate([np.cumsum(ws[::-1])[::-1], [0.0]])
    evt_times = us[evt]
    jump_times, start = np.unique(evt_times, return_index=True)
    d = np.add.reduceat(ws[evt], start)
    r = r_suffix[first_idx[evt][start]]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(r > 0, d / np.where(r > 0, r, 1.0), 0.0)
    if km_log:
        if np.any(frac >= 1.0):
            raise NumericError(
                "-log Kaplan-Meier is infinite where events exhaust the risk set; "
                "use the nelson-aalen hazard instead"
            )
        inc = -np.log1p(-frac)
    else:
        inc = frac
    keep = inc > 0
    inc = inc[keep]
    return StepCumHazard(jump_times[keep], inc, ds.tau, cap=float(inc.sum()))


@dataclass(frozen=True)
class CoxFit:
    """A fitted proportional-hazards model.

    ``cum_hazard`` predicts Λ̂(t|l) = Λ̂₀(t)·exp(coef·features(l)); the
    baseline is anchored at covariates 0, not at the sample mean.
    """

    beta: np.ndarray
    cum_hazard: StepCumHazard
    iterations: int
    grad_norm: float
    loglik: float
    learner: str = "cox"


def _newton(loss_grad_hess, beta0, tol, max_iter, context):
    """Maximize a concave log likelihood by damped Newton-Raphson.

    ``loss_grad_hess(beta)`` returns (loglik, score, neg_hessian). Raises
    FitError on singular information, divergence, or iteration exhaustion;
    the exhaustion error carries the last iterate as ``last_beta``.
    """
    beta = np.asarray(beta0, dtype=float).copy()
    ll, score, hneg = loss_grad_hess(beta)
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(score))
        if gnorm <= tol:
            return beta, it - 1, gnorm, ll
        try:
            step = np.linalg.solve(hneg, score)
        except np.linalg.LinAlgError:
            raise FitError(f"{context}: singular information matrix "
                           "(collinear covariates?)") from None
        if float(np.linalg.norm(beta + step, ord=np.inf)) > 200.0:
            raise FitError(f"{context}: diverging coefficients "
                           "(monotone likelihood / separation)")
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            ll_new, score_new, hneg_new = loss_grad_hess(cand)
            # Slack is relative to |ll|: in the terminal phase a full Newton
            # step gains less than the likelihood's own rounding noise, and
            # an absolute threshold would reject steps the score still needs.
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            scale *= 0.5
        else:
            raise FitError(f"{context}: line search failed to improve the likelihood")
        beta, ll, score, hneg = cand, ll_new, score_new, hneg_new
    err = FitError(f"{context}: no convergence after {max_iter} iterations "
                   f"(gradient norm {float(np.linalg.norm(score)):.3e})")
    err.last_beta = beta
    raise err


def fit_cox(ds: Dataset, tol: float = 1e-8, max_iter: int = 100,
            weights=None, beta0=None) -> CoxFit:
    """Cox proportional hazards via the Breslow partial likelihood.

    Covariates are centered internally for numerical stability and the
    Breslow baseline is rescaled back to covariates 0 exactly. Columns with
    zero variance are excluded from the Newton solve and receive coefficient
    0, so a dataset whose covariates are all constant degenerates to the
    (weighted) Nelson-Aalen fit. ``beta0`` warm-starts the Newton solve —
    useful when refitting under perturbed case weights.

    Raises
    ------
    ConfigError  if the dataset has no covariate columns.
    FitError     if there are no events, the information matrix is singular,
                 the likelihood is monotone (separation), or Newton-Raphson
                 exhausts ``max_iter``.
    """
    if ds.p == 0:
        raise ConfigError("cox requires at least one covariate column; "
                          "use the nelson-aalen hazard for covariate-free data")
    order, us, ws, evt, first_idx = _event_layout(ds, weights)
    if not evt.any():
        raise FitError("cox: no treated units")
    X = ds.l[order]
    wtot = float(ws.sum())
    if wtot <= 0:
        raise FitError("cox: all case weights are zero")
    xbar_all = ws @ X / wtot
    var = ws @ (X - xbar_all) ** 2 / wtot
    active = var > 1e-12 * (1.0 + xbar_all**2)
    Xc = X[:, active] - xbar_all[active]
    pa = int(active.sum())

    evt_first = first_idx[evt]
    w_evt = ws[evt]

    def breslow(beta):
        eta = Xc @ beta if pa else np.zeros(us.size)
        if eta.size and float(np.max(np.abs(eta))) > 300.0:
            raise FitError("cox: diverging linear predictor (separation)")
        r = ws * np.exp(eta)
        s0 = np.cumsum(r[::-1])[::-1]
        rx = r[:, None] * Xc
        s1 = np.cumsum(rx[::-1], axis=0)[::-1]
        rxx = rx[:, :, None] * Xc[:, None, :]
        s2 = np.cumsum(rxx[::-1], axis=0)[::-1]
        s0e = s0[evt_first]
        s1e = s1[evt_first]
        s2e = s2[evt_first]
        xbar = s1e / s0e[:, None]
        ll = float(w_evt @ (eta[evt] - np.log(s0e)))
        score = w_evt @ (Xc[evt] - xbar)
        hneg = np.einsum("e,eij->ij", w_evt, s2e / s0e[:, None, None]
                         - xbar[:, :, None] * xbar[:, None, :])
        return ll, score, hneg

    if pa:
        start = np.zeros(pa)
        if beta0 is not None:
            b0 = np.asarray(beta0, dtype=float).reshape(-1)
            if b0.size != ds.p:
                raise ConfigError("beta0 must have one entry per covariate column")
            start = b0[active]
        beta_a, iters, gnorm, ll = _newton(breslow, start, tol, max_iter, "cox")
    else:
        beta_a, iters, gnorm = np.zeros(0), 0, 0.0
        ll = breslow(beta_a)[0]

    beta = np.zeros(ds.p)
    beta[active] = beta_a
    # Breslow baseline at the centered scale, then re-anchored at l = 0.
    eta = Xc @ beta_a if pa else np.zeros(us.size)
    r = ws * np.exp(eta)
    s0 = np.cumsum(r[::-1])[::-1]
    evt_times = us[evt]
    jump_times, start = np.unique(evt_times, return_index=True)
    d = np.add.reduceat(w_evt, start)
    base = d / s0[evt_first[start]]
    base = base * math.exp(-float(beta @ xbar_all))
    keep = base > 0
    hazard = StepCumHazard(jump_times[keep], base[keep], ds.tau, beta=beta,
                           cap=float(base[keep].sum()))
    return CoxFit(beta, hazard, iters, gnorm, ll)


def fit_cox_flex(ds: Dataset, degree: int = 2, tol: float = 1e-8,
                 max_iter: int = 100, weights=None) -> CoxFit:
    """Cox model with polynomial time interactions: features l * t^d, d=0..degree.

    The linear predictor of unit l at time t is sum_d (l @ gamma_d) * t^d, so
    covariate effects may vary over time. The partial likelihood is evaluated
    exactly (risk sets recomputed per event time), which costs O(events * n)
    per Newton iteration — fine at the sample sizes this learner targets.
    """
    if ds.p == 0:
        raise ConfigError("cox-flex requires at least one covariate column")
    if degree < 1:
        raise ConfigError("cox-flex needs degree >= 1; plain cox covers degree 0")
    order, us, ws, evt, first_idx = _event_layout(ds, weights)
    if not evt.any():
        raise FitError("cox-flex: no treated units")
    X = ds.l[order]
    p, D = ds.p, degree + 1
    evt_first = first_idx[evt]
    w_evt = ws[evt]
    t_evt = us[evt]
    x_evt = X[evt]

    def z_row(t, l):
        return np.concatenate([l * t**d for d in range(D)])

    def partial(gamma):
        G = gamma.reshape(D, p)
        c = X @ G.T  # (n, D): per-unit polynomial coefficients of eta(t)
        ll = 0.0
        score = np.zeros(D * p)
        hneg = np.zeros((D * p, D * p))
        for e in range(t_evt.size):
            k = evt_first[e]
            t = t_evt[e]
            powers = t ** np.arange(D)
            eta = c[k:, :] @ powers
            if float(np.max(np.abs(eta))) > 300.0:
                raise FitError("cox-flex: diverging linear predictor (separation)")
            shift = float(eta.max())
            r = ws[k:] * np.exp(eta - shift)
            a0 = float(r.sum())
            a1 = r @ X[k:]
            a2 = (r[:, None] * X[k:]).T @ X[k:]
            s1 = np.kron(powers, a1 / a0)
            s2 = np.kron(np.outer(powers, powers), a2 / a0)
            ze = z_row(t, x_evt[e])
            ll += w_evt[e] * (float(ze @ gamma) - (shift + math.log(a0)))
            score += w_evt[e] * (ze - s1)
            hneg += w_evt[e] * (s2 - np.outer(s1, s1))
        return ll, score, hneg

    gamma, iters, gnorm, ll = _newton(partial, np.zeros(D * p), tol, max_iter, "cox-flex")

    G = gamma.reshape(D, p)
    c = X @ G.T
    jump_times, start = np.unique(t_evt, return_index=True)
    d_w = np.add.reduceat(w_evt, start)
    base = np.empty(jump_times.size)
    for j, t in enumerate(jump_times):
        k = evt_first[start[j]]
        powers = t ** np.arange(D)
        base[j] = d_w[j] / float(np.sum(ws[k:] * np.exp(c[k:, :] @ powers)))
    tpow = jump_times[None, :] ** np.arange(D)[:, None]  # (D, m)

    def multiplier(l):
        l2 = np.atleast_2d(np.asarray(l, dtype=float))
        out = np.exp((l2 @ G.T) @ tpow)  # (n, m)
        return out[0] if np.asarray(l).ndim == 1 else out

    hazard = StepCumHazard(jump_times, base, ds.tau, multiplier_fn=multiplier,
                           cap=float(base.sum()))
    return CoxFit(gamma.copy(), hazard, iters, gnorm, ll, learner="cox-flex")


def fit_hazard(ds: Dataset, kind: str, weights=None) -> StepCumHazard:
    """Dispatch on the hazard-learner name used in configs and the CLI."""
    if kind == "cox":
        return fit_cox(ds, weights=weights).cum_hazard
    if kind == "cox-flex":
        return fit_cox_flex(ds, weights=weights).cum_hazard
    if kind == "nelson-aalen":
        return fit_nelson_aalen(ds, weights)
    if kind == "km-log":
        return fit_nelson_aalen(ds, weights, km_log=True)
    raise ConfigError(f"unknown hazard learner {kind!r}; expected one of {HAZARD_LEARNERS}")


# ---------------------------------------------------------------------------
# outcome regressions
# ---------------------------------------------------------------------------


def _design(u: np.ndarray, l: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(u.size), u, l])


@dataclass(frozen=True)
class LinearOutcome:
    """mu(t, l) = coef · (1, t, l)."""

    coef: np.ndarray
    learner: str = "linear"
    fold: int | None = None

    def predict(self, times, l):
        times = np.asarray(times, dtype=float)
        l = np.asarray(l, dtype=float).reshape(-1)
        out = self.coef[0] + self.coef[1] * times
        if l.size:
            out = out + float(l @ self.coef[2:])
        return out

    def predict_matrix(self, times, L):
        times = np.asarray(times, dtype=float)
        L = np.atleast_2d(np.asarray(L, dtype=float))
        lpart = L @ self.coef[2:] if L.shape[1] else np.zeros(L.shape[0])
        return self.coef[0] + self.coef[1] * times[None, :] + lpart[:, None]


@dataclass(frozen=True)
class LogisticOutcome:
    """mu(t, l) = expit(coef · (1, t, l)); predictions stay inside (0, 1)."""

    coef: np.ndarray
    learner: str = "logistic"
    fold: int | None = None

    def predict(self, times, l):
        times = np.asarray(times, dtype=float)
        l = np.asarray(l, dtype=float).reshape(-1)
        eta = self.coef[0] + self.coef[1] * times
        if l.size:
            eta = eta + float(l @ self.coef[2:])
        return expit(eta)

    def predict_matrix(self, times, L):
        times = np.asarray(times, dtype=float)
        L = np.atleast_2d(np.asarray(L, dtype=float))
        lpart = L @ self.coef[2:] if L.shape[1] else np.zeros(L.shape[0])
        return expit(self.coef[0] + self.coef[1] * times[None, :] + lpart[:, None])


@dataclass(frozen=True)
class KernelOutcome:
    """Nadaraya-Watson regression on (u, l) with a product Gaussian kernel.

    Bandwidths follow Silverman's rule per dimension with a floor of
    1e-3 times the dimension's training range; log-weights are shifted by
    their maximum before exponentiation so tiny bandwidths degrade to
    nearest-neighbor interpolation instead of 0/0.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    bandwidths: np.ndarray
    learner: str = "kernel"
    fold: int | None = None

    def _predict_rows(self, q: np.ndarray) -> np.ndarray:
        z = (q[:, None, :] - self.x_train[None, :, :]) / self.bandwidths
        logw = -0.5 * np.sum(z * z, axis=2)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        return (w @ self.y_train) / w.sum(axis=1)

    def predict(self, times, l):
        times = np.asarray(times, dtype=float).reshape(-1)
        l = np.asarray(l, dtype=float).reshape(-1)
        q = np.column_stack([times, np.broadcast_to(l, (times.size, l.size))])
        return self._predict_rows(q)

    def predict_matrix(self, times, L):
        times = np.asarray(times, dtype=float)
        L = np.atleast_2d(np.asarray(L, dtype=float))
        out = np.empty((L.shape[0], times.size))
        for i in range(L.shape[0]):
            out[i] = self.predict(times, L[i])
        return out


def _silverman_bandwidths(x: np.ndarray) -> np.ndarray:
    n, d = x.shape
    sd = np.std(x, axis=0, ddof=1) if n > 1 else np.zeros(d)
    rng = x.max(axis=0) - x.min(axis=0)
    h = sd * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
    h = np.maximum(h, 1e-3 * rng)
    h[rng == 0] = 1.0  # constant dimension: any positive width, distances are 0
    return h


def fit_outcome(ds: Dataset, learner: str = "linear", *, fold: int | None = None,
                bandwidths=None, tol: float = 1e-8, max_iter: int = 100):
    """Fit mu(t, l) = E(Y | U = t, L = l) on features (1, u, l).

    ``learner`` is one of "linear" (least squares), "logistic" (Newton MLE,
    binary y required), or "kernel" (Nadaraya-Watson on (u, l);
    ``bandwidths`` overrides Silverman's rule).
    """
    if ds.n == 0:
        raise ConfigError("cannot fit an outcome model on an empty dataset")
    if learner == "linear":
        X = _design(ds.u, ds.l)
        coef, _, rank, _ = np.linalg.lstsq(X, ds.y, rcond=None)
        if rank < X.shape[1]:
            raise FitError(f"linear outcome: singular design (rank {rank} < {X.shape[1]})")
        return LinearOutcome(coef, fold=fold)
    if learner == "logistic":
        if not np.isin(ds.y, (0.0, 1.0)).all():
            raise ConfigError("logistic outcome requires y in {0, 1}")
        X = _design(ds.u, ds.l)
        y = ds.y
        if np.all(y == y[0]):
            # Degenerate response: the MLE sits at infinity, but the fitted
            # mean is just the constant. expit(±40) rounds to 1/4e-18.
            coef = np.zeros(X.shape[1])
            coef[0] = 40.0 if y[0] == 1.0 else -40.0
            return LogisticOutcome(coef, fold=fold)

        def bernoulli(beta):
            eta = X @ beta
            if float(np.max(np.abs(eta))) > 300.0:
                raise FitError("logistic outcome: diverging linear predictor (separation)")
            pr = expit(eta)
            ll = float(y @ eta - np.logaddexp(0.0, eta).sum())
            score = X.T @ (y - pr)
            w = pr * (1.0 - pr)
            hneg = (X * w[:, None]).T @ X
            return ll, score, hneg

        coef, _, _, _ = _newton(bernoulli, np.zeros(X.shape[1]), tol, max_iter,
                                "logistic outcome")
        if float(np.max(np.abs(y - expit(X @ coef)))) < 1e-5:
            # The score can reach tolerance while the MLE runs off to
            # infinity. At a finite MLE the residuals balance at zero without
            # all vanishing; every fitted probability within 1e-5 of its
            # response is the signature of (quasi-)separated classes.
            raise FitError("logistic outcome: fitted probabilities collapse to 0/1 "
                           "(separated classes)")
        return LogisticOutcome(coef, fold=fold)
    if learner == "kernel":
        x = np.column_stack([ds.u, ds.l])
        h = (np.asarray(bandwidths, dtype=float).reshape(-1) if bandwidths is not None
             else _silverman_bandwidths(x))
        if h.size != x.shape[1] or np.any(h <= 0):
            raise ConfigError("kernel bandwidths must be positive, one per (u, l) dimension")
        return KernelOutcome(x.copy(), ds.y.copy(), h, fold=fold)
    raise ConfigError(f"unknown outcome learner {learner!r}; expected one of {OUTCOME_LEARNERS}")


# ---------------------------------------------------------------------------
# cross-fitting plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    """Deterministic K-fold partition: ``assignment[i]`` is unit i's fold."""

    n: int
    K: int
    seed: int
    assignment: np.ndarray

    def fold_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    """Shuffle 0..n-1 with a seeded PCG64 stream and deal round-robin into K
    folds, so sizes differ by at most one and the plan is a pure function of
    (n, K, seed)."""
    if not 2 <= K <= n:
        raise ConfigError(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % K
    assignment.setflags(write=False)
    return FoldPlan(n, K, int(seed), assignment)


@dataclass(frozen=True)
class LearnerConfig:
    """Nuisance-learner configuration shared by estimators, bands, and the CLI."""

    hazard: str = "cox"
    outcome: str = "linear"
    K: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.hazard not in HAZARD_LEARNERS:
            raise ConfigError(
                f"unknown hazard learner {self.hazard!r}; expected one of {HAZARD_LEARNERS}"
            )
        if self.outcome not in OUTCOME_LEARNERS:
            raise ConfigError(
                f"unknown outcome learner {self.outcome!r}; expected one of {OUTCOME_LEARNERS}"
            )
        if int(self.K) < 2:
            raise ConfigError(f"K={self.K} must be at least 2")

    @staticmethod
    def from_json(obj: dict) -> "LearnerConfig":
        if not isinstance(obj, dict):
            raise ConfigError("learner config must be a JSON object")
        known = {"hazard", "outcome", "K", "seed"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown learner-config keys: {sorted(extra)}")
        defaults = LearnerConfig()
        return LearnerConfig(
            hazard=obj.get("hazard", defaults.hazard),
            outcome=obj.get("outcome", defaults.outcome),
            K=int(obj.get("K", defaults.K)),
            seed=int(obj.get("seed", defaults.seed)),
        )

    def to_json(self) -> dict:
        return {"hazard": self.hazard, "outcome": self.outcome,
                "K": self.K, "seed": self.seed}
