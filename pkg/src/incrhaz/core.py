"""Observed-data containers, hazard-shift interventions, and step hazards.

Everything downstream consumes the three objects defined here: a
column-oriented :class:`Dataset` of observed units, a :class:`HazardShift`
describing the multiplicative intervention ``theta(t, l)`` applied to the
treatment-initiation hazard, and a :class:`StepCumHazard` holding a fitted
conditional cumulative hazard as an exact right-continuous step function.
Because every estimator in the package reduces to finite Stieltjes sums
against the fitted hazard, the step representation is exact, not an
approximation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ConfigError, DomainError, NumericError, SchemaError

# Relative slack when comparing observation times against the horizon, so
# serialized floats survive a write/parse round trip.
TIME_RTOL = 1e-9

__all__ = [
    "ObservedUnit",
    "Dataset",
    "CovariateBox",
    "HazardShift",
    "ConstantShift",
    "FamilyShift",
    "TabulatedShift",
    "StepCumHazard",
    "OutcomeModel",
    "ThetaGrid",
    "evaluate_shift",
    "cum_hazard",
    "read_csv",
    "write_csv",
    "parse_shift",
    "load_shifts",
]


@dataclass(frozen=True)
class ObservedUnit:
    """One subject's record.

    ``u = min(T, tau)`` is the follow-up time, ``delta = 1`` iff treatment
    started strictly before the horizon; a unit reaching the horizon
    untreated has ``u == tau`` and ``delta == 0``.
    """

    y: float
    u: float
    delta: int
    l: tuple[float, ...] = ()


@dataclass(frozen=True)
class CovariateBox:
    """Axis-aligned covariate domain (the training data's bounding box)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @staticmethod
    def from_data(l: np.ndarray) -> "CovariateBox":
        l = np.asarray(l, dtype=float)
        if l.ndim != 2:
            raise ConfigError("covariate array must be 2-d (n, p)")
        if l.shape[1] == 0 or l.shape[0] == 0:
            return CovariateBox((), ())
        return CovariateBox(tuple(l.min(axis=0)), tuple(l.max(axis=0)))

    @property
    def p(self) -> int:
        return len(self.lo)

    def contains(self, l: np.ndarray) -> bool:
        if self.p == 0:
            return True
        l = np.asarray(l, dtype=float)
        return bool(np.all(l >= np.asarray(self.lo)) and np.all(l <= np.asarray(self.hi)))

    def contains_all(self, L: np.ndarray) -> bool:
        if self.p == 0:
            return True
        L = np.atleast_2d(np.asarray(L, dtype=float))
        return bool(
            np.all(L >= np.asarray(self.lo)[None, :])
            and np.all(L <= np.asarray(self.hi)[None, :])
        )


class Dataset:
    """Immutable column store of observed units.

    Parameters
    ----------
    y, u, delta : array-like, shape (n,)
        Outcome, follow-up time ``min(T, tau)``, and treatment indicator.
    l : array-like, shape (n, p)
        Baseline covariates; ``p`` may be 0.
    tau : float
        Administrative horizon. Validation enforces ``0 <= u <= tau``,
        ``delta == 1  =>  u < tau`` and ``delta == 0  =>  u == tau``
        (up to a relative slack of ``TIME_RTOL`` against ``tau``).
    """

    __slots__ = ("y", "u", "delta", "l", "tau")

    def __init__(self, y, u, delta, l, tau: float) -> None:
        tau = float(tau)
        if not (math.isfinite(tau) and tau > 0):
            raise ConfigError(f"horizon tau must be finite and positive, got {tau}")
        y = np.array(y, dtype=float).reshape(-1)
        u = np.array(u, dtype=float).reshape(-1)
        delta = np.array(delta, dtype=np.int64).reshape(-1)
        l = np.array(l, dtype=float)
        n = y.size
        if l.size == 0:
            l = l.reshape(n, -1) if l.ndim == 2 else np.empty((n, 0))
        elif l.ndim == 1:
            l = l.reshape(n, 1)
        if not (u.size == n and delta.size == n and l.shape[0] == n):
            raise SchemaError(
                f"column lengths disagree: y={n}, u={u.size}, delta={delta.size}, l={l.shape[0]}"
            )

        bad = ~np.isfinite(y)
        if bad.any():
            raise SchemaError(f"unit {int(np.argmax(bad))}: outcome y is not finite")
        bad = ~np.isfinite(l).all(axis=1) if l.shape[1] else np.zeros(n, bool)
        if bad.any():
            raise SchemaError(f"unit {int(np.argmax(bad))}: covariate is not finite")
        bad = ~np.isin(delta, (0, 1))
        if bad.any():
            i = int(np.argmax(bad))
            raise SchemaError(f"unit {i}: delta must be 0 or 1, got {delta[i]}")

        slack = TIME_RTOL * tau
        if not np.isfinite(u).all():
            raise SchemaError(f"unit {int(np.argmax(~np.isfinite(u)))}: u is not finite")
        bad = u < 0
        if bad.any():
            i = int(np.argmax(bad))
            raise SchemaError(f"unit {i}: u={u[i]} is negative")
        bad = u > tau + slack
        if bad.any():
            i = int(np.argmax(bad))
            raise SchemaError(f"unit {i}: u={u[i]} exceeds the horizon tau={tau}")
        # Snap near-horizon times onto tau exactly so the delta checks below
        # and the terminal-atom logic in the influence engine see one value.
        u = np.where(np.abs(u - tau) <= slack, tau, u)
        bad = (delta == 1) & (u >= tau)
        if bad.any():
            i = int(np.argmax(bad))
            raise SchemaError(f"unit {i}: delta=1 requires u < tau, got u={u[i]}")
        bad = (delta == 0) & (u < tau)
        if bad.any():
            i = int(np.argmax(bad))
            raise SchemaError(
                f"unit {i}: delta=0 requires u = tau (no early censoring), got u={u[i]}"
            )

        for arr in (y, u, delta, l):
            arr.setflags(write=False)
        self.y, self.u, self.delta, self.l, self.tau = y, u, delta, l, tau

    # -- basic introspection -------------------------------------------------
    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.l.shape[1]

    def __len__(self) -> int:
        return self.n

    def unit(self, i: int) -> ObservedUnit:
        return ObservedUnit(
            float(self.y[i]), float(self.u[i]), int(self.delta[i]), tuple(self.l[i])
        )

    def units(self) -> list[ObservedUnit]:
        return [self.unit(i) for i in range(self.n)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.u[idx], self.delta[idx], self.l[idx], self.tau)

    def covariate_box(self) -> CovariateBox:
        return CovariateBox.from_data(self.l)

    @staticmethod
    def from_units(units: Iterable[ObservedUnit], tau: float) -> "Dataset":
        units = list(units)
        if not units:
            raise SchemaError("empty dataset")
        p = len(units[0].l)
        if any(len(w.l) != p for w in units):
            raise SchemaError("units have inconsistent covariate lengths")
        return Dataset(
            [w.y for w in units],
            [w.u for w in units],
            [w.delta for w in units],
            np.array([w.l for w in units], dtype=float).reshape(len(units), p),
            tau,
        )


# ---------------------------------------------------------------------------
# hazard shifts
# ---------------------------------------------------------------------------


class HazardShift:
    """A multiplicative intervention ``theta(t, l)`` on the treatment hazard.

    Concrete shifts guarantee ``bounds[0] <= theta(t, l) <= bounds[1]`` with
    ``bounds[0] > 0`` on ``[0, tau] x domain``; construction fails if the
    functional form cannot honor that.
    """

    kind = "abstract"

    def __init__(self, tau: float, bounds: tuple[float, float],
                 domain: CovariateBox | None = None) -> None:
        tau = float(tau)
        if not (math.isfinite(tau) and tau > 0):
            raise ConfigError(f"shift horizon must be positive and finite, got {tau}")
        c_low, c_high = float(bounds[0]), float(bounds[1])
        if not (0.0 < c_low <= c_high and math.isfinite(c_high)):
            raise ConfigError(
                f"shift must be bounded within (0, inf), got bounds ({c_low}, {c_high})"
            )
        self.tau = tau
        self.bounds = (c_low, c_high)
        self.domain = domain

    # Subclasses implement the unchecked kernels.
    def _theta(self, t: np.ndarray, l: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _theta_matrix(self, times: np.ndarray, L: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _theta_at_points(self, t: np.ndarray, L: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_times(self, t: np.ndarray) -> None:
        t = np.asarray(t, dtype=float)
        if t.size and (float(t.min()) < 0.0 or float(t.max()) > self.tau * (1 + TIME_RTOL)):
            raise DomainError(
                f"time outside [0, {self.tau}] passed to {self.kind} shift"
            )

    def _check_covariates(self, L: np.ndarray) -> None:
        if self.domain is not None and not self.domain.contains_all(L):
            raise DomainError(f"covariates outside the declared domain of the {self.kind} shift")

    def __call__(self, t, l) -> np.ndarray | float:
        """theta at time(s) ``t`` for a single covariate vector ``l``."""
        t_arr = np.asarray(t, dtype=float)
        l = np.asarray(l, dtype=float).reshape(-1)
        self._check_times(t_arr)
        self._check_covariates(l[None, :] if l.size else l)
        out = self._theta(t_arr, l)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out

    def matrix(self, times: np.ndarray, L: np.ndarray) -> np.ndarray:
        """theta on the product grid: shape (n, m) for times (m,) and L (n, p)."""
        times = np.asarray(times, dtype=float)
        L = np.atleast_2d(np.asarray(L, dtype=float))
        self._check_times(times)
        self._check_covariates(L)
        return self._theta_matrix(times, L)

    def at_points(self, t: np.ndarray, L: np.ndarray) -> np.ndarray:
        """theta evaluated pairwise: shape (n,) for t (n,) and L (n, p)."""
        t = np.asarray(t, dtype=float)
        L = np.atleast_2d(np.asarray(L, dtype=float))
        self._check_times(t)
        self._check_covariates(L)
        return self._theta_at_points(t, L)

    def constant_value(self) -> float | None:
        """The constant theta if this shift ignores (t, l), else None."""
        return None

    def to_json(self) -> dict:
        raise NotImplementedError


class ConstantShift(HazardShift):
    """theta(t, l) = theta0 for a fixed positive constant."""

    kind = "constant"

    def __init__(self, theta0: float, tau: float,
                 domain: CovariateBox | None = None) -> None:
        theta0 = float(theta0)
        if not (math.isfinite(theta0) and theta0 > 0):
            raise ConfigError(f"constant shift must be positive and finite, got {theta0}")
        super().__init__(tau, (theta0, theta0), domain)
        self.theta0 = theta0

    def _theta(self, t, l):
        return np.full(np.shape(t), self.theta0)

    def _theta_matrix(self, times, L):
        return np.full((L.shape[0], times.size), self.theta0)

    def _theta_at_points(self, t, L):
        return np.full(t.shape, self.theta0)

    def constant_value(self) -> float:
        return self.theta0

    def to_json(self) -> dict:
        return {"kind": "constant", "theta": self.theta0}


class FamilyShift(HazardShift):
    """theta(t, l) = (a*t + b) * exp(beta' l).

    The time factor must stay strictly positive on ``[0, tau]`` (checked at
    construction). When any ``beta`` entry is nonzero a covariate ``domain``
    box is required so the bounds can be certified.
    """

    kind = "family"

    def __init__(self, a: float, b: float, beta, tau: float,
                 domain: CovariateBox | None = None) -> None:
        a, b = float(a), float(b)
        beta = np.asarray(beta, dtype=float).reshape(-1)
        if not (np.isfinite(a) and np.isfinite(b) and np.isfinite(beta).all()):
            raise ConfigError("family shift parameters must be finite")
        f_lo = min(b, a * float(tau) + b)
        f_hi = max(b, a * float(tau) + b)
        if f_lo <= 0:
            raise ConfigError(
                f"family shift (a={a}, b={b}) is not positive on [0, {tau}]: "
                f"min time factor {f_lo} <= 0"
            )
        if beta.size and np.any(beta != 0):
            if domain is None:
                raise ConfigError(
                    "family shift with covariate effects needs a declared covariate domain"
                )
            if domain.p != beta.size:
                raise ConfigError(
                    f"beta has length {beta.size} but the domain has {domain.p} covariates"
                )
            lo = np.asarray(domain.lo)
            hi = np.asarray(domain.hi)
            e_lo = math.exp(float(np.minimum(beta * lo, beta * hi).sum()))
            e_hi = math.exp(float(np.maximum(beta * lo, beta * hi).sum()))
        else:
            e_lo = e_hi = 1.0
        super().__init__(tau, (f_lo * e_lo, f_hi * e_hi), domain)
        self.a, self.b, self.beta = a, b, beta

    def _covariate_factor(self, L: np.ndarray) -> np.ndarray:
        if self.beta.size == 0:
            return np.ones(L.shape[0])
        return np.exp(L @ self.beta)

    def _theta(self, t, l):
        fac = 1.0 if self.beta.size == 0 else math.exp(float(l @ self.beta))
        return (self.a * np.asarray(t, dtype=float) + self.b) * fac

    def _theta_matrix(self, times, L):
        return self._covariate_factor(L)[:, None] * (self.a * times + self.b)[None, :]

    def _theta_at_points(self, t, L):
        return self._covariate_factor(L) * (self.a * t + self.b)

    def constant_value(self) -> float | None:
        if self.a == 0.0 and (self.beta.size == 0 or not np.any(self.beta)):
            return self.b
        return None

    def to_json(self) -> dict:
        return {"kind": "family", "a": self.a, "b": self.b, "beta": list(self.beta)}


class TabulatedShift(HazardShift):
    """Piecewise-constant, covariate-free theta(t): ``values[i]`` applies on
    ``[knots[i], knots[i+1])`` and the last value extends through ``tau``."""

    kind = "tabulated"

    def __init__(self, knots, values, tau: float,
                 domain: CovariateBox | None = None) -> None:
        knots = np.array(knots, dtype=float).reshape(-1)
        values = np.array(values, dtype=float).reshape(-1)
        if knots.size == 0 or knots.size != values.size:
            raise ConfigError("tabulated shift needs equally many knots and values")
        if knots[0] != 0.0 or np.any(np.diff(knots) <= 0) or knots[-1] > float(tau):
            raise ConfigError(
                "tabulated knots must start at 0, increase strictly, and stay within the horizon"
            )
        if not np.isfinite(values).all() or values.min() <= 0:
            raise ConfigError("tabulated shift values must be positive and finite")
        super().__init__(tau, (float(values.min()), float(values.max())), domain)
        self.knots, self.values = knots, values
        self.knots.setflags(write=False)
        self.values.setflags(write=False)

    def _lookup(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return self.values[np.clip(idx, 0, self.values.size - 1)]

    def _theta(self, t, l):
        return self._lookup(np.asarray(t, dtype=float))

    def _theta_matrix(self, times, L):
        return np.broadcast_to(self._lookup(times)[None, :], (L.shape[0], times.size)).copy()

    def _theta_at_points(self, t, L):
        return self._lookup(t)

    def to_json(self) -> dict:
        return {"kind": "tabulated", "times": list(self.knots), "values": list(self.values)}


def evaluate_shift(shift: HazardShift, t: float, l) -> float:
    """theta(t, l) for one time and one covariate vector (domain-checked)."""
    return float(shift(float(t), np.asarray(l, dtype=float).reshape(-1)))


# ---------------------------------------------------------------------------
# step-function cumulative hazards
# ---------------------------------------------------------------------------


class StepCumHazard:
    """Right-continuous nondecreasing step function Λ(t|l) = Σ_{t_j <= t} ΔΛ(t_j|l).

    Per-covariate increments are ``base_increments`` scaled by a positive
    multiplier: ``exp(beta' l)`` when ``beta`` is given, an arbitrary
    ``multiplier_fn(l)`` (returning a scalar or a per-jump vector) otherwise,
    and 1 when neither is set (covariate-free fit). ``cap`` records the
    largest fitted total Λ(tau|l) for diagnostics.
    """

    __slots__ = ("jump_times", "base_increments", "tau", "beta", "multiplier_fn", "cap")

    def __init__(self, jump_times, base_increments, tau: float, *,
                 beta=None, multiplier_fn: Callable | None = None,
                 cap: float | None = None) -> None:
        tau = float(tau)
        t = np.array(jump_times, dtype=float).reshape(-1)
        d = np.array(base_increments, dtype=float).reshape(-1)
        if t.size != d.size:
            raise ConfigError("jump_times and base_increments must have equal length")
        if t.size:
            if not np.isfinite(t).all() or t[0] <= 0 or t[-1] > tau * (1 + TIME_RTOL):
                raise ConfigError(f"jump times must lie in (0, tau={tau}]")
            if np.any(np.diff(t) <= 0):
                raise ConfigError("jump times must be strictly increasing")
        if d.size and (not np.isfinite(d).all() or d.min() < 0):
            raise NumericError("hazard increments must be finite and nonnegative")
        if beta is not None and multiplier_fn is not None:
            raise ConfigError("pass either beta or multiplier_fn, not both")
        self.jump_times = t
        self.base_increments = d
        self.tau = tau
        self.beta = None if beta is None else np.asarray(beta, dtype=float).reshape(-1)
        self.multiplier_fn = multiplier_fn
        self.cap = None if cap is None else float(cap)
        t.setflags(write=False)
        d.setflags(write=False)

    @property
    def m(self) -> int:
        return self.jump_times.size

    def increments(self, l) -> np.ndarray:
        """Per-jump increments ΔΛ(t_j | l), shape (m,)."""
        l = np.asarray(l, dtype=float).reshape(-1)
        if self.beta is not None:
            out = self.base_increments * math.exp(float(l @ self.beta))
        elif self.multiplier_fn is not None:
            out = self.base_increments * np.asarray(self.multiplier_fn(l), dtype=float)
        else:
            out = self.base_increments.copy()
        if out.size and not np.isfinite(out).all():
            raise NumericError("non-finite hazard increment")
        return out

    def increments_matrix(self, L: np.ndarray) -> np.ndarray:
        """Increments for every unit: shape (n, m) for L of shape (n, p)."""
        L = np.atleast_2d(np.asarray(L, dtype=float))
        n = L.shape[0]
        if self.beta is not None:
            out = np.exp(L @ self.beta)[:, None] * self.base_increments[None, :]
        elif self.multiplier_fn is not None:
            try:
                mult = np.asarray(self.multiplier_fn(L), dtype=float)
            except Exception:
                mult = None
            if mult is not None and mult.shape in ((n,), (n, self.m)):
                mult = mult[:, None] if mult.ndim == 1 else mult
                out = mult * self.base_increments[None, :]
            else:
                out = np.empty((n, self.m))
                for i in range(n):
                    out[i] = self.increments(L[i])
        else:
            out = np.broadcast_to(self.base_increments[None, :], (n, self.m)).copy()
        if out.size and not np.isfinite(out).all():
            raise NumericError("non-finite hazard increment")
        return out

    def __call__(self, t: float, l) -> float:
        """Λ(t | l); ``t`` must lie in [0, tau]."""
        t = float(t)
        if t < 0 or t > self.tau * (1 + TIME_RTOL):
            raise DomainError(f"cumulative hazard evaluated at t={t} outside [0, {self.tau}]")
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        if k == 0:
            return 0.0
        return float(np.sum(self.increments(l)[:k]))

    def total(self, l) -> float:
        """Λ(tau | l)."""
        return float(np.sum(self.increments(l)))


def cum_hazard(haz: StepCumHazard, t: float, l) -> float:
    """Λ(t | l) evaluated on the step function (0 at t = 0)."""
    return haz(t, l)


# ---------------------------------------------------------------------------
# outcome models
# ---------------------------------------------------------------------------


@runtime_checkable
class OutcomeModel(Protocol):
    """Fitted conditional-mean model mu(t, l) = E(Y | U = t, L = l)."""

    learner: str

    def predict(self, times: np.ndarray, l: np.ndarray) -> np.ndarray:
        """mu at each time in ``times`` for a single covariate vector."""
        ...


def predict_matrix(model: OutcomeModel, times: np.ndarray, L: np.ndarray) -> np.ndarray:
    """mu on the product grid, shape (n, m); uses the model's own vectorized
    method when it has one, else falls back to a per-unit loop."""
    fast = getattr(model, "predict_matrix", None)
    if fast is not None:
        return np.asarray(fast(times, L), dtype=float)
    L = np.atleast_2d(np.asarray(L, dtype=float))
    out = np.empty((L.shape[0], np.asarray(times).size))
    for i in range(L.shape[0]):
        out[i] = model.predict(times, L[i])
    return out


# ---------------------------------------------------------------------------
# theta grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaGrid:
    """Ordered grid of interventions swept by curve/band routines.

    ``labels`` carries one float per grid point for reporting: the constant
    theta value for constant grids, the family parameter for parametric
    grids, the point's index otherwise.
    """

    shifts: tuple[HazardShift, ...]
    labels: tuple[float, ...]
    kind: str

    def __post_init__(self):
        if len(self.shifts) == 0:
            raise ConfigError("theta grid must be nonempty")
        if len(self.labels) != len(self.shifts):
            raise ConfigError("theta grid labels must match shifts")
        if np.any(np.diff(self.labels) <= 0):
            raise ConfigError("theta grid labels must be strictly increasing")

    def __len__(self) -> int:
        return len(self.shifts)

    def __iter__(self):
        return iter(self.shifts)

    @staticmethod
    def constant(values: Sequence[float], tau: float,
                 domain: CovariateBox | None = None) -> "ThetaGrid":
        values = [float(v) for v in values]
        shifts = tuple(ConstantShift(v, tau, domain) for v in values)
        return ThetaGrid(shifts, tuple(values), "constant")

    @staticmethod
    def family(a: float, b: float, betas: Sequence[float], tau: float,
               domain: CovariateBox) -> "ThetaGrid":
        """One-covariate family grid indexed by the covariate coefficient."""
        betas = [float(g) for g in betas]
        shifts = tuple(FamilyShift(a, b, [g], tau, domain) for g in betas)
        return ThetaGrid(shifts, tuple(betas), "family")

    @staticmethod
    def from_shifts(shifts: Sequence[HazardShift],
                    labels: Sequence[float] | None = None) -> "ThetaGrid":
        shifts = tuple(shifts)
        if labels is None:
            constants = [s.constant_value() for s in shifts]
            if all(c is not None for c in constants):
                labels = tuple(float(c) for c in constants)
            else:
                labels = tuple(float(i) for i in range(len(shifts)))
        return ThetaGrid(shifts, tuple(float(x) for x in labels), "custom")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def read_csv(path, tau: float) -> Dataset:
    """Load a dataset from CSV with header ``y,u,delta,l1..lp`` (p >= 0).

    Rows violating the observed-data contract are rejected with the 1-based
    file line in the message; ``u`` values within ``TIME_RTOL`` of ``tau``
    are snapped onto the horizon.
    """
    tau = float(tau)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        expected = ["y", "u", "delta"] + [f"l{j}" for j in range(1, len(header) - 2)]
        if len(header) < 3 or header != expected[: len(header)] or len(header) != len(expected):
            raise SchemaError(
                f"{path}: header must be y,u,delta,l1..lp — got {','.join(header)}"
            )
        p = len(header) - 3
        ys, us, ds, ls = [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                y = float(row[0])
                u = float(row[1])
                dval = float(row[2])
                l = [float(x) for x in row[3:]]
            except ValueError as exc:
                raise SchemaError(f"{path}: line {line_no}: {exc}") from None
            if dval not in (0.0, 1.0):
                raise SchemaError(f"{path}: line {line_no}: delta must be 0 or 1, got {row[2]}")
            delta = int(dval)
            slack = TIME_RTOL * tau
            if not math.isfinite(u) or u < 0:
                raise SchemaError(f"{path}: line {line_no}: invalid follow-up time u={row[1]}")
            if u > tau + slack:
                raise SchemaError(
                    f"{path}: line {line_no}: u={u} exceeds the horizon tau={tau}"
                )
            if abs(u - tau) <= slack:
                u = tau
            if delta == 1 and u >= tau:
                raise SchemaError(
                    f"{path}: line {line_no}: delta=1 requires u < tau, got u={u}"
                )
            if delta == 0 and u < tau:
                raise SchemaError(
                    f"{path}: line {line_no}: delta=0 requires u = tau, got u={u}"
                )
            ys.append(y)
            us.append(u)
            ds.append(delta)
            ls.append(l)
    if not ys:
        raise SchemaError(f"{path}: no data rows")
    l_arr = np.asarray(ls, dtype=float).reshape(len(ys), p)
    return Dataset(ys, us, ds, l_arr, tau)


def write_csv(ds: Dataset, path) -> None:
    """Write a dataset in the ``y,u,delta,l1..lp`` layout read_csv expects."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "u", "delta"] + [f"l{j + 1}" for j in range(ds.p)])
        for i in range(ds.n):
            writer.writerow(
                [repr(float(ds.y[i])), repr(float(ds.u[i])), int(ds.delta[i])]
                + [repr(float(v)) for v in ds.l[i]]
            )


_SHIFT_KEYS = {
    "constant": {"kind", "theta"},
    "family": {"kind", "a", "b", "beta"},
    "tabulated": {"kind", "times", "values"},
}


def parse_shift(obj: dict, tau: float, domain: CovariateBox | None = None) -> HazardShift:
    """Build a HazardShift from its JSON object form.

    Accepted forms: ``{"kind":"constant","theta":0.8}``,
    ``{"kind":"family","a":0.3,"b":0.1,"beta":[0.6]}``, and
    ``{"kind":"tabulated","times":[...],"values":[...]}``.
    """
    if not isinstance(obj, dict):
        raise ConfigError(f"shift spec must be a JSON object, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind not in _SHIFT_KEYS:
        raise ConfigError(f"unknown shift kind {kind!r}; expected one of {sorted(_SHIFT_KEYS)}")
    extra = set(obj) - _SHIFT_KEYS[kind]
    missing = _SHIFT_KEYS[kind] - set(obj)
    if extra or missing:
        raise ConfigError(
            f"shift spec for kind={kind!r} has unknown keys {sorted(extra)} "
            f"and missing keys {sorted(missing)}"
        )
    if kind == "constant":
        return ConstantShift(obj["theta"], tau, domain)
    if kind == "family":
        return FamilyShift(obj["a"], obj["b"], obj["beta"], tau, domain)
    return TabulatedShift(obj["times"], obj["values"], tau, domain)


def load_shifts(path, tau: float, domain: CovariateBox | None = None) -> list[HazardShift]:
    """Load one shift object or a JSON array of them from a file."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    objs = payload if isinstance(payload, list) else [payload]
    if not objs:
        raise ConfigError(f"{path}: empty shift list")
    return [parse_shift(o, tau, domain) for o in objs]
