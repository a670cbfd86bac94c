"""Per-unit identification weights and influence values.

The fitted hazard is a step function, so every integral below is an exact
finite sum. The survival curve under the shifted hazard,
``exp(-sum_{t_j <= t} theta_j * dLam_j)``, induces a probability measure on
``(0, tau]`` whose atoms are the survival drops across each hazard jump plus
a terminal atom at the horizon carrying whatever mass is left; the terminal
atom is ordered after any jump located exactly at the horizon. Influence
values are assembled from three pieces::

    term1 = y * weight(u, delta, l)
    term2 = sum over atoms  mu(atom) * G(min(u, atom-)) * (signed atom mass)
    term3 = (theta(u,l) - 1) * exp(Lam(u|l)) * sum over atoms after u of
            mu(atom) * (signed atom mass)
    phi   = term1 - term2 + term3

where ``G`` is the running integral of (theta - 1) against d(exp(Lam)): an
atom's own jump never enters its inner integral. Two independent code paths
compute phi — the general form above and a constant-shift simplification —
and must agree to float precision.
"""

from __future__ import annotations

import math

import numpy as np

from .core import (
    Dataset,
    FamilyShift,
    HazardShift,
    ObservedUnit,
    OutcomeModel,
    StepCumHazard,
    predict_matrix,
)
from .errors import NumericError

__all__ = [
    "ipw_weight",
    "ipw_weights",
    "survival_under_shift",
    "inner_g",
    "eif_value",
    "eif_value_constant",
    "eif_values",
    "eif_terms",
    "phi_matrix",
]

# Unit-chunk sizing for the vectorized engine: keeps per-array footprints
# around 32 MB so sweeps over large grids stay RAM-friendly.
_CHUNK_ELEMENTS = 4_000_000


def _unit_tables(Lam: StepCumHazard, l) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = Lam.jump_times
    dA = Lam.increments(l)
    return t, dA, np.cumsum(dA)


def ipw_weight(unit: ObservedUnit, shift: HazardShift, Lam: StepCumHazard) -> float:
    """theta(u,l)^delta * exp(-sum_{t_j <= u} (theta(t_j,l) - 1) dLam(t_j|l)).

    Strictly positive and finite for any bounded shift and finite hazard;
    equal to 1 when theta is identically 1.
    """
    l = np.asarray(unit.l, dtype=float).reshape(-1)
    t, dA, _ = _unit_tables(Lam, l)
    ju = int(np.searchsorted(t, unit.u, side="right"))
    theta_j = np.asarray(shift(t[:ju], l), dtype=float) if ju else np.empty(0)
    expo = float(np.sum((theta_j - 1.0) * dA[:ju]))
    theta_u = float(shift(unit.u, l))
    w = theta_u**unit.delta * math.exp(-expo)
    if not math.isfinite(w):
        raise NumericError(f"ipw weight is not finite (exponent {-expo})")
    return w


def _weight_exponents(ds: Dataset, shift: HazardShift, Lam: StepCumHazard) -> np.ndarray:
    """Vector of sum_{t_j <= u_i} (theta(t_j, l_i) - 1) dLam(t_j | l_i).

    Fast path: a hazard whose covariate effect is a per-unit scalar combined
    with a constant or family shift needs only two shared prefix sums over
    the jump times and one gather per unit.
    """
    t = Lam.jump_times
    m = t.size
    if m == 0:
        return np.zeros(ds.n)
    ju = np.searchsorted(t, ds.u, side="right")

    scalar_mult = None
    if Lam.beta is not None:
        scalar_mult = np.exp(ds.l @ Lam.beta)
    elif Lam.multiplier_fn is None:
        scalar_mult = np.ones(ds.n)

    theta0 = shift.constant_value()
    if scalar_mult is not None and (theta0 is not None or isinstance(shift, FamilyShift)):
        cum0 = np.concatenate([[0.0], np.cumsum(Lam.base_increments)])
        if theta0 is not None:
            shifted = theta0 * cum0[ju]
        else:
            cumt = np.concatenate([[0.0], np.cumsum(t * Lam.base_increments)])
            fam = np.exp(ds.l @ shift.beta) if shift.beta.size else np.ones(ds.n)
            shifted = fam * (shift.a * cumt[ju] + shift.b * cum0[ju])
        return scalar_mult * (shifted - cum0[ju])

    expo = np.empty(ds.n)
    chunk = max(1, _CHUNK_ELEMENTS // m)
    for lo in range(0, ds.n, chunk):
        hi = min(lo + chunk, ds.n)
        dA = Lam.increments_matrix(ds.l[lo:hi])
        th = shift.matrix(t, ds.l[lo:hi])
        cum = np.concatenate(
            [np.zeros((hi - lo, 1)), np.cumsum((th - 1.0) * dA, axis=1)], axis=1
        )
        expo[lo:hi] = np.take_along_axis(cum, ju[lo:hi, None], axis=1)[:, 0]
    return expo


def ipw_weights(ds: Dataset, shift: HazardShift, Lam: StepCumHazard) -> np.ndarray:
    """Vectorized identification weights for a whole dataset."""
    theta_u = shift.at_points(ds.u, ds.l)
    w = theta_u**ds.delta * np.exp(-_weight_exponents(ds, shift, Lam))
    if not np.isfinite(w).all():
        raise NumericError(
            f"ipw weight not finite for unit {int(np.argmax(~np.isfinite(w)))}"
        )
    return w


def survival_under_shift(u: float, l, shift: HazardShift, Lam: StepCumHazard) -> float:
    """exp(-sum_{t_j <= u} theta(t_j,l) dLam(t_j|l)): 1 at u=0, nonincreasing."""
    l = np.asarray(l, dtype=float).reshape(-1)
    t, dA, _ = _unit_tables(Lam, l)
    k = int(np.searchsorted(t, float(u), side="right"))
    theta_j = np.asarray(shift(t[:k], l), dtype=float) if k else np.empty(0)
    return math.exp(-float(np.sum(theta_j * dA[:k])))


def inner_g(u_cap: float, l, shift: HazardShift, Lam: StepCumHazard) -> float:
    """sum_{t_j <= u_cap} (theta(t_j,l) - 1) * (exp(Lam(t_j|l)) - exp(Lam(t_{j-1}|l)))."""
    l = np.asarray(l, dtype=float).reshape(-1)
    t, dA, Lcum = _unit_tables(Lam, l)
    k = int(np.searchsorted(t, float(u_cap), side="right"))
    if k == 0:
        return 0.0
    theta_j = np.asarray(shift(t[:k], l), dtype=float)
    eL = np.exp(Lcum[:k])
    eL_prev = np.concatenate([[1.0], eL[:-1]])
    return float(np.sum((theta_j - 1.0) * (eL - eL_prev)))


def _scalar_terms(unit: ObservedUnit, shift: HazardShift, Lam: StepCumHazard,
                  mu: OutcomeModel) -> tuple[float, float, float]:
    l = np.asarray(unit.l, dtype=float).reshape(-1)
    tau = Lam.tau
    t, dA, Lcum = _unit_tables(Lam, l)
    m = t.size
    ju = int(np.searchsorted(t, unit.u, side="right"))
    theta_j = np.asarray(shift(t, l), dtype=float) if m else np.empty(0)
    theta_u = float(shift(unit.u, l))
    at_tau = unit.u == tau

    w = theta_u**unit.delta * math.exp(-float(np.sum((theta_j[:ju] - 1.0) * dA[:ju])))
    term1 = unit.y * w

    # Atoms of the shifted-survival measure: drops across jumps + terminal mass.
    A = np.exp(-np.cumsum(theta_j * dA))
    A_prev = np.concatenate([[1.0], A[:-1]])
    B = A_prev - A
    B_term = float(A[-1]) if m else 1.0

    eL = np.exp(Lcum)
    eL_prev = np.concatenate([[1.0], eL[:-1]])
    P = np.concatenate([[0.0], np.cumsum((theta_j - 1.0) * (eL - eL_prev))])

    mu_j = np.asarray(mu.predict(t, l), dtype=float) if m else np.empty(0)
    mu_tau = float(np.asarray(mu.predict(np.array([tau]), l), dtype=float)[0])

    # Inner-integral caps: left limit P_{j-1} for atoms at or before u, the
    # value at u for later atoms; the terminal atom sits after every jump, so
    # at u = tau its cap includes them all.
    caps = np.where(np.arange(m) < ju, P[:m], P[ju])
    term2 = float(np.sum(mu_j * caps * (-B)))
    term2 += mu_tau * (P[m] if at_tau else P[ju]) * (-B_term)

    eLam_u = float(eL[ju - 1]) if ju else 1.0
    after = float(np.sum(mu_j[ju:] * (-B[ju:])))
    if not at_tau:
        after += mu_tau * (-B_term)
    term3 = (theta_u - 1.0) * eLam_u * after
    return term1, term2, term3


def eif_value(unit: ObservedUnit, shift: HazardShift, Lam: StepCumHazard,
              mu: OutcomeModel) -> float:
    """Influence value for one unit under the general (t, l)-varying shift.

    Reference scalar implementation of term1 - term2 + term3; the vectorized
    :func:`phi_matrix` must reproduce it on every unit.
    """
    term1, term2, term3 = _scalar_terms(unit, shift, Lam, mu)
    phi = term1 - term2 + term3
    if not math.isfinite(phi):
        raise NumericError(
            f"influence value not finite (term1={term1}, term2={term2}, term3={term3})"
        )
    return phi


def eif_value_constant(unit: ObservedUnit, theta: float, Lam: StepCumHazard,
                       mu: OutcomeModel) -> float:
    """Influence value for a constant shift, via the simplified form.

    Independent of :func:`eif_value`: the augmentation is written as two
    integrals against the treatment-time distribution,

        (theta-1) * int_0^u  mu * exp(Lam-) d(shifted mass)
      - (theta-1) * int_0^tau mu           d(shifted mass),

    where the shifted mass assigns exp(-theta*Lam(t_{j-1})) -
    exp(-theta*Lam(t_j)) to each jump and exp(-theta*Lam(tau)) to the
    horizon, and exp(Lam-) is the left limit (the full exp(Lam(tau)) at the
    horizon atom, which sits after every jump). At theta = 1 the mass
    reduces exactly to the fitted treatment-time distribution.
    """
    theta = float(theta)
    l = np.asarray(unit.l, dtype=float).reshape(-1)
    tau = Lam.tau
    t, dA, Lcum = _unit_tables(Lam, l)
    m = t.size
    ju = int(np.searchsorted(t, unit.u, side="right"))
    at_tau = unit.u == tau
    Lam_u = float(Lcum[ju - 1]) if ju else 0.0

    w = theta**unit.delta * math.exp(-(theta - 1.0) * Lam_u)

    E = np.exp(-theta * Lcum)
    E_prev = np.concatenate([[1.0], E[:-1]])
    B = E_prev - E
    B_term = float(E[-1]) if m else 1.0
    eL_prev = np.exp(np.concatenate([[0.0], Lcum[:-1]]))
    eL_end = math.exp(float(Lcum[-1])) if m else 1.0

    mu_j = np.asarray(mu.predict(t, l), dtype=float) if m else np.empty(0)
    mu_tau = float(np.asarray(mu.predict(np.array([tau]), l), dtype=float)[0])

    middle = float(np.sum(mu_j[:ju] * eL_prev[:ju] * B[:ju]))
    if at_tau:
        middle += mu_tau * eL_end * B_term
    last = float(np.sum(mu_j * B)) + mu_tau * B_term

    phi = unit.y * w + (theta - 1.0) * (middle - last)
    if not math.isfinite(phi):
        raise NumericError(f"influence value not finite (weight {w})")
    return phi


def phi_matrix(ds: Dataset, shifts, Lam: StepCumHazard, mu: OutcomeModel,
               chunk: int | None = None) -> np.ndarray:
    """Influence values for every unit under every shift: shape (n, G).

    The hazard tables (increments, cumulative hazard, its exponential) and
    the outcome predictions at the jump times are shared across the whole
    shift grid; per-shift work is one pass of prefix sums. Units are
    processed in chunks to bound memory on large n * m problems.
    """
    if isinstance(shifts, HazardShift):
        shifts = [shifts]
    shifts = list(shifts)
    t = Lam.jump_times
    m = t.size
    tau = Lam.tau
    n = ds.n
    out = np.empty((n, len(shifts)))
    if chunk is None:
        chunk = max(1, _CHUNK_ELEMENTS // max(m, 1))

    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        L = ds.l[lo:hi]
        u = ds.u[lo:hi]
        y = ds.y[lo:hi]
        delta = ds.delta[lo:hi]
        c = hi - lo
        at_tau = u == tau
        ju = np.searchsorted(t, u, side="right")
        rows = np.arange(c)

        dA = Lam.increments_matrix(L)
        Lcum = np.cumsum(dA, axis=1)
        eL = np.exp(Lcum)
        eL_prev = np.concatenate([np.ones((c, 1)), eL[:, :-1]], axis=1)
        dEL = eL - eL_prev
        eLam_u = np.concatenate([np.ones((c, 1)), eL], axis=1)[rows, ju]
        mu_j = predict_matrix(mu, t, L) if m else np.empty((c, 0))
        mu_tau = predict_matrix(mu, np.array([tau]), L)[:, 0]
        before = np.arange(m)[None, :] < ju[:, None]

        for g, shift in enumerate(shifts):
            th = shift.matrix(t, L) if m else np.empty((c, 0))
            th_u = shift.at_points(u, L)

            Cpad = np.concatenate(
                [np.zeros((c, 1)), np.cumsum((th - 1.0) * dA, axis=1)], axis=1
            )
            w = th_u**delta * np.exp(-Cpad[rows, ju])

            A = np.exp(-np.cumsum(th * dA, axis=1))
            A_prev = np.concatenate([np.ones((c, 1)), A[:, :-1]], axis=1)
            B = A_prev - A
            B_term = A[:, -1] if m else np.ones(c)

            Ppad = np.concatenate(
                [np.zeros((c, 1)), np.cumsum((th - 1.0) * dEL, axis=1)], axis=1
            )
            P_at_u = Ppad[rows, ju]
            caps = np.where(before, Ppad[:, :m], P_at_u[:, None])
            muB = mu_j * (-B)
            term2 = np.sum(caps * muB, axis=1)
            term2 += mu_tau * np.where(at_tau, Ppad[:, m], P_at_u) * (-B_term)

            after = np.sum(np.where(before, 0.0, muB), axis=1)
            after += np.where(at_tau, 0.0, mu_tau * (-B_term))
            term3 = (th_u - 1.0) * eLam_u * after

            phi = y * w - term2 + term3
            if not np.isfinite(phi).all():
                i = int(np.argmax(~np.isfinite(phi)))
                raise NumericError(
                    f"influence value not finite for unit {lo + i} "
                    f"(term1={y[i] * w[i]}, term2={term2[i]}, term3={term3[i]})"
                )
            out[lo:hi, g] = phi
    return out


def eif_values(ds: Dataset, shift: HazardShift, Lam: StepCumHazard,
               mu: OutcomeModel) -> np.ndarray:
    """Influence values for one shift, shape (n,)."""
    return phi_matrix(ds, [shift], Lam, mu)[:, 0]


def eif_terms(ds: Dataset, shift: HazardShift, Lam: StepCumHazard,
              mu: OutcomeModel) -> dict[str, np.ndarray]:
    """Per-unit diagnostic decomposition (term1, term2, term3, phi)."""
    rows = [_scalar_terms(unit, shift, Lam, mu) for unit in ds.units()]
    arr = np.asarray(rows, dtype=float)
    return {
        "term1": arr[:, 0],
        "term2": arr[:, 1],
        "term3": arr[:, 2],
        "phi": arr[:, 0] - arr[:, 1] + arr[:, 2],
    }
