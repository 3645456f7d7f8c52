"""Discrete phase-type (DPH) distributions.

A DPH(alpha, T) is the number of steps an absorbing Markov chain with
transient transition block ``T`` spends before absorption when started from
``alpha``. Support is {1, 2, ...}.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError, ValidationError

TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscretePhaseType:
    """Validated DPH parameters. Build with :func:`dph_validate`."""

    alpha: np.ndarray
    T: np.ndarray

    @property
    def order(self):
        return self.alpha.shape[0]

    @property
    def exit(self):
        return dph_exit_vector(self)

    def pmf(self, n):
        return dph_pmf(self, n)

    def cdf(self, n):
        return dph_cdf(self, n)

    def mean(self):
        return dph_mean(self)

    def sample(self, rng):
        return dph_sample(self, rng)

    def __repr__(self):
        return f"DiscretePhaseType(alpha={self.alpha.tolist()}, T={self.T.tolist()})"


def _reachable(alpha, T):
    """Phases reachable from the support of ``alpha``."""
    seen = set(np.flatnonzero(alpha > 0).tolist())
    frontier = list(seen)
    while frontier:
        f = frontier.pop()
        for k in np.flatnonzero(T[f] > 0).tolist():
            if k not in seen:
                seen.add(k)
                frontier.append(k)
    return np.array(sorted(seen), dtype=int)


def _absorbing(T, exit_, phases):
    """True if absorption is reachable from every phase in ``phases``."""
    good = set(np.flatnonzero(exit_ > TOL).tolist())
    changed = True
    while changed:
        changed = False
        for f in phases:
            if f not in good and any(k in good for k in np.flatnonzero(T[f] > 0)):
                good.add(int(f))
                changed = True
    return all(int(f) in good for f in phases)


def _rounding_slack(n):
    return 4 * n * np.finfo(float).eps


def unit_sum(v):
    """Rescale ``v`` to sum 1 unless it already does up to rounding.

    Leaving near-unit sums untouched makes validation idempotent, so stored
    parameters reload bit for bit.
    """
    s = v.sum()
    if abs(s - 1.0) <= _rounding_slack(v.size):
        return v
    return v / s


def dph_validate(alpha, T):
    """Check and normalize DPH parameters.

    Entries within 1e-12 of a constraint are snapped onto it (negative
    rounding noise is zeroed, ``alpha`` is rescaled to sum 1, over-full rows
    of ``T`` are rescaled to sum 1). Anything further out is rejected.

    Phases that carry no initial mass and cannot be reached from the initial
    support are allowed; a warning is emitted since EM can produce them.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if alpha.ndim != 1 or alpha.size == 0:
        raise ValidationError("must be a non-empty vector", "alpha")
    F = alpha.size
    if T.shape != (F, F):
        raise ValidationError(f"shape {T.shape} does not match alpha length {F}", "T")
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(T))):
        raise ValidationError("non-finite entry", "alpha/T")

    for name, arr in (("alpha", alpha), ("T", T)):
        bad = np.argwhere(arr < -TOL)
        if bad.size:
            raise ValidationError("negative entry", f"{name}{bad[0].tolist()}")
    alpha = np.clip(alpha, 0.0, None)
    T = np.clip(T, 0.0, None)

    s = alpha.sum()
    if abs(s - 1.0) > TOL:
        raise ValidationError(f"entries sum to {s!r}, not 1", "alpha")
    alpha = unit_sum(alpha)

    rows = T.sum(axis=1)
    over = np.flatnonzero(rows > 1.0 + TOL)
    if over.size:
        r = over[0]
        raise ValidationError(f"row sum {rows[r]:.12g} > 1", f"T[{r}]")
    fix = rows > 1.0 + _rounding_slack(F)
    if fix.any():
        T[fix] /= rows[fix, None]

    exit_ = np.clip(1.0 - T.sum(axis=1), 0.0, 1.0)
    live = _reachable(alpha, T)
    if not _absorbing(T, exit_, live):
        raise ValidationError("absorption is not certain (I - T is singular)", "T")
    dead = sorted(set(range(F)) - set(live.tolist()))
    if dead and any(exit_[f] <= TOL for f in dead):
        warnings.warn(f"DPH phases {dead} are unreachable from alpha", stacklevel=2)
    return DiscretePhaseType(_frozen(alpha), _frozen(T))


def dph_exit_vector(d):
    """Absorption probabilities ``(I - T) e``."""
    return np.clip(1.0 - d.T.sum(axis=1), 0.0, 1.0)


def dph_pmf(d, n):
    """P(tau = n) = alpha T^(n-1) T0, for n >= 1."""
    n = int(n)
    if n < 1:
        raise ValueError(f"DPH support starts at 1, got n={n}")
    v = d.alpha
    for _ in range(n - 1):
        v = v @ d.T
    return float(v @ dph_exit_vector(d))


def dph_pmf_table(d, n_max):
    """Array ``p`` of length ``n_max`` with ``p[n-1] = P(tau = n)``."""
    out = np.empty(int(n_max))
    v = d.alpha
    t0 = dph_exit_vector(d)
    for k in range(out.size):
        out[k] = v @ t0
        v = v @ d.T
    return out


def dph_cdf(d, n):
    """P(tau <= n) = 1 - alpha T^n e."""
    n = int(n)
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    v = d.alpha
    for _ in range(n):
        v = v @ d.T
    return float(min(1.0, max(0.0, 1.0 - v.sum())))


def dph_mean(d):
    """Mean sojourn ``alpha (I - T)^-1 e`` over the reachable phases."""
    live = _reachable(d.alpha, d.T)
    Tl = d.T[np.ix_(live, live)]
    try:
        x = np.linalg.solve(np.eye(live.size) - Tl, np.ones(live.size))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("I - T is numerically singular") from exc
    m = float(d.alpha[live] @ x)
    if not np.isfinite(m) or m < 1.0 - 1e-9:
        raise NumericalError(f"DPH mean is not finite/positive: {m}")
    return m


def _phase_sampler(d):
    """Cumulative jump table: row f holds cumsum of (T[f, :], exit[f])."""
    table = np.hstack([d.T, dph_exit_vector(d)[:, None]])
    cum = np.cumsum(table, axis=1)
    cum[:, -1] = 1.0
    return cum, np.cumsum(d.alpha)


def sample_phase_path(d, rng, start_phase=None, _tables=None):
    """Phases visited before absorption; its length is the sojourn time.

    With ``start_phase`` the chain is started there instead of from alpha
    (used to continue a sojourn that is already under way).
    """
    cum, acum = _tables if _tables is not None else _phase_sampler(d)
    F = d.order
    if start_phase is None:
        f = int(np.searchsorted(acum, rng.random() * acum[-1], side="right"))
        f = min(f, F - 1)
    else:
        f = int(start_phase)
    path = [f]
    while True:
        k = int(np.searchsorted(cum[f], rng.random(), side="right"))
        if k >= F:
            return path
        f = k
        path.append(f)


def dph_sample(d, rng):
    """Draw one sojourn time by running the absorbing phase chain."""
    return len(sample_phase_path(d, rng))
