"""The PH-HMM parameter set: regimes, initial law, jump chain, sojourns, emissions."""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .dph import TOL, DiscretePhaseType, dph_pmf, dph_validate, unit_sum
from .exceptions import ValidationError

# ---------------------------------------------------------------------------
# Emission laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Degenerate:
    """Point mass at ``value``."""

    value: float = 0.0
    family = "degenerate"
    kind = "count"
    n_params = 0

    def pdf(self, y):
        return (np.asarray(y, dtype=float) == self.value).astype(float)

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.value).astype(float)

    def mean(self):
        return float(self.value)

    def sample(self, rng, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class Categorical:
    """Finite alphabet with probabilities ``probs``."""

    alphabet: tuple
    probs: tuple
    family = "categorical"
    kind = "categorical"

    def __post_init__(self):
        alphabet = tuple(float(a) for a in self.alphabet)
        p = np.asarray(self.probs, dtype=float)
        if len(alphabet) == 0 or len(set(alphabet)) != len(alphabet):
            raise ValidationError("alphabet must be non-empty with distinct symbols", "alphabet")
        if p.shape != (len(alphabet),):
            raise ValidationError("length differs from alphabet", "probs")
        if np.any(p < -TOL) or abs(p.sum() - 1.0) > TOL:
            raise ValidationError(f"not a probability vector (sum {p.sum()!r})", "probs")
        p = np.clip(p, 0.0, None)
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "probs", tuple(unit_sum(p).tolist()))

    @property
    def n_params(self):
        return len(self.alphabet) - 1

    def index(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lookup = {a: k for k, a in enumerate(self.alphabet)}
        try:
            return np.array([lookup[float(v)] for v in y], dtype=int)
        except KeyError as exc:
            raise ValidationError(f"signal {exc.args[0]!r} not in alphabet", "y") from None

    def pdf(self, y):
        """Mass of each symbol; values outside the alphabet have mass 0."""
        scalar = np.ndim(y) == 0
        yv = np.atleast_1d(np.asarray(y, dtype=float))
        lookup = dict(zip(self.alphabet, self.probs))
        out = np.array([lookup.get(float(v), 0.0) for v in yv.ravel()]).reshape(yv.shape)
        return out[0] if scalar else out

    def cdf(self, x):
        a = np.asarray(self.alphabet)
        p = np.asarray(self.probs)
        x = np.asarray(x, dtype=float)
        return (p[None, :] * (a[None, :] <= x.reshape(-1, 1))).sum(axis=1).reshape(x.shape)

    def mean(self):
        return float(np.dot(self.alphabet, self.probs))

    def sample(self, rng, size=None):
        k = rng.choice(len(self.alphabet), size=size, p=self.probs)
        return np.asarray(self.alphabet)[k] if size is not None else float(self.alphabet[k])


@dataclass(frozen=True)
class Poisson:
    lam: float
    family = "poisson"
    kind = "count"
    n_params = 1

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValidationError(f"must be > 0, got {self.lam!r}", "lambda")
        object.__setattr__(self, "lam", float(self.lam))

    def pdf(self, y):
        return stats.poisson.pmf(y, self.lam)

    def cdf(self, x):
        return stats.poisson.cdf(x, self.lam)

    def mean(self):
        return self.lam

    def sample(self, rng, size=None):
        v = rng.poisson(self.lam, size=size)
        return v.astype(float) if size is not None else float(v)


@dataclass(frozen=True)
class ExponentialDensity:
    """Exponential inflow density, ``rate`` in 1/hm3."""

    rate: float
    family = "exponential"
    kind = "density"
    n_params = 1

    def __post_init__(self):
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise ValidationError(f"must be > 0, got {self.rate!r}", "rate")
        object.__setattr__(self, "rate", float(self.rate))

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        return np.where(y >= 0, self.rate * np.exp(-self.rate * np.clip(y, 0, None)), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, -np.expm1(-self.rate * np.clip(x, 0, None)), 0.0)

    def mean(self):
        return 1.0 / self.rate

    def sample(self, rng, size=None):
        v = rng.exponential(1.0 / self.rate, size=size)
        return v if size is not None else float(v)


EmissionLaw = Degenerate | Categorical | Poisson | ExponentialDensity
FAMILIES = {"degenerate": Degenerate, "categorical": Categorical,
            "poisson": Poisson, "exponential": ExponentialDensity}


def signal_domain(law):
    """Hashable signal-domain key; laws in one model must agree on it."""
    if law.kind == "categorical":
        return ("categorical", tuple(law.alphabet))
    return (law.kind,)


def emission_eval(law, y):
    """Mass (discrete laws) or Lebesgue density (exponential) of ``y``."""
    v = law.pdf(y)
    return float(v) if np.ndim(y) == 0 else np.asarray(v, dtype=float)


def emission_sample(law, rng):
    return law.sample(rng)


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhTypeHmm:
    """Hidden phase-type Markov model.

    Construction validates every invariant; use :func:`model_validate` to
    build from raw arrays.
    """

    beta: np.ndarray
    jump: np.ndarray
    sojourn: tuple
    emission: tuple
    labels: tuple = field(default=None)

    def __post_init__(self):
        _check_model(self)

    @property
    def n_regimes(self):
        return len(self.sojourn)

    @property
    def phase_layout(self):
        return tuple(s.order for s in self.sojourn)

    def regime_index(self, i):
        if isinstance(i, (int, np.integer)) and not isinstance(i, bool):
            if 0 <= i < self.n_regimes:
                return int(i)
        elif i in self.labels:
            return self.labels.index(i)
        raise KeyError(f"unknown regime {i!r}")

    def __repr__(self):
        return (f"PhTypeHmm(labels={self.labels}, beta={self.beta.tolist()}, "
                f"jump={self.jump.tolist()}, sojourn={list(self.sojourn)}, "
                f"emission={list(self.emission)})")


def _check_model(m):
    d = len(m.sojourn)
    if d < 1:
        raise ValidationError("at least one regime is required", "sojourn")
    if len(m.emission) != d:
        raise ValidationError(f"{len(m.emission)} laws for {d} regimes", "emission")
    labels = m.labels if m.labels is not None else tuple(str(i + 1) for i in range(d))
    labels = tuple(str(x) for x in labels)
    if len(labels) != d or len(set(labels)) != d:
        raise ValidationError("need one distinct label per regime", "labels")
    object.__setattr__(m, "labels", labels)
    object.__setattr__(m, "sojourn", tuple(m.sojourn))
    object.__setattr__(m, "emission", tuple(m.emission))
    for k, s in enumerate(m.sojourn):
        if not isinstance(s, DiscretePhaseType):
            raise ValidationError("not a validated DiscretePhaseType", f"sojourn[{k}]")
    for k, law in enumerate(m.emission):
        if not isinstance(law, (Degenerate, Categorical, Poisson, ExponentialDensity)):
            raise ValidationError(f"unsupported emission law {law!r}", f"emission[{k}]")

    beta = np.atleast_1d(np.asarray(m.beta, dtype=float))
    if beta.shape != (d,):
        raise ValidationError(f"length {beta.size} != {d}", "beta")
    if np.any(beta < -TOL) or abs(beta.sum() - 1.0) > TOL:
        raise ValidationError(f"not a probability vector (sum {beta.sum()!r})", "beta")
    beta = np.clip(beta, 0.0, None)
    beta = unit_sum(beta)

    jump = np.asarray(m.jump, dtype=float)
    if d == 1:
        if jump.size not in (0, 1) or (jump.size == 1 and jump.ravel()[0] != 0):
            raise ValidationError("single-regime model takes an empty or [[0]] jump matrix", "jump")
        jump = np.zeros((1, 1))
    else:
        if jump.shape != (d, d):
            raise ValidationError(f"shape {jump.shape} != ({d}, {d})", "jump")
        for i in range(d):
            if jump[i, i] != 0:
                raise ValidationError(f"diagonal must be 0, got {jump[i, i]!r}", f"jump[{i}][{i}]")
        bad = np.argwhere(jump < -TOL)
        if bad.size:
            i, j = bad[0]
            raise ValidationError("negative entry", f"jump[{i}][{j}]")
        jump = np.clip(jump, 0.0, None)
        rows = jump.sum(axis=1)
        for i in range(d):
            if abs(rows[i] - 1.0) > TOL:
                raise ValidationError(f"row sums to {rows[i]!r}, not 1", f"jump[{i}]")
        jump = np.array([unit_sum(r) for r in jump])

    domains = {signal_domain(law) for law in m.emission}
    if len(domains) > 1:
        raise ValidationError(f"emission laws mix signal domains {sorted(domains)}", "emission")

    beta.setflags(write=False)
    jump.setflags(write=False)
    object.__setattr__(m, "beta", beta)
    object.__setattr__(m, "jump", jump)


def model_validate(beta, jump, sojourn, emission, labels=None):
    """Build a validated :class:`PhTypeHmm`.

    ``sojourn`` entries may be :class:`DiscretePhaseType` values or
    ``(alpha, T)`` pairs.
    """
    soj = []
    for k, s in enumerate(sojourn):
        if isinstance(s, DiscretePhaseType):
            soj.append(s)
        else:
            try:
                soj.append(dph_validate(*s))
            except ValidationError as exc:
                raise ValidationError(str(exc), f"sojourn[{k}]") from None
    return PhTypeHmm(beta=beta, jump=jump, sojourn=tuple(soj), emission=tuple(emission),
                     labels=None if labels is None else tuple(labels))


def semi_markov_kernel(m, i, j, n):
    """Q_ij(n): probability of leaving regime i for j after exactly n steps."""
    i, j = m.regime_index(i), m.regime_index(j)
    if i == j:
        return 0.0
    return float(m.jump[i, j] * dph_pmf(m.sojourn[i], n))


def emission_matrix(laws: Sequence, obs):
    """``(N, len(laws))`` matrix of emission likelihoods."""
    obs = np.asarray(obs, dtype=float)
    return np.column_stack([np.asarray(law.pdf(obs), dtype=float).reshape(obs.shape)
                            for law in laws])
