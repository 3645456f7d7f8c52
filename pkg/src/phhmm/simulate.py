"""Trajectory sampling, the replicated estimation study, and bootstrap forecasts."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dph import _phase_sampler, sample_phase_path
from .estimate import FitConfig, fit, forward_pass
from .exceptions import DataError, PhHmmError
from .expand import align_phases, collapse_parameters, expand_model
from .reservoir import (dependability_table, marginal_inflow_law, moran_build, mttf,
                        stationary_law)
from .rng import as_generator, stream

log = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.05, 0.25, 0.75, 0.95)


@dataclass
class SamplePath:
    """One simulated trajectory.

    ``segments`` holds ``(regime, start, duration, censored)``; the last
    segment is censored when the path ends before its sojourn does.
    """

    regimes: np.ndarray
    phases: np.ndarray
    signals: np.ndarray
    segments: list
    extended: np.ndarray = None

    def completed_durations(self, regime):
        return [d for (i, _, d, cens) in self.segments if i == regime and not cens]


def sample_path(m, n, seed=None, start=None, rng=None):
    """Simulate ``n`` steps of the PH-HMM.

    Draw the first regime from beta, hold it for a DPH sojourn while emitting
    one signal per step, then jump through the embedded chain; truncate at
    ``n``. ``start=(regime, phase)`` resumes a sojourn already in progress at
    that phase instead of drawing from beta.
    """
    n = int(n)
    if n < 1:
        raise DataError("path length must be >= 1")
    rng = rng if rng is not None else as_generator(0 if seed is None else seed)
    d = m.n_regimes
    tables = [_phase_sampler(s) for s in m.sojourn]
    jump_cum = np.cumsum(m.jump, axis=1)
    beta_cum = np.cumsum(m.beta)

    regimes = np.empty(n, dtype=int)
    phases = np.empty(n, dtype=int)
    segments = []
    t = 0
    if start is None:
        i = min(int(np.searchsorted(beta_cum, rng.random() * beta_cum[-1], side="right")), d - 1)
        f0 = None
    else:
        i, f0 = int(start[0]), int(start[1])
    while t < n:
        ph = sample_phase_path(m.sojourn[i], rng, start_phase=f0, _tables=tables[i])
        f0 = None
        dur = len(ph)
        stop = min(n, t + dur)
        regimes[t:stop] = i
        phases[t:stop] = ph[: stop - t]
        segments.append((i, t, dur if stop - t == dur else stop - t, stop - t < dur))
        t = stop
        if t >= n:
            break
        if d > 1:
            row = jump_cum[i]
            i = min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), d - 1)

    signals = np.empty(n)
    for r in range(d):
        idx = np.flatnonzero(regimes == r)
        if idx.size:
            signals[idx] = m.emission[r].sample(rng, size=idx.size)
    offsets = np.concatenate([[0], np.cumsum(m.phase_layout)])[:-1]
    return SamplePath(regimes=regimes, phases=phases, signals=signals, segments=segments,
                      extended=offsets[regimes] + phases)


# ---------------------------------------------------------------------------
# Bootstrap forecast
# ---------------------------------------------------------------------------


@dataclass
class ForecastBands:
    """Pointwise (not simultaneous) predictive quantiles per forecast step."""

    horizon: int
    mean: np.ndarray
    levels: tuple
    quantiles: np.ndarray
    replicates: int
    seed: int
    paths: np.ndarray = field(repr=False, default=None)

    def columns(self):
        return ["step", "mean"] + [quantile_column(q) for q in self.levels]

    def rows(self):
        for h in range(self.horizon):
            yield [h + 1, self.mean[h], *self.quantiles[:, h]]


def quantile_column(level):
    return "q" + format(100 * level, "02g")


def _start_law(e, data):
    """Law of the extended state at the first forecast step."""
    if data is None:
        return e.beta
    t = forward_pass(e, data)
    return t.forward[-1] @ e.P


def forecast(m, horizon, replicates=500, seed=0, levels=DEFAULT_LEVELS, data=None):
    """Bootstrap predictive bands for the next ``horizon`` signals.

    Each replicate runs the sampler from its own stream. Without ``data`` the
    first step starts from beta; with ``data`` the hidden state of the first
    forecast step is drawn from the filtered law at the end of ``data``
    pushed one step forward, and the sampler resumes that regime and phase.
    """
    horizon, replicates = int(horizon), int(replicates)
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    if replicates < 2:
        raise DataError("need at least two bootstrap replicates")
    levels = tuple(float(q) for q in levels)
    if not levels or any(not (0.0 < q < 1.0) for q in levels) or len(set(levels)) != len(levels):
        raise DataError(f"quantile levels must be distinct values in (0, 1), got {levels}")
    levels = tuple(sorted(levels))

    e = expand_model(m)
    law = None if data is None else _start_law(e, np.asarray(data, dtype=float))
    regime_of = e.regime_of
    offsets = np.concatenate([[0], np.cumsum(m.phase_layout)])[:-1]
    paths = np.empty((replicates, horizon))
    for b in range(replicates):
        rng = stream(seed, b)
        start = None
        if law is not None:
            k = int(rng.choice(e.size, p=law / law.sum()))
            start = (int(regime_of[k]), int(k - offsets[regime_of[k]]))
        paths[b] = sample_path(m, horizon, start=start, rng=rng).signals
    q = np.quantile(paths, levels, axis=0)
    return ForecastBands(horizon=horizon, mean=paths.mean(axis=0), levels=levels,
                         quantiles=q, replicates=replicates, seed=int(seed), paths=paths)


def analytic_forecast_mean(m, horizon, data=None):
    """Exact E[Y_h] for h = 1..horizon from the propagated regime law."""
    e = expand_model(m)
    law = e.beta if data is None else _start_law(e, np.asarray(data, dtype=float))
    means = np.array([law_.mean() for law_ in m.emission])[e.regime_of]
    out = np.empty(int(horizon))
    for h in range(int(horizon)):
        out[h] = law @ means
        law = law @ e.P
    return out


# ---------------------------------------------------------------------------
# Replication study
# ---------------------------------------------------------------------------


STUDY_INITS = ("random", "truth")
STUDY_ALIGNMENTS = ("canonical", "truth", "raw")


@dataclass
class StudySettings:
    """Reservoir settings and estimation protocol of a replication study.

    ``init="random"`` fits each replicate with the configured random
    restarts; ``init="truth"`` runs a single EM from the generating model.
    ``phase_alignment="truth"`` relabels the phases of every fitted sojourn
    law to best match the generating one before averaging, instead of the
    canonical (descending alpha) order. ``phase_alignment="raw"`` keeps the
    phase labels EM carried from its starting point, which with
    ``init="truth"`` are those of the generating model.
    """

    omega: float = 5.0
    capacity: float = 20.0
    max_states: int = None
    zero_band: float = 1.0
    horizon: int = 10
    init: str = "random"
    phase_alignment: str = "canonical"

    def __post_init__(self):
        if self.init not in STUDY_INITS:
            raise DataError(f"init must be one of {STUDY_INITS}, got {self.init!r}")
        if self.phase_alignment not in STUDY_ALIGNMENTS:
            raise DataError(f"phase_alignment must be one of {STUDY_ALIGNMENTS}, "
                            f"got {self.phase_alignment!r}")


@dataclass
class ReplicateResult:
    index: int
    model: object = None
    moran: np.ndarray = None
    curves: list = None
    mttf: dict = None
    loglik: float = None
    error: str = None


@dataclass
class StudyReport:
    true_model: object
    true_moran: np.ndarray
    true_curves: list
    true_mttf: dict
    replicates: list
    settings: StudySettings

    @property
    def succeeded(self):
        return [r for r in self.replicates if r.error is None]

    @property
    def failures(self):
        return len(self.replicates) - len(self.succeeded)

    def average(self, getter):
        vals = [np.asarray(getter(r.model), dtype=float) for r in self.succeeded]
        return np.mean(vals, axis=0)

    def average_moran(self):
        return np.mean([r.moran for r in self.succeeded], axis=0)

    def average_curves(self):
        """Mean reliability/availability over replicates, keyed by (v, n)."""
        acc = {}
        for r in self.succeeded:
            for v, n, rel, av in r.curves:
                acc.setdefault((v, n), []).append((rel, av))
        return {k: tuple(np.mean(np.array(x), axis=0)) for k, x in sorted(acc.items())}


def dependability(m, st: StudySettings):
    """Moran matrix, R/A curves and MTTF for every state, from model ``m``."""
    e = expand_model(m)
    n0 = int(np.floor(st.capacity / st.omega + 1e-12))
    law = marginal_inflow_law(e, st.omega, n0, st.zero_band, pi=stationary_law(e))
    chain = moran_build(law, st.omega, st.capacity, st.max_states)
    curves = dependability_table(chain, st.horizon)
    times = {}
    for v in range(1, chain.n_states):
        try:
            times[v] = mttf(chain, v)
        except PhHmmError:
            times[v] = float("inf")
    return chain.P, curves, times


def _replicate(args):
    true_model, n_length, cfg, seed, r, st = args
    rng = stream(seed, r)
    path = sample_path(true_model, n_length, rng=rng)
    rcfg = replace(cfg, seed=int(rng.integers(2**63)), workers=1)
    try:
        init = expand_model(true_model) if st.init == "truth" else None
        rep = fit(path.signals, rcfg, init=init)
        model = rep.model
        if st.phase_alignment == "truth":
            model = align_phases(model, true_model)
        elif st.phase_alignment == "raw":
            model = collapse_parameters(rep.extended, canonical=False)
        P, curves, times = dependability(model, st)
        return ReplicateResult(index=r, model=model, moran=P, curves=curves,
                               mttf=times, loglik=rep.loglik)
    except (PhHmmError, ValueError) as exc:
        log.warning("replicate %d failed: %s", r, exc)
        return ReplicateResult(index=r, error=str(exc))


def replication_study(true_model, m_replicates, n_length, cfg: FitConfig, seed=0,
                      settings: StudySettings = None, workers=1):
    """Simulate, refit and evaluate ``m_replicates`` independent samples.

    Replicate ``r`` draws everything (path and EM restarts) from
    ``stream(seed, r)``, so the report does not depend on ``workers``.
    Failed fits are recorded in the report, not raised.
    """
    st = settings or StudySettings()
    jobs = [(true_model, int(n_length), cfg, int(seed), r, st) for r in range(int(m_replicates))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_replicate, jobs))
    else:
        reps = [_replicate(j) for j in jobs]
    P, curves, times = dependability(true_model, st)
    return StudyReport(true_model=true_model, true_moran=P, true_curves=curves,
                       true_mttf=times, replicates=reps, settings=st)
