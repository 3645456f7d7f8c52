"""EM estimation of a PH-HMM through its extended-state HMM.

The E-step is the scaled forward-backward recursion; the M-step updates the
whole extended transition matrix (restricted to its structural support) and
the per-regime emission parameters. The phase-type structure is imposed once,
after convergence, by :func:`phhmm.expand.collapse_parameters`.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, ImpossibleObservationError, NumericalError, ValidationError
from .expand import ExtendedHmm, collapse_parameters, expand_model, layout_blocks
from .phmodel import (FAMILIES, Categorical, Degenerate, ExponentialDensity, Poisson,
                      emission_matrix)
from .rng import stream

log = logging.getLogger(__name__)

# keeps parametric M-step updates inside the open parameter space
_RATE_FLOOR = 1e-12
_RATE_CEIL = 1e12


@dataclass
class Trellis:
    forward: np.ndarray
    scale: np.ndarray
    loglik: float
    backward: np.ndarray = None
    likelihoods: np.ndarray = None


def _state_likelihoods(e, obs):
    g = emission_matrix(e.emission, obs)
    return g[:, e.regime_of]


def forward_pass(e: ExtendedHmm, obs, likelihoods=None) -> Trellis:
    """Scaled forward recursion.

    The first observation is emitted from the initial law ``e.beta``; each
    forward row is normalized to sum 1 and the normalizers multiply to the
    likelihood.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 1 or obs.size < 1:
        raise DataError("need a non-empty 1-d observation series")
    g = _state_likelihoods(e, obs) if likelihoods is None else likelihoods
    N, n = g.shape
    P = e.P
    fwd = np.empty((N, n))
    scale = np.empty(N)
    a = e.beta * g[0]
    for t in range(N):
        if t:
            a = (a @ P) * g[t]
        c = a.sum()
        if not c > 0:
            raise ImpossibleObservationError(t)
        a = a / c
        fwd[t] = a
        scale[t] = c
    loglik = float(np.log(scale).sum())
    if not math.isfinite(loglik):
        raise NumericalError("non-finite log-likelihood")
    return Trellis(forward=fwd, scale=scale, loglik=loglik, likelihoods=g)


def backward_pass(e: ExtendedHmm, obs, scale, likelihoods=None) -> Trellis:
    """Scaled backward recursion matching a forward pass with ``scale``.

    The last row is 1; earlier rows are divided by the forward normalizer of
    the following step so that forward * backward is the state posterior.
    """
    obs = np.asarray(obs, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if scale.shape != obs.shape:
        raise DataError(f"scale has length {scale.size}, series has {obs.size}")
    g = _state_likelihoods(e, obs) if likelihoods is None else likelihoods
    N, n = g.shape
    P = e.P
    bwd = np.empty((N, n))
    b = np.ones(n)
    bwd[N - 1] = b
    for t in range(N - 2, -1, -1):
        b = P @ (g[t + 1] * b) / scale[t + 1]
        bwd[t] = b
    return Trellis(forward=None, scale=scale, loglik=float(np.log(scale).sum()),
                   backward=bwd, likelihoods=g)


def e_step(e: ExtendedHmm, obs):
    """Forward and backward passes combined into one trellis."""
    t = forward_pass(e, obs)
    t.backward = backward_pass(e, obs, t.scale, t.likelihoods).backward
    return t


def posteriors(t: Trellis, e: ExtendedHmm, obs=None):
    """State posteriors ``gamma`` (N x n) and transition posteriors ``xi`` ((N-1) x n x n)."""
    g = t.likelihoods if t.likelihoods is not None else _state_likelihoods(e, obs)
    gamma = t.forward * t.backward
    gamma /= gamma.sum(axis=1, keepdims=True)
    gb = g[1:] * t.backward[1:] / t.scale[1:, None]
    xi = t.forward[:-1, :, None] * e.P[None, :, :] * gb[:, None, :]
    return gamma, xi


def _expected_counts(t: Trellis, e: ExtendedHmm):
    """Summed transition posteriors without materializing the xi tensor."""
    gb = t.likelihoods[1:] * t.backward[1:] / t.scale[1:, None]
    return e.P * (t.forward[:-1].T @ gb)


def _update_emission(law, w, y):
    sw = w.sum()
    if sw <= 0:
        return law
    if isinstance(law, Degenerate):
        return law
    if isinstance(law, Poisson):
        return Poisson(min(max((w @ y) / sw, _RATE_FLOOR), _RATE_CEIL))
    if isinstance(law, ExponentialDensity):
        swy = w @ y
        rate = sw / swy if swy > 0 else _RATE_CEIL
        return ExponentialDensity(min(max(rate, _RATE_FLOOR), _RATE_CEIL))
    if isinstance(law, Categorical):
        idx = law.index(y)
        counts = np.bincount(idx, weights=w, minlength=len(law.alphabet))
        return Categorical(law.alphabet, tuple(counts / counts.sum()))
    raise TypeError(f"no M-step for {law!r}")


def m_step(gamma, xi_sum, obs, e: ExtendedHmm):
    """Closed-form maximizer of the expected complete-data log-likelihood.

    ``xi_sum`` is either the full xi tensor or its sum over time. Rows with no
    expected visits are left unchanged; their indices are returned as the
    second element.
    """
    xi_sum = np.asarray(xi_sum)
    if xi_sum.ndim == 3:
        xi_sum = xi_sum.sum(axis=0)
    obs = np.asarray(obs, dtype=float)
    visits = xi_sum.sum(axis=1)
    P = np.array(e.P)
    live = visits > 0
    P[live] = xi_sum[live] / visits[live, None]
    P[e.P == 0] = 0.0
    P[live] /= P[live].sum(axis=1, keepdims=True)
    dead = np.flatnonzero(~live).tolist()

    beta = gamma[0] / gamma[0].sum()
    laws = []
    for i, b in enumerate(e.blocks()):
        laws.append(_update_emission(e.emission[i], gamma[:, b].sum(axis=1), obs))
    new = ExtendedHmm(P=P, beta=beta, emission=tuple(laws), layout=e.layout,
                      regime_labels=e.regime_labels)
    return new, dead


def aic(loglik, k):
    """Akaike information criterion ``-2 loglik + 2k``."""
    if k < 0:
        raise ValueError("parameter count must be non-negative")
    return -2.0 * float(loglik) + 2.0 * k


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class FitConfig:
    """EM settings.

    ``emission`` is one family name for every regime or a list with one per
    regime (``"degenerate"``, ``"poisson"``, ``"exponential"``,
    ``"categorical"``). ``jump_mask`` is a d x d 0/1 matrix of allowed regime
    jumps; phase blocks inside a regime are always free.
    """

    phase_layout: tuple
    emission: object = "poisson"
    max_iterations: int = 500
    tol: float = 1e-8
    restarts: int = 20
    seed: int = 0
    jump_mask: object = None
    degenerate_value: float = 0.0
    labels: tuple = None
    workers: int = 1

    def __post_init__(self):
        self.phase_layout = tuple(int(f) for f in self.phase_layout)
        if not self.phase_layout or min(self.phase_layout) < 1:
            raise ValidationError("every regime needs at least one phase", "phase_layout")
        if self.max_iterations < 1:
            raise ValidationError("must be >= 1", "max_iterations")
        if not self.tol > 0:
            raise ValidationError("must be > 0", "tol")
        if self.restarts < 1:
            raise ValidationError("must be >= 1", "restarts")
        d = len(self.phase_layout)
        fams = [self.emission] * d if isinstance(self.emission, str) else list(self.emission)
        if len(fams) != d:
            raise ValidationError(f"{len(fams)} families for {d} regimes", "emission")
        for f in fams:
            if f not in FAMILIES:
                raise ValidationError(f"unknown family {f!r}", "emission")
        self.families = tuple(fams)
        if self.jump_mask is not None:
            mask = np.asarray(self.jump_mask, dtype=float) != 0
            if mask.shape != (d, d):
                raise ValidationError(f"shape {mask.shape} != ({d}, {d})", "jump_mask")
            np.fill_diagonal(mask, False)
            if d > 1 and not mask.any(axis=1).all():
                raise ValidationError("every regime needs an allowed exit", "jump_mask")
            self.jump_mask = mask

    @property
    def n_regimes(self):
        return len(self.phase_layout)

    def support(self):
        """Boolean extended-matrix support implied by the layout and jump mask."""
        d = self.n_regimes
        mask = self.jump_mask if self.jump_mask is not None else ~np.eye(d, dtype=bool)
        blocks = layout_blocks(self.phase_layout)
        n = sum(self.phase_layout)
        S = np.zeros((n, n), dtype=bool)
        for i, bi in enumerate(blocks):
            S[bi, bi] = True
            for j, bj in enumerate(blocks):
                if i != j and (mask[i, j] or d == 1):
                    S[bi, bj] = True
        return S


@dataclass
class FitReport:
    model: object
    extended: ExtendedHmm
    trace: list
    iterations: int
    loglik: float
    k: int
    aic: float
    restart_logliks: list
    model_loglik: float
    best_restart: int
    dead_states: list = field(default_factory=list)


def parameter_count(cfg: FitConfig, alphabet_size=None, estimate_beta=True):
    """Free parameters of the unconstrained extended model fitted by :func:`fit`.

    Initial law: n - 1. Transition matrix: per row, allowed entries - 1.
    Emissions: one per Poisson/exponential regime, s - 1 per categorical
    regime (s = alphabet size), none for degenerate ones.
    """
    S = cfg.support()
    n = S.shape[0]
    k = (n - 1) if estimate_beta else 0
    k += int(sum(max(int(r.sum()) - 1, 0) for r in S))
    for fam in cfg.families:
        if fam in ("poisson", "exponential"):
            k += 1
        elif fam == "categorical":
            if alphabet_size is None:
                raise ValueError("categorical parameter count needs the alphabet size")
            k += alphabet_size - 1
    return k


def _initial_emissions(obs, cfg):
    """Quantile split: the i-th slice of sorted data seeds regime i."""
    groups = np.array_split(np.sort(obs), cfg.n_regimes)
    alphabet = tuple(sorted(set(obs.tolist())))
    laws = []
    for fam, grp in zip(cfg.families, groups):
        m = float(grp.mean()) if grp.size else float(obs.mean())
        if fam == "degenerate":
            laws.append(Degenerate(cfg.degenerate_value))
        elif fam == "poisson":
            laws.append(Poisson(max(m, 1e-3)))
        elif fam == "exponential":
            laws.append(ExponentialDensity(1.0 / max(m, 1e-6)))
        else:
            counts = np.array([np.sum(grp == a) for a in alphabet], dtype=float) + 0.5
            laws.append(Categorical(alphabet, tuple(counts / counts.sum())))
    return laws


def initial_model(obs, cfg: FitConfig, rng) -> ExtendedHmm:
    S = cfg.support()
    P = np.where(S, rng.uniform(size=S.shape), 0.0)
    P /= P.sum(axis=1, keepdims=True)
    beta = rng.uniform(size=S.shape[0])
    beta /= beta.sum()
    return ExtendedHmm(P=P, beta=beta, emission=tuple(_initial_emissions(obs, cfg)),
                       layout=cfg.phase_layout, regime_labels=cfg.labels)


def run_em(e: ExtendedHmm, obs, max_iterations=500, tol=1e-8):
    """Iterate EM from ``e``; returns (model, loglik trace, dead states)."""
    obs = np.asarray(obs, dtype=float)
    trace = []
    dead = []
    for _ in range(max_iterations + 1):
        t = e_step(e, obs)
        ll = t.loglik
        if trace and abs(ll - trace[-1]) / (1.0 + abs(ll)) < tol:
            trace.append(ll)
            break
        trace.append(ll)
        if len(trace) > max_iterations:
            break
        gamma = t.forward * t.backward
        gamma /= gamma.sum(axis=1, keepdims=True)
        e, dead = m_step(gamma, _expected_counts(t, e), obs, e)
    return e, trace, dead


def _one_restart(args, e0=None):
    obs, cfg, r = args
    try:
        if e0 is None:
            e0 = initial_model(obs, cfg, stream(cfg.seed, r))
        e, trace, dead = run_em(e0, obs, cfg.max_iterations, cfg.tol)
        return r, e, trace, dead, None
    except (NumericalError, ValidationError, ValueError) as exc:
        return r, None, None, None, str(exc)


def _order_regimes(e: ExtendedHmm, cfg: FitConfig):
    """Sort exchangeable regimes (same phase count and family) by emission mean.

    Skipped when a jump mask pins regime identities.
    """
    d = cfg.n_regimes
    if cfg.jump_mask is not None or d == 1:
        return e
    order = list(range(d))
    classes = {}
    for i in range(d):
        classes.setdefault((cfg.phase_layout[i], cfg.families[i]), []).append(i)
    for members in classes.values():
        ranked = sorted(members, key=lambda i: (e.emission[i].mean(), i))
        for slot, src in zip(members, ranked):
            order[slot] = src
    if order == list(range(d)):
        return e
    blocks = e.blocks()
    idx = np.concatenate([np.arange(blocks[i].start, blocks[i].stop) for i in order])
    return ExtendedHmm(P=e.P[np.ix_(idx, idx)], beta=e.beta[idx],
                       emission=tuple(e.emission[i] for i in order),
                       layout=tuple(e.layout[i] for i in order),
                       regime_labels=e.regime_labels)


def fit(obs, cfg: FitConfig, init: ExtendedHmm = None) -> FitReport:
    """Fit a PH-HMM to ``obs`` with ``cfg.restarts`` random EM starts.

    The restart with the highest final log-likelihood wins, skipping any
    whose extended chain cannot be collapsed (e.g. an absorbing regime).
    When ``init`` is
    given, a single EM run starts from it instead and ``cfg.restarts`` is
    ignored; its layout must match ``cfg.phase_layout``. ``loglik`` and
    ``aic`` refer to the unconstrained extended model reached by EM;
    ``model_loglik`` is the log-likelihood of the structured model obtained
    after collapsing, which is what a saved model file reproduces.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 1 or obs.size < 2:
        raise DataError("need at least two observations")
    if not np.all(np.isfinite(obs)):
        raise DataError("observations must be finite")
    jobs = [(obs, cfg, r) for r in range(cfg.restarts)]
    if init is not None:
        if tuple(init.layout) != tuple(cfg.phase_layout):
            raise ValueError(f"initial model layout {init.layout} != {cfg.phase_layout}")
        results = [_one_restart((obs, cfg, 0), init)]
    elif cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_one_restart, jobs))
    else:
        results = [_one_restart(j) for j in jobs]

    finals = [tr[-1] if tr else float("nan") for _, _, tr, _, _ in results]
    ok = [res for res in results if res[1] is not None]
    if not ok:
        raise NumericalError(f"all {len(results)} EM restarts failed: {results[0][4]}")
    # best restart first; one whose chain has no phase-type reading is skipped
    ranked = sorted(ok, key=lambda res: (-res[2][-1], res[0]))
    reasons = []
    for r, e, trace, dead, _ in ranked:
        e = _order_regimes(e, cfg)
        try:
            model = collapse_parameters(e)
            break
        except (NumericalError, ValidationError) as exc:
            log.warning("restart %d (loglik %.6f) cannot be collapsed: %s", r, trace[-1], exc)
            reasons.append(f"restart {r}: {exc}")
    else:
        raise NumericalError("no restart yields a phase-type structure ("
                             + "; ".join(reasons) + ")")
    model_ll = forward_pass(expand_model(model), obs).loglik
    alphabet = len(set(obs.tolist())) if "categorical" in cfg.families else None
    k = parameter_count(cfg, alphabet)
    ll = trace[-1]
    log.info("restart %d won with loglik %.6f after %d iterations", r, ll, len(trace) - 1)
    return FitReport(model=model, extended=e, trace=list(trace), iterations=len(trace) - 1,
                     loglik=ll, k=k, aic=aic(ll, k), restart_logliks=finals,
                     model_loglik=model_ll, best_restart=r, dead_states=dead)
