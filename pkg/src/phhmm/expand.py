"""Regime-phase expansion of a PH-HMM into an ordinary HMM, and back.

Extended states are ordered regime-major, phase-minor: (0,0), (0,1), ...,
(1,0), ... . Everything that indexes ``P`` relies on that order.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .dph import DiscretePhaseType, dph_exit_vector, dph_validate
from .exceptions import NumericalError
from .phmodel import PhTypeHmm

ROW_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ExtendedHmm:
    P: np.ndarray
    beta: np.ndarray
    emission: tuple
    layout: tuple
    regime_labels: tuple = None

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        beta = np.array(self.beta, dtype=float)
        layout = tuple(int(f) for f in self.layout)
        n = sum(layout)
        if P.shape != (n, n) or beta.shape != (n,):
            raise ValueError(f"P {P.shape} / beta {beta.shape} do not match layout {layout}")
        if len(self.emission) != len(layout):
            raise ValueError("one emission law per regime is required")
        rows = P.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_TOL) or np.any(P < 0):
            raise ValueError(f"P is not row-stochastic (row sums {rows})")
        labels = self.regime_labels or tuple(str(i + 1) for i in range(len(layout)))
        P.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "emission", tuple(self.emission))
        object.__setattr__(self, "regime_labels", tuple(labels))

    @property
    def size(self):
        return self.P.shape[0]

    @property
    def labels(self):
        """(regime, phase) pair for each extended state."""
        return [(i, f) for i, F in enumerate(self.layout) for f in range(F)]

    @property
    def regime_of(self):
        return np.repeat(np.arange(len(self.layout)), self.layout)

    def blocks(self):
        return layout_blocks(self.layout)

    def state_emission(self, k):
        return self.emission[self.regime_of[k]]


def layout_blocks(layout):
    """Slice of extended indices owned by each regime of ``layout``."""
    edges = np.concatenate([[0], np.cumsum(layout)])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def expand_model(m: PhTypeHmm) -> ExtendedHmm:
    """Regime-phase Markov chain of ``m``.

    Diagonal block i is T_i; block (i, j) is the outer product
    T_i^0 (p_ij alpha_j). A single-regime model renews into itself, so its
    chain is T + T^0 alpha.
    """
    layout = m.phase_layout
    blocks = layout_blocks(layout)
    n = sum(layout)
    P = np.zeros((n, n))
    d = m.n_regimes
    for i, bi in enumerate(blocks):
        Ti = m.sojourn[i].T
        t0 = dph_exit_vector(m.sojourn[i])
        P[bi, bi] = Ti
        if d == 1:
            P[bi, bi] += np.outer(t0, m.sojourn[i].alpha)
            continue
        for j, bj in enumerate(blocks):
            if j != i:
                P[bi, bj] = np.outer(t0, m.jump[i, j] * m.sojourn[j].alpha)
    beta = np.concatenate([m.beta[i] * m.sojourn[i].alpha for i in range(d)])
    return ExtendedHmm(P=P, beta=beta, emission=m.emission, layout=layout,
                       regime_labels=m.labels)


def canonical_phase_order(alpha, T):
    """Permutation sorting phases by descending alpha, then descending T diagonal."""
    keys = [(-alpha[f], -T[f, f], f) for f in range(len(alpha))]
    return [k[-1] for k in sorted(keys)]


def canonicalize_dph(d: DiscretePhaseType) -> DiscretePhaseType:
    perm = canonical_phase_order(d.alpha, d.T)
    return dph_validate(d.alpha[perm], d.T[np.ix_(perm, perm)])


def canonicalize(m: PhTypeHmm) -> PhTypeHmm:
    """Relabel phases within each regime into canonical order."""
    return PhTypeHmm(beta=m.beta, jump=m.jump,
                     sojourn=tuple(canonicalize_dph(s) for s in m.sojourn),
                     emission=m.emission, labels=m.labels)


def align_phases(m: PhTypeHmm, reference: PhTypeHmm) -> PhTypeHmm:
    """Relabel phases of ``m`` to best match ``reference`` regime by regime.

    For each regime the permutation minimizing the summed absolute
    difference of alpha and T is chosen. Regimes whose phase counts differ
    are left as they are. Used to average estimates over replicates against
    a known generating model.
    """
    out = []
    for s, ref in zip(m.sojourn, reference.sojourn):
        if s.order != ref.order:
            out.append(s)
            continue
        best, best_cost = None, np.inf
        for perm in itertools.permutations(range(s.order)):
            p = list(perm)
            cost = (np.abs(s.alpha[p] - ref.alpha).sum()
                    + np.abs(s.T[np.ix_(p, p)] - ref.T).sum())
            if cost < best_cost - 1e-15:
                best, best_cost = p, cost
        out.append(dph_validate(s.alpha[best], s.T[np.ix_(best, best)]))
    return PhTypeHmm(beta=m.beta, jump=m.jump, sojourn=tuple(out), emission=m.emission,
                     labels=m.labels)


def collapse_parameters(e: ExtendedHmm, phase_layout=None, tol=1e-9,
                        canonical=True) -> PhTypeHmm:
    """Recover (beta, p, alpha, T) from an extended chain.

    T_i is read off the diagonal block. For the off-diagonal blocks
    B_ij ~ T_i^0 (p_ij alpha_j) the jump probability is the block's total
    mass normalized over j, and alpha_j is the column mass of every block
    entering regime j, pooled over sources and normalized. Both are exact
    when the blocks are rank one. Phases come back in canonical order unless
    ``canonical`` is false, in which case the extended chain's order is kept.

    A single-regime chain carries no information on the sojourn law; it is
    returned with every phase exiting after one step (T = 0).
    """
    layout = tuple(phase_layout) if phase_layout is not None else e.layout
    if sum(layout) != e.size:
        raise ValueError(f"layout {layout} does not cover {e.size} extended states")
    P = np.asarray(e.P)
    blocks = layout_blocks(layout)
    d = len(layout)
    beta_t = np.asarray(e.beta)
    beta = np.array([beta_t[b].sum() for b in blocks])

    if d == 1:
        F = layout[0]
        a = beta_t / beta_t.sum() if beta_t.sum() > 0 else np.full(F, 1.0 / F)
        soj = (dph_validate(a, np.zeros((F, F))),)
        if canonical:
            soj = (canonicalize_dph(soj[0]),)
        return PhTypeHmm(beta=np.ones(1), jump=np.zeros((1, 1)), sojourn=soj,
                         emission=e.emission, labels=e.regime_labels)

    mass = np.zeros((d, d))
    colmass = [np.zeros(F) for F in layout]
    Ts = []
    for i, bi in enumerate(blocks):
        Ti = P[bi, bi]
        t0 = 1.0 - Ti.sum(axis=1)
        off = 0.0
        for j, bj in enumerate(blocks):
            if j == i:
                continue
            B = P[bi, bj]
            if np.any(B < -tol):
                raise NumericalError(f"negative entry in block ({i}, {j})")
            B = np.clip(B, 0.0, None)
            mass[i, j] = B.sum()
            colmass[j] += B.sum(axis=0)
            off += mass[i, j]
        if off > tol and np.all(t0 <= tol):
            raise NumericalError(f"regime {i} has off-diagonal mass but a zero exit vector")
        if off <= tol:
            raise NumericalError(f"regime {i} never exits (absorbing regime)")
        Ts.append(Ti)

    jump = mass / mass.sum(axis=1, keepdims=True)
    soj = []
    for j, bj in enumerate(blocks):
        a = colmass[j]
        if a.sum() <= tol:
            # never entered by a jump: fall back to the initial law, then uniform
            a = beta_t[bj]
            if a.sum() <= tol:
                a = np.ones(layout[j])
        a = a / a.sum()
        d_j = dph_validate(a, Ts[j])
        soj.append(canonicalize_dph(d_j) if canonical else d_j)
    return PhTypeHmm(beta=beta, jump=jump, sojourn=tuple(soj), emission=e.emission,
                     labels=e.regime_labels)
