"""Moran storage chain driven by the PH-HMM inflow law, and its dependability measures.

Storage states count whole years of guaranteed supply: state ``v`` means the
stored volume lies in ``[v*omega, (v+1)*omega)``; state 0 is "empty" and the
top state collects every level from ``top*omega`` up to capacity.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .exceptions import DataError, NumericalError, ReducibleChainError
from .expand import ExtendedHmm

ROW_TOL = 1e-10


# ---------------------------------------------------------------------------
# Stationary law of the hidden chain and the marginal inflow law
# ---------------------------------------------------------------------------


def _recurrent_classes(P):
    adj = (np.asarray(P) > 0).astype(int)
    ncomp, comp = connected_components(adj, directed=True, connection="strong")
    classes = []
    for c in range(ncomp):
        members = np.flatnonzero(comp == c)
        outside = np.setdiff1d(np.arange(P.shape[0]), members)
        if not (adj[np.ix_(members, outside)].any() if outside.size else False):
            classes.append(members)
    return classes


def _period(P, members):
    """Period of an irreducible class via BFS level differences."""
    sub = np.asarray(P)[np.ix_(members, members)] > 0
    level = {0: 0}
    queue = [0]
    g = 0
    while queue:
        u = queue.pop(0)
        for w in np.flatnonzero(sub[u]):
            w = int(w)
            if w not in level:
                level[w] = level[u] + 1
                queue.append(w)
            else:
                g = math.gcd(g, level[u] + 1 - level[w])
    return g


def stationary_law(chain):
    """Stationary distribution of a transition matrix or :class:`ExtendedHmm`.

    Solved on the unique recurrent class by dense elimination of
    ``pi (P - I) = 0, sum(pi) = 1``; transient states get zero mass. More
    than one recurrent class raises :class:`ReducibleChainError`; a periodic
    class only warns (the law exists but ``P^n`` does not converge to it).
    """
    P = np.asarray(chain.P if isinstance(chain, ExtendedHmm) else chain, dtype=float)
    classes = _recurrent_classes(P)
    if len(classes) != 1:
        raise ReducibleChainError(
            f"{len(classes)} recurrent classes: {[c.tolist() for c in classes]}")
    members = classes[0]
    if _period(P, members) > 1:
        warnings.warn("stationary law of a periodic chain", stacklevel=2)
    Q = P[np.ix_(members, members)]
    k = members.size
    A = (Q - np.eye(k)).T
    A[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular stationary system") from exc
    pi = np.zeros(P.shape[0])
    pi[members] = np.clip(x, 0.0, None)
    return pi / pi.sum()


def regime_occupancy(e: ExtendedHmm, pi=None):
    """Stationary mass of each regime (phases summed)."""
    pi = stationary_law(e) if pi is None else pi
    return np.array([pi[b].sum() for b in e.blocks()])


@dataclass(frozen=True, eq=False)
class InflowLaw:
    """Binned inflow probabilities.

    ``probs`` = (P(Y in zero band), P(zero band < Y <= omega),
    P(omega < Y <= 2 omega), ..., P((n0-1) omega < Y <= n0 omega), P(Y > n0 omega)).
    """

    probs: np.ndarray
    omega: float
    n0: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (self.n0 + 2,):
            raise DataError(f"{p.size} bins for n0={self.n0} (expected {self.n0 + 2})")
        if np.any(p < -ROW_TOL) or abs(p.sum() - 1.0) > ROW_TOL:
            raise DataError(f"bin probabilities must be >= 0 and sum to 1 (sum {p.sum()!r})")
        p = np.clip(p, 0.0, None)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def p_zero(self):
        return float(self.probs[0])

    def exceed(self, k):
        """P(Y > k * omega) for 0 <= k <= n0 (k = 0 means Y above the zero band)."""
        return float(self.probs[k + 1:].sum())

    def band(self, k):
        """P(k omega < Y <= (k+1) omega); k = 0 excludes the zero band."""
        return float(self.probs[k + 1])


def _zero_edge(law, zero_band):
    return zero_band if law.kind == "density" else 0.0


def binned_law(laws, weights, omega, n0, zero_band=1.0):
    """Mixture of ``laws`` with ``weights`` cut into Moran brackets.

    For count/categorical laws the zero band is the atom at 0; for densities
    it is ``[0, zero_band)`` since an exact zero has no mass.
    """
    if omega <= 0:
        raise DataError("release omega must be positive")
    weights = np.asarray(weights, dtype=float)
    edges = omega * np.arange(1, n0 + 1)
    probs = np.zeros(n0 + 2)
    for law, w in zip(laws, weights):
        if w == 0:
            continue
        z = _zero_edge(law, zero_band)
        if not hasattr(law, "cdf"):
            raise DataError(f"cannot bin emission law {law!r}")
        c = np.concatenate([[float(law.cdf(z))], np.asarray(law.cdf(edges), dtype=float), [1.0]])
        if z > omega:
            raise DataError(f"zero band {z} exceeds the release {omega}")
        probs += w * np.diff(np.concatenate([[0.0], c]))
    probs = np.clip(probs, 0.0, None)
    return InflowLaw(probs=probs / probs.sum(), omega=float(omega), n0=int(n0))


def marginal_inflow_law(e: ExtendedHmm, omega, n0, zero_band=1.0, pi=None):
    """Stationary marginal law of the inflow, binned for the Moran chain."""
    occ = regime_occupancy(e, pi)
    return binned_law(e.emission, occ, omega, n0, zero_band)


# ---------------------------------------------------------------------------
# Moran chain
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MoranChain:
    omega: float
    capacity: float
    n0: int
    P: np.ndarray

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def states(self):
        return list(range(self.n_states))


def moran_build(law: InflowLaw, omega, capacity, max_states=None):
    """Moran transition matrix in the bracket layout.

    With ``K`` states and ``top = K - 1``:

    * from empty: stay w.p. P(Y <= omega), reach k w.p.
      P(k omega < Y <= (k+1) omega), reach top w.p. P(Y > top omega);
    * from ``v >= 1``: drop to ``v - 1`` w.p. P(Y = 0), stay w.p.
      P(0 < Y <= omega), climb k w.p. P(k omega < Y <= (k+1) omega), reach
      top w.p. P(Y > (top - v) omega).

    ``K = n0 + 1`` by default (n0 = floor(C / omega)); ``max_states`` lowers
    it, the top state then meaning "top or more years of supply".
    """
    if omega <= 0:
        raise DataError("release omega must be positive")
    if capacity < omega:
        raise DataError(f"capacity {capacity} is below the release {omega}")
    n0 = int(math.floor(capacity / omega + 1e-12))
    if law.n0 != n0:
        raise DataError(f"inflow law has bins for n0={law.n0}, chain needs n0={n0}")
    K = n0 + 1 if max_states is None else min(n0 + 1, int(max_states))
    if K < 2:
        raise DataError("a Moran chain needs at least two states")
    top = K - 1
    P = np.zeros((K, K))
    P[0, 0] = law.p_zero + law.band(0)
    for k in range(1, top):
        P[0, k] = law.band(k)
    P[0, top] += law.exceed(top)
    for v in range(1, K):
        P[v, v - 1] = law.p_zero
        if v == top:
            P[v, v] = law.exceed(0)
            continue
        P[v, v] = law.band(0)
        for k in range(1, top - v):
            P[v, v + k] = law.band(k)
        P[v, top] += law.exceed(top - v)
    return MoranChain(omega=float(omega), capacity=float(capacity), n0=n0, P=P)


def _check_state(c, v, allow_empty):
    if not (0 <= v < c.n_states):
        raise DataError(f"state {v} outside 0..{c.n_states - 1}")
    if v == 0 and not allow_empty:
        raise DataError("reliability is undefined from the empty state")


def reliability(c: MoranChain, v, n):
    """R_v(n): probability of never hitting empty in steps 1..n, starting from v."""
    _check_state(c, v, allow_empty=False)
    if n < 0:
        raise DataError("horizon must be non-negative")
    P0 = c.P[1:, 1:]
    x = np.zeros(c.n_states - 1)
    x[v - 1] = 1.0
    for _ in range(int(n)):
        x = x @ P0
    return float(x.sum())


def availability(c: MoranChain, v, n):
    """A_v(n): probability the reservoir is not empty at step n, starting from v."""
    _check_state(c, v, allow_empty=True)
    if n < 0:
        raise DataError("horizon must be non-negative")
    x = np.zeros(c.n_states)
    x[v] = 1.0
    for _ in range(int(n)):
        x = x @ c.P
    return float(1.0 - x[0])


def mttf(c: MoranChain, v):
    """Mean steps to first reach empty from ``v``: row v of (I - P0)^-1 e."""
    _check_state(c, v, allow_empty=False)
    # empty must be reachable from v, otherwise the mean is infinite
    seen, frontier = {v}, [v]
    while frontier:
        u = frontier.pop()
        for w in np.flatnonzero(c.P[u] > 0).tolist():
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    if 0 not in seen:
        raise NumericalError(f"empty state unreachable from {v}: infinite MTTF")
    P0 = c.P[1:, 1:]
    k = P0.shape[0]
    try:
        t = np.linalg.solve(np.eye(k) - P0, np.ones(k))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("I - P0 is singular") from exc
    return float(t[v - 1])


def dependability_table(c: MoranChain, horizon):
    """Rows ``(v, n, reliability, availability)`` for every state and n = 0..horizon.

    Reliability is ``nan`` for the empty state.
    """
    rows = []
    K = c.n_states
    P0 = c.P[1:, 1:]
    R = np.eye(K - 1)
    A = np.eye(K)
    for n in range(int(horizon) + 1):
        if n:
            R = R @ P0
            A = A @ c.P
        for v in range(K):
            r = float(R[v - 1].sum()) if v else float("nan")
            rows.append((v, n, r, float(1.0 - A[v, 0])))
    return rows


# ---------------------------------------------------------------------------
# Water balance audit
# ---------------------------------------------------------------------------


@dataclass
class BalanceAudit:
    computed: np.ndarray
    recorded: np.ndarray
    discrepancy: np.ndarray


def balance_audit(inflows, outflows, c1, recorded=None, v0=None, atol=1e-9):
    """Volumes implied by the balance equation, compared with the records.

    ``computed[0] = V_0`` and
    ``computed[n] = min(max(0, V[n-1] + Y[n-1] - O[n-1]), c1)``,
    where ``V`` is the recorded series when given (so each year is checked in
    isolation) and the computed series otherwise, starting from ``v0``.
    Discrepancies within ``atol`` hm3 are floating-point noise and are
    reported as exactly zero.
    """
    Y = np.asarray(inflows, dtype=float)
    O = np.asarray(outflows, dtype=float)
    if Y.shape != O.shape or Y.ndim != 1:
        raise DataError("inflow and outflow series must have equal length")
    if np.any(Y < 0) or np.any(O < 0):
        raise DataError("inflows and outflows must be non-negative")
    if recorded is not None:
        V = np.asarray(recorded, dtype=float)
        if V.shape != Y.shape:
            raise DataError("recorded volumes must match the inflow series length")
        start = V[0]
    else:
        if v0 is None:
            raise DataError("need recorded volumes or an initial volume v0")
        start = float(v0)
    if not (0 <= start <= c1):
        raise DataError(f"initial volume {start} outside [0, {c1}]")
    comp = np.empty(Y.size)
    comp[0] = start
    for n in range(1, Y.size):
        prev = V[n - 1] if recorded is not None else comp[n - 1]
        comp[n] = min(max(0.0, prev + Y[n - 1] - O[n - 1]), c1)
    rec = V if recorded is not None else comp.copy()
    disc = comp - rec
    disc[np.abs(disc) <= atol] = 0.0
    return BalanceAudit(computed=comp, recorded=rec, discrepancy=disc)
