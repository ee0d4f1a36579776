"""Chain learning by trace sampling with a per-state stopping bound.

Traces are accumulated in batches; after each batch the per-state minimum
visit bound is recomputed from the current counts and learning stops once
every non-exempt state meets it. Outcome states are exempt (their self-loops
are structural: every trace ends in one, so outgoing transitions are never
observed), as are states the input distribution provably cannot reach.
Transition probabilities are plain visit frequencies; rows of states never
visited fall back to the uniform 1/m row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sampler as _sampler
from ._backend import core as _core
from ._backend import rnn_trace_batch as _rnn_trace_batch
from .abstraction import StateSpace, TracePlan, build_trace_plan
from .errors import ConfigError
from .model import Network
from ._backend.py_core import ACT_CODES

DEFAULT_BATCH = 100
DEFAULT_BUDGET = 5_000_000


def derive_eps_delta(mu_eps: float, mu_delta: float) -> tuple[float, float]:
    """Per-probability accuracy and confidence from the fairness-level pair.

    The fairness check compares two estimated probabilities, so each must be
    learned to half the accuracy and with confidence whose two-fold union
    stays within the requested level: (mu_eps / 2, 1 - sqrt(1 - mu_delta)).
    """
    if not 0 < mu_eps < 1 or not 0 < mu_delta < 1:
        raise ConfigError("mu_eps and mu_delta must lie in (0, 1)")
    return mu_eps / 2.0, 1.0 - math.sqrt(1.0 - mu_delta)


def visit_bound(epsilon: float, delta_prime: float, row_counts) -> float:
    """Minimum visits of a state before its outgoing frequencies are trusted.

    Adaptive Massart-style bound: rows whose observed frequencies sit far
    from 1/2 need fewer visits. The offset term is the max over observed
    successors of |1/2 - n_pq / n_p|; unvisited rows use offset 0, which
    maximizes the bound.
    """
    if not 0 < epsilon < 1 or not 0 < delta_prime < 1:
        raise ConfigError("epsilon and delta_prime must lie in (0, 1)")
    row = np.asarray(row_counts, dtype=np.float64)
    n_p = float(row.sum())
    if n_p > 0:
        observed = row[row > 0]
        offset = float(np.max(np.abs(0.5 - observed / n_p)))
    else:
        offset = 0.0
    bracket = 0.25 - (offset - 2.0 * epsilon / 3.0) ** 2
    return (2.0 / epsilon**2) * math.log(2.0 / delta_prime) * bracket


def _visit_bounds_all(n_pq: np.ndarray, n_p: np.ndarray, epsilon: float,
                      delta_prime: float) -> np.ndarray:
    """Vectorized visit_bound over every state row."""
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = n_pq / n_p[:, None]
    dev = np.where(n_pq > 0, np.abs(0.5 - ratios), -np.inf)
    offsets = np.max(dev, axis=1)
    offsets[n_p == 0] = 0.0
    bracket = 0.25 - (offsets - 2.0 * epsilon / 3.0) ** 2
    return (2.0 / epsilon**2) * math.log(2.0 / delta_prime) * bracket


@dataclass
class CountMatrix:
    """Transition counts: n_pq per ordered pair, with row sums as n_p."""

    n_pq: np.ndarray
    trace_count: int = 0

    @classmethod
    def empty(cls, m: int) -> "CountMatrix":
        return cls(n_pq=np.zeros((m, m), dtype=np.int64))

    @property
    def n_p(self) -> np.ndarray:
        return self.n_pq.sum(axis=1)

    @property
    def m(self) -> int:
        return self.n_pq.shape[0]


def update_counts(counts: CountMatrix, trace) -> CountMatrix:
    """Add one abstract trace's transitions; an empty trace changes nothing."""
    trace = list(trace)
    if len(trace) < 2:
        return counts
    for p, q in zip(trace, trace[1:]):
        counts.n_pq[p, q] += 1
    counts.trace_count += 1
    return counts


def estimate_matrix(counts: CountMatrix, m: int, outcome_states=()) -> np.ndarray:
    """Frequency-estimated transition matrix.

    Visited rows are empirical frequencies, unvisited rows are uniform 1/m,
    and outcome rows are the structural self-loop.
    """
    if m < 2:
        raise ConfigError("a chain needs at least 2 states")
    n_p = counts.n_p.astype(np.float64)
    A = np.full((m, m), 1.0 / m)
    visited = n_p > 0
    A[visited] = counts.n_pq[visited] / n_p[visited, None]
    for s in outcome_states:
        A[s] = 0.0
        A[s, s] = 1.0
    return A


@dataclass
class Dtmc:
    """A learned chain: the state space, transition matrix, and provenance."""

    space: StateSpace
    A: np.ndarray
    counts: CountMatrix
    pac: tuple[float, float]  # (epsilon, delta) used while learning
    is_pac: bool = True
    starved: tuple[int, ...] = ()
    traces_used: int = 0
    initial: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.initial is None:
            init = np.zeros(self.space.m)
            init[self.space.start] = 1.0
            self.initial = init

    @property
    def ids(self) -> tuple[str, ...]:
        return self.space.ids

    @property
    def m(self) -> int:
        return self.space.m

    def starved_ids(self) -> list[str]:
        return [self.space.ids[s] for s in self.starved]


def learn_from_source(trace_source, space: StateSpace, epsilon: float,
                      delta: float, max_traces: int = DEFAULT_BUDGET,
                      batch_size: int = DEFAULT_BATCH, exempt=(),
                      count_kernel=None) -> Dtmc:
    """Core sampling loop over an arbitrary trace source.

    ``trace_source(n, start)`` returns n traces as an (n, L) int array or a
    list of state-id sequences. Used directly by tests that learn from known
    ground-truth chains; ``learn_dtmc`` wraps it for real networks.
    """
    if not 0 < epsilon < 1 or not 0 < delta < 1:
        raise ConfigError("epsilon and delta must lie in (0, 1)")
    if max_traces < 1 or batch_size < 1:
        raise ConfigError("trace budget and batch size must be >= 1")
    count_kernel = count_kernel or _core.count_transitions
    m = space.m
    delta_prime = delta / m
    checked = np.ones(m, dtype=bool)
    checked[list(space.outcome_states)] = False
    for s in exempt:
        checked[s] = False

    counts = CountMatrix.empty(m)
    drawn = 0
    is_pac = False
    while drawn < max_traces:
        n = min(batch_size, max_traces - drawn)
        batch = trace_source(n, drawn)
        drawn += n
        if isinstance(batch, np.ndarray) and batch.ndim == 2:
            counts.n_pq += count_kernel(batch, m)
            counts.trace_count += batch.shape[0]
        else:
            for tr in batch:
                update_counts(counts, tr)
        n_p = counts.n_p
        bounds = _visit_bounds_all(counts.n_pq, n_p.astype(np.float64),
                                   epsilon, delta_prime)
        if np.all(n_p[checked] >= bounds[checked]):
            is_pac = True
            break

    n_p = counts.n_p
    bounds = _visit_bounds_all(counts.n_pq, n_p.astype(np.float64),
                               epsilon, delta_prime)
    starved = tuple(int(s) for s in np.nonzero(checked & (n_p < bounds))[0])
    A = estimate_matrix(counts, m, outcome_states=space.outcome_states)
    return Dtmc(space=space, A=A, counts=counts, pac=(epsilon, delta),
                is_pac=is_pac, starved=starved, traces_used=counts.trace_count)


def network_trace_source(net: Network, dist: _sampler.InputDistribution,
                         space: StateSpace, backend=None):
    """Batch trace generator for a network: sample inputs, run, abstract."""
    backend = backend or _core
    plan = build_trace_plan(space, net)
    spec = list(net.input_spec)
    if space.recurrent:
        if dist.seq_len is None:
            raise ConfigError("recurrent learning needs a seq_len on the distribution")
        cell = net.cell
        readout = net.layers[-1]

        def source(n, start):
            X = _sampler.sample_batch(dist, spec, n, start)
            return _rnn_trace_batch(
                cell.input_weights, cell.hidden_weights, cell.bias,
                ACT_CODES[cell.activation], readout.weights, readout.bias,
                ACT_CODES[readout.activation], X, plan)

        return source

    weights = [l.weights for l in net.layers]
    biases = [l.bias for l in net.layers]
    acts = np.asarray([ACT_CODES[l.activation] for l in net.layers], dtype=np.int32)

    def source(n, start):
        X = _sampler.sample_batch(dist, spec, n, start)
        return backend.ffnn_trace_batch(weights, biases, acts, X, plan)

    return source


def structurally_unreachable(dist: _sampler.InputDistribution,
                             space: StateSpace) -> tuple[int, ...]:
    """Protected-value states the distribution assigns zero weight."""
    dead = _sampler.zero_weight_values(dist, space.protected_feature)
    return tuple(space.protected_states[v] for v in sorted(dead))


def learn_dtmc(net: Network, dist: _sampler.InputDistribution, space: StateSpace,
               epsilon: float, delta: float, max_traces: int = DEFAULT_BUDGET,
               batch_size: int = DEFAULT_BATCH, backend=None) -> Dtmc:
    """Learn a chain over the given state space by sampling network traces."""
    source = network_trace_source(net, dist, space, backend=backend)
    exempt = structurally_unreachable(dist, space)
    kernel = (backend or _core).count_transitions
    return learn_from_source(source, space, epsilon, delta,
                             max_traces=max_traces, batch_size=batch_size,
                             exempt=exempt, count_kernel=kernel)


# --------------------------------------------------------------------------
# chain text format: "m <count>", one "<index> <id>" line per state, then
# "<p> <q> <prob> <count>" for every pair with a nonzero probability or count.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DtmcTable:
    """A chain re-read from disk: ids and matrices, without the state space."""

    ids: tuple[str, ...]
    A: np.ndarray
    counts: np.ndarray

    @property
    def m(self) -> int:
        return len(self.ids)


def save_dtmc(dtmc, path: str) -> None:
    m = dtmc.m
    A = dtmc.A
    counts = dtmc.counts.n_pq if isinstance(dtmc.counts, CountMatrix) else dtmc.counts
    with open(path, "w") as fh:
        fh.write(f"m {m}\n")
        for i, sid in enumerate(dtmc.ids):
            fh.write(f"{i} {sid}\n")
        for p in range(m):
            for q in range(m):
                if A[p, q] > 0 or counts[p, q] > 0:
                    fh.write(f"{p} {q} {A[p, q]!r} {int(counts[p, q])}\n")


def load_dtmc(path: str) -> DtmcTable:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "m":
            raise ConfigError(f"{path!r} is not a chain file (bad header)")
        m = int(header[1])
        ids = []
        for _ in range(m):
            idx, sid = fh.readline().rstrip("\n").split(" ", 1)
            ids.append(sid)
        A = np.zeros((m, m))
        counts = np.zeros((m, m), dtype=np.int64)
        for line in fh:
            if not line.strip():
                continue
            p, q, prob, cnt = line.split()
            A[int(p), int(q)] = float(prob)
            counts[int(p), int(q)] = int(cnt)
    return DtmcTable(ids=tuple(ids), A=A, counts=counts)
