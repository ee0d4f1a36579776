"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fairmc.abstraction import StateSpace, Tier, bin_fit, build_state_space
from fairmc.model import FeatureSpec, Layer, Network


def categorical(name, index, cardinality, protected=False):
    return FeatureSpec(name=name, index=index, kind="categorical",
                       cardinality=cardinality, protected=protected)


def continuous(name, index, lo=0.0, hi=1.0):
    return FeatureSpec(name=name, index=index, kind="continuous", lo=lo, hi=hi)


def identity_layer(d):
    return Layer(weights=np.eye(d), bias=np.zeros(d), activation="identity")


def ff_network(layer_defs, features, labels=("0", "1"), kind="feedforward"):
    layers = tuple(Layer(weights=np.asarray(w, dtype=float),
                         bias=np.asarray(b, dtype=float), activation=a)
                   for w, b, a in layer_defs)
    return Network(layers=layers, input_spec=tuple(features),
                   output_labels=tuple(labels), kind=kind)


def echo_network(n_features=3, protected_index=0):
    """Two outputs: argmax equals the protected bit. One hidden layer deep."""
    p = n_features
    w1 = np.zeros((2, p))
    w1[1, protected_index] = 1.0
    w1[0, protected_index] = -1.0
    layer1 = Layer(weights=w1, bias=np.array([0.5, 0.0]), activation="relu")
    layer2 = identity_layer(2)
    features = [categorical("g", protected_index, 2, protected=True)]
    for i in range(p):
        if i != protected_index:
            features.append(categorical(f"x{i}", i, 2))
    features.sort(key=lambda f: f.index)
    return Network(layers=(layer1, layer2), input_spec=tuple(features),
                   output_labels=("0", "1"))


def constant_network(n_features=3):
    """Always predicts label 0 regardless of the input."""
    w1 = np.zeros((2, n_features))
    layer = Layer(weights=w1, bias=np.array([1.0, 0.0]), activation="identity")
    features = [categorical("g", 0, 2, protected=True)]
    features += [categorical(f"x{i}", i, 2) for i in range(1, n_features)]
    return Network(layers=(layer,), input_spec=tuple(features),
                   output_labels=("0", "1"))


# --------------------------------------------------------------------------
# hand-built chains for checker / sensitivity / learner tests
# --------------------------------------------------------------------------


@dataclass
class StubSpace:
    """Duck-typed state space for chains built directly from a matrix."""

    ids: tuple
    protected_states: tuple = ()
    outcome_states: tuple = ()
    targets_map: dict = field(default_factory=dict)
    start: int = 0

    @property
    def m(self):
        return len(self.ids)

    def target_states(self, target):
        return self.targets_map[target]

    def targets(self):
        return list(self.targets_map)


@dataclass
class StubChain:
    """Minimal chain object: a transition matrix plus a stub space."""

    A: np.ndarray
    space: StubSpace

    @property
    def ids(self):
        return self.space.ids

    @property
    def m(self):
        return self.A.shape[0]


def chain(ids, edges, protected=(), outcomes=(), targets=None):
    """Build a StubChain from {source: {dest: prob}} edges; absorbing states
    get their structural self-loop automatically."""
    index = {s: i for i, s in enumerate(ids)}
    m = len(ids)
    A = np.zeros((m, m))
    for src, dests in edges.items():
        for dst, p in dests.items():
            A[index[src], index[dst]] = p
    for i in range(m):
        if A[i].sum() == 0.0:
            A[i, i] = 1.0
    space = StubSpace(
        ids=tuple(ids),
        protected_states=tuple(index[s] for s in protected),
        outcome_states=tuple(index[s] for s in outcomes),
        targets_map={t: tuple(index[s] for s in states)
                     for t, states in (targets or {}).items()},
    )
    return StubChain(A=A, space=space)


def enumerate_reach(A, source, target, _seen=None):
    """Path-enumeration reachability oracle for acyclic chains (plus
    absorbing self-loops): sums the probability over all simple paths."""
    if source == target:
        return 1.0
    total = 0.0
    for q in np.nonzero(A[source] > 0)[0]:
        if q == source:
            continue  # absorbing self-loop, never leaves
        total += A[source, q] * enumerate_reach(A, int(q), target)
    return total


def random_acyclic_chain(rng, max_states=8):
    """A random layered acyclic chain whose last two states absorb."""
    m = rng.integers(4, max_states + 1)
    A = np.zeros((m, m))
    for p in range(m - 2):
        # successors strictly downstream, biased toward nearby states
        succ = np.arange(p + 1, m)
        k = rng.integers(1, min(3, len(succ)) + 1)
        chosen = rng.choice(succ, size=k, replace=False)
        w = rng.random(k) + 0.05
        A[p, chosen] = w / w.sum()
    A[m - 2, m - 2] = 1.0
    A[m - 1, m - 1] = 1.0
    return A


# --------------------------------------------------------------------------
# ground-truth chain for the learning-accuracy acceptance tests
# --------------------------------------------------------------------------

#                 Start   g0     g1     h      Y      N
TRUTH_IDS = ("Start", "g0", "g1", "h", "Y", "N")
TRUTH_A = np.array([
    [0.0, 0.9, 0.1, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.95, 0.0, 0.05],
    [0.0, 0.0, 0.0, 0.98, 0.0, 0.02],
    [0.0, 0.0, 0.0, 0.0, 0.9, 0.1],
    [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
])
TRUTH_SPACE = StubSpace(ids=TRUTH_IDS, protected_states=(1, 2),
                        outcome_states=(4, 5))
TRUTH_MAX_LEN = 4


def chain_trace_source(A, seed, max_len):
    """Vectorized random-walk sampler over a known chain, absorbing rows
    padding the tail. Compatible with learn_from_source."""
    m = A.shape[0]
    rng = np.random.default_rng(seed)

    def source(n, start):
        cur = np.zeros(n, dtype=np.int32)
        cols = [cur]
        for _ in range(max_len - 1):
            nxt = np.empty(n, dtype=np.int32)
            for s in np.unique(cur):
                mask = cur == s
                nxt[mask] = rng.choice(m, size=int(mask.sum()), p=A[s])
            cols.append(nxt)
            cur = nxt
        return np.column_stack(cols)

    return source


def minimal_state_space(features, protected="g", labels=("0", "1")):
    return build_state_space(list(features), protected, [], [], {},
                             list(labels))
