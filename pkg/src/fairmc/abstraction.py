"""Abstract state space over network traces.

A state space has a fixed tier layout. Feed-forward traces emit one state per
tier: Start, the protected value, each selected feature (ascending index),
each selected neuron (layer then index), and finally the prediction.
Recurrent traces emit Start, the protected value, then the selected cell's
cluster once per timestep, then the prediction.

Continuous values are mapped to states by equal-width binning or k-means
clustering; out-of-range values clamp to the nearest end bin, since sampling
and repair can push activations outside the range the discretizer saw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateRangeError
from .model import ActivationTrace, FeatureSpec, Network

START = "Start"


@dataclass(frozen=True)
class Discretizer:
    """Maps scalar (or vector) values onto ``k`` contiguous cluster indices."""

    target: str
    method: str  # "bins" | "kmeans"
    k: int
    edges: np.ndarray | None = None  # bins: k-1 strictly increasing cut points
    centroids: np.ndarray | None = None  # kmeans: (k,) or (k, d), sorted
    distortion_history: tuple[float, ...] = ()

    def assign(self, value) -> int:
        """Cluster index for one value; ties go to the lowest index."""
        if self.method == "bins":
            return int(np.searchsorted(self.edges, float(value), side="right"))
        c = self.centroids
        if c.ndim == 1:
            d = np.abs(c - float(value))
        else:
            d = np.sum((c - np.asarray(value, dtype=np.float64)) ** 2, axis=1)
        return int(np.argmin(d))

    def assign_many(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.method == "bins":
            return np.searchsorted(self.edges, values, side="right").astype(np.int64)
        c = self.centroids
        if c.ndim == 1:
            d = np.abs(values[:, None] - c[None, :])
        else:
            d = np.sum((values[:, None, :] - c[None, :, :]) ** 2, axis=2)
        return np.argmin(d, axis=1)


def bin_fit(values, k: int, target: str = "") -> Discretizer:
    """Equal-width bins over [min, max] of the observed values."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if k < 1:
        raise ConfigError("bin count must be >= 1")
    if values.size == 0:
        raise ConfigError("cannot fit bins on no values")
    lo, hi = float(values.min()), float(values.max())
    if k == 1:
        return Discretizer(target=target, method="bins", k=1, edges=np.zeros(0))
    if lo == hi:
        raise DegenerateRangeError(
            f"all {values.size} values equal {lo}; cannot split into {k} bins"
        )
    edges = lo + (hi - lo) * np.arange(1, k) / k
    return Discretizer(target=target, method="bins", k=k, edges=edges)


def kmeans_fit(values, k: int, seed: int = 0, target: str = "") -> Discretizer:
    """Lloyd's iterations to a fixed point (at most 100 rounds).

    Initial centroids are a seeded draw of k distinct points; the returned
    centroids are sorted by first coordinate so assignments are reproducible.
    """
    pts = np.asarray(values, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    distinct = np.unique(pts, axis=0)
    if k > len(distinct):
        raise ConfigError(f"k={k} exceeds the {len(distinct)} distinct points")
    rng = np.random.default_rng(seed)
    centroids = distinct[rng.choice(len(distinct), size=k, replace=False)]
    history: list[float] = []
    assign = None
    for _ in range(100):
        d = np.sum((pts[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(pts)), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = pts[assign == j]
            if len(members):  # empty clusters keep their previous centroid
                centroids[j] = members.mean(axis=0)
    order = np.argsort(centroids[:, 0], kind="stable")
    centroids = centroids[order]
    flat = centroids[:, 0] if centroids.shape[1] == 1 else centroids
    return Discretizer(target=target, method="kmeans", k=k, centroids=flat,
                       distortion_history=tuple(history))


# --------------------------------------------------------------------------
# target identifiers: "feature:<index>", "neuron:<layer>:<index>", and
# "layer:<layer>" for whole-vector clustering of a layer (or the recurrent
# hidden state, which is layer 0).
# --------------------------------------------------------------------------


def feature_target(index: int) -> str:
    return f"feature:{index}"


def neuron_target(layer: int, index: int) -> str:
    return f"neuron:{layer}:{index}"


def layer_target(layer: int) -> str:
    return f"layer:{layer}"


def parse_target(target: str) -> tuple[str, int, int]:
    """-> (kind, a, b): ("feature", idx, -1) | ("neuron", layer, idx) |
    ("layer", layer, -1)."""
    parts = target.split(":")
    try:
        if parts[0] == "feature" and len(parts) == 2:
            return "feature", int(parts[1]), -1
        if parts[0] == "neuron" and len(parts) == 3:
            return "neuron", int(parts[1]), int(parts[2])
        if parts[0] == "layer" and len(parts) == 2:
            return "layer", int(parts[1]), -1
    except ValueError:
        pass
    raise ConfigError(f"malformed target {target!r}")


@dataclass(frozen=True)
class Tier:
    """One emission slot in the trace layout."""

    target: str
    discretizer: Discretizer
    state_ids: tuple[int, ...]


@dataclass(frozen=True)
class StateSpace:
    """The abstract states and the tier layout that emits them."""

    ids: tuple[str, ...]
    protected_feature: FeatureSpec
    protected_states: tuple[int, ...]  # one per protected value, in value order
    tiers: tuple[Tier, ...]  # mid tiers, in emission order (empty if none)
    outcome_states: tuple[int, ...]  # one per label, in label order
    recurrent: bool = False

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ConfigError("state ids must be distinct")
        if len(self.protected_states) < 2:
            raise ConfigError("need at least 2 protected-value states")
        if len(self.outcome_states) < 2:
            raise ConfigError("need at least 2 outcome states")

    @property
    def m(self) -> int:
        return len(self.ids)

    @property
    def start(self) -> int:
        return 0

    def target_states(self, target: str) -> tuple[int, ...]:
        for tier in self.tiers:
            if tier.target == target:
                return tier.state_ids
        raise KeyError(f"target {target!r} has no states in this space")

    def targets(self) -> list[str]:
        return [t.target for t in self.tiers]

    def trace_length(self, seq_len: int | None = None) -> int:
        if self.recurrent:
            if seq_len is None:
                raise ConfigError("recurrent trace length needs seq_len")
            return 3 + seq_len
        return 3 + len(self.tiers)

    def state_tier_index(self) -> np.ndarray:
        """Tier number of each state (feed-forward layered-graph checks)."""
        tier_of = np.zeros(self.m, dtype=np.int64)
        for s in self.protected_states:
            tier_of[s] = 1
        for t, tier in enumerate(self.tiers):
            for s in tier.state_ids:
                tier_of[s] = 2 + t
        for s in self.outcome_states:
            tier_of[s] = 2 + len(self.tiers)
        return tier_of


def build_state_space(
    features: list[FeatureSpec],
    protected: str,
    selected_features: list[int],
    selected_neurons: list[tuple[int, int]],
    discretizers: dict[str, Discretizer],
    labels: list[str],
    recurrent: bool = False,
    layer_targets: list[int] = (),
) -> StateSpace:
    """Assemble the state set: Start, protected values, selected feature bins,
    selected neuron clusters, and one state per prediction label."""
    by_name = {f.name: f for f in features}
    if protected not in by_name:
        raise ConfigError(f"protected feature {protected!r} not in the feature spec")
    pfeat = by_name[protected]
    if pfeat.kind != "categorical":
        raise ConfigError(f"protected feature {protected!r} must be categorical")

    ids: list[str] = [START]
    protected_states = []
    for v in range(pfeat.cardinality):
        protected_states.append(len(ids))
        ids.append(f"{pfeat.name}={v}")

    by_index = {f.index: f for f in features}
    targets: list[str] = []
    for idx in sorted(selected_features):
        if idx == pfeat.index:
            raise ConfigError("the protected feature cannot also be a mid-tier target")
        if idx not in by_index:
            raise ConfigError(f"selected feature index {idx} not in the feature spec")
        targets.append(feature_target(idx))
    for layer, idx in sorted(selected_neurons):
        targets.append(neuron_target(layer, idx))
    for layer in sorted(layer_targets):
        targets.append(layer_target(layer))

    if recurrent and len(targets) > 1:
        raise ConfigError("recurrent abstraction supports a single cell target")
    if recurrent and any(parse_target(t)[0] == "feature" for t in targets):
        raise ConfigError("recurrent abstraction cannot target input features")

    tiers: list[Tier] = []
    for target in targets:
        disc = discretizers.get(target)
        if disc is None:
            raise ConfigError(f"no discretizer fitted for target {target!r}")
        kind, a, b = parse_target(target)
        if kind == "feature":
            feat = by_index[a]
            name = f"{feat.name}:bin" if disc.method == "bins" else f"{feat.name}:c"
        elif kind == "neuron":
            name = f"L{a}N{b}:c"
        else:
            name = f"L{a}:c"
        state_ids = []
        for j in range(disc.k):
            state_ids.append(len(ids))
            ids.append(f"{name}{j}")
        tiers.append(Tier(target=target, discretizer=disc, state_ids=tuple(state_ids)))

    outcome_states = []
    for label in labels:
        outcome_states.append(len(ids))
        ids.append(f"out:{label}")

    return StateSpace(
        ids=tuple(ids),
        protected_feature=pfeat,
        protected_states=tuple(protected_states),
        tiers=tuple(tiers),
        outcome_states=tuple(outcome_states),
        recurrent=recurrent,
    )


def abstract_trace(trace: ActivationTrace, space: StateSpace) -> list[int]:
    """Abstract one recorded evaluation into a state-id sequence."""
    pfeat = space.protected_feature
    x = trace.input if not space.recurrent else trace.input[0]
    value = int(round(float(x[pfeat.index])))
    if not 0 <= value < len(space.protected_states):
        raise ValueError(f"protected value {value} outside the state space")
    out: list[int] = [space.start, space.protected_states[value]]
    if space.recurrent:
        if space.tiers:
            tier = space.tiers[0]
            kind, a, b = parse_target(tier.target)
            for _, h in trace.per_step_activations:
                v = h if kind == "layer" else h[b]
                out.append(tier.state_ids[tier.discretizer.assign(v)])
    else:
        for tier in space.tiers:
            kind, a, b = parse_target(tier.target)
            if kind == "feature":
                v = float(trace.input[a])
            elif kind == "neuron":
                v = float(trace.per_step_activations[a][1][b])
            else:
                v = trace.per_step_activations[a][1]
            out.append(tier.state_ids[tier.discretizer.assign(v)])
    out.append(space.outcome_states[trace.label])
    return out


# --------------------------------------------------------------------------
# Flattened plan consumed by the batch trace kernels.
# --------------------------------------------------------------------------

_METHOD_EDGES = 0
_METHOD_CENTROIDS_1D = 1
_METHOD_CENTROIDS_VEC = 2


@dataclass(frozen=True)
class TracePlan:
    """Array form of a feed-forward state space, for the batch kernels."""

    prot_index: int
    prot_base: int
    src_kind: np.ndarray  # int8, 0=input 1=hidden
    src_layer: np.ndarray  # int32, -1 for input sources
    src_index: np.ndarray  # int32, coordinate (unused for vector method)
    method: np.ndarray  # int8
    cut_offset: np.ndarray  # int32 into cuts
    cut_len: np.ndarray  # int32
    base: np.ndarray  # int32 state-id base per tier
    cuts: np.ndarray  # float64, edges / centroids / row-major centroid matrix
    vec_dim: np.ndarray  # int32, centroid dimension for the vector method
    label_base: int
    single_output: bool
    length: int

    @property
    def n_tiers(self) -> int:
        return len(self.base)


def build_trace_plan(space: StateSpace, net: Network) -> TracePlan:
    src_kind, src_layer, src_index = [], [], []
    method, cut_offset, cut_len, base, vec_dim = [], [], [], [], []
    cuts: list[np.ndarray] = []
    offset = 0
    for tier in space.tiers:
        kind, a, b = parse_target(tier.target)
        disc = tier.discretizer
        if disc.method == "bins":
            block, meth, dim = disc.edges, _METHOD_EDGES, 1
        elif disc.centroids.ndim == 1:
            block, meth, dim = disc.centroids, _METHOD_CENTROIDS_1D, 1
        else:
            block, meth, dim = disc.centroids.ravel(), _METHOD_CENTROIDS_VEC, \
                disc.centroids.shape[1]
        src_kind.append(0 if kind == "feature" else 1)
        src_layer.append(-1 if kind == "feature" else a)
        src_index.append(a if kind == "feature" else b)
        method.append(meth)
        cut_offset.append(offset)
        cut_len.append(len(block))
        vec_dim.append(dim)
        base.append(tier.state_ids[0])
        cuts.append(np.asarray(block, dtype=np.float64))
        offset += len(block)
    return TracePlan(
        prot_index=space.protected_feature.index,
        prot_base=space.protected_states[0],
        src_kind=np.asarray(src_kind, dtype=np.int8),
        src_layer=np.asarray(src_layer, dtype=np.int32),
        src_index=np.asarray(src_index, dtype=np.int32),
        method=np.asarray(method, dtype=np.int8),
        cut_offset=np.asarray(cut_offset, dtype=np.int32),
        cut_len=np.asarray(cut_len, dtype=np.int32),
        base=np.asarray(base, dtype=np.int32),
        cuts=np.concatenate(cuts) if cuts else np.zeros(0),
        vec_dim=np.asarray(vec_dim, dtype=np.int32),
        label_base=space.outcome_states[0],
        single_output=net.single_output,
        length=-1 if space.recurrent else space.trace_length(),
    )
