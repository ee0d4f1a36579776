"""Post-processing fairness repair by particle swarm search over weights.

The weights feeding the most sensitive targets become the search space. The
swarm minimizes the empirical group probability difference plus a weighted
accuracy penalty, within per-weight bounds of zero to twice the original
magnitude. Search stops as soon as the candidate satisfies the fairness
threshold, after 10 consecutive iterations without improvement, or at the
iteration cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import sampler as _sampler
from .abstraction import parse_target
from .errors import ConfigError, EvaluationError
from .model import Network, clone_network, eval_accuracy, forward_batch, predict_labels

NEAR_ZERO = 1e-6
NEAR_ZERO_INTERVAL = (-0.1, 0.1)


def fitness(prob_diff: float, accuracy: float, alpha: float) -> float:
    """Repair objective: the group probability gap plus the accuracy penalty."""
    if not 0 <= prob_diff <= 1 or not 0 <= accuracy <= 1:
        raise ConfigError("prob_diff and accuracy must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    return prob_diff + alpha * (1.0 - accuracy)


def prob_diff_on(net: Network, X: np.ndarray, groups: np.ndarray,
                 n_groups: int, label: int) -> float:
    """Max pairwise difference of P(prediction = label | group) on a fixed set."""
    preds = predict_labels(net, forward_batch(net, X))
    rates = []
    for v in range(n_groups):
        mask = groups == v
        if not np.any(mask):
            raise EvaluationError(
                f"protected value {v} has no samples; increase n_eval"
            )
        rates.append(float(np.mean(preds[mask] == label)))
    return max(rates) - min(rates)


def estimate_prob_diff(net: Network, dist: _sampler.InputDistribution, spec,
                       label: int, n_eval: int, seed: int) -> float:
    """Sample a fixed evaluation set and measure the group probability gap."""
    if n_eval < 1:
        raise ConfigError("n_eval must be >= 1")
    dist = replace(dist, seed=seed)
    spec = list(spec)
    X = _sampler.sample_batch(dist, spec, n_eval)
    prot = [f for f in spec if f.protected]
    if not prot:
        raise ConfigError("no protected feature in the spec")
    pfeat = prot[0]
    first = X if X.ndim == 2 else X[:, 0, :]
    groups = first[:, pfeat.index].astype(np.int64)
    return prob_diff_on(net, X, groups, pfeat.cardinality, label)


# --------------------------------------------------------------------------
# search space over weight coordinates
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightAddress:
    part: str  # "w" | "b" | "cw_in" | "cw_h" | "cb"
    layer: int
    row: int
    col: int = -1


def read_weight(net: Network, a: WeightAddress) -> float:
    if a.part == "w":
        return float(net.layers[a.layer].weights[a.row, a.col])
    if a.part == "b":
        return float(net.layers[a.layer].bias[a.row])
    if a.part == "cw_in":
        return float(net.cell.input_weights[a.row, a.col])
    if a.part == "cw_h":
        return float(net.cell.hidden_weights[a.row, a.col])
    return float(net.cell.bias[a.row])


def _write_weight(net: Network, a: WeightAddress, value: float) -> None:
    if a.part == "w":
        net.layers[a.layer].weights[a.row, a.col] = value
    elif a.part == "b":
        net.layers[a.layer].bias[a.row] = value
    elif a.part == "cw_in":
        net.cell.input_weights[a.row, a.col] = value
    elif a.part == "cw_h":
        net.cell.hidden_weights[a.row, a.col] = value
    else:
        net.cell.bias[a.row] = value


def weight_bounds(w: float) -> tuple[float, float]:
    """Search interval: zero to twice the original, by magnitude.

    Near-zero originals get a small additive interval instead, since the
    multiplicative one collapses to a point.
    """
    if abs(w) < NEAR_ZERO:
        return NEAR_ZERO_INTERVAL
    return (0.0, 2.0 * w) if w > 0 else (2.0 * w, 0.0)


@dataclass(frozen=True)
class SearchVector:
    """Weight coordinates under optimization with originals and bounds."""

    coordinates: tuple[WeightAddress, ...]
    originals: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if len(set(self.coordinates)) != len(self.coordinates):
            raise ConfigError("search coordinates must be distinct")
        if not np.all(self.lo < self.hi):
            raise ConfigError("every bound interval needs lo < hi")
        if np.any(self.originals < self.lo) or np.any(self.originals > self.hi):
            raise ConfigError("original weights must lie within their bounds")

    def __len__(self) -> int:
        return len(self.coordinates)

    def install(self, net: Network, values: np.ndarray) -> Network:
        repaired = clone_network(net)
        for a, v in zip(self.coordinates, values):
            _write_weight(repaired, a, float(v))
        return repaired


def addresses_for_target(net: Network, target: str) -> list[WeightAddress]:
    """Weight coordinates a target controls: a hidden neuron owns its incoming
    row and bias, an input feature its outgoing first-layer column."""
    kind, a, b = parse_target(target)
    if kind == "feature":
        if net.kind == "recurrent":
            return [WeightAddress("cw_in", 0, r, a)
                    for r in range(net.cell.hidden_width)]
        return [WeightAddress("w", 0, r, a) for r in range(net.layers[0].out_width)]
    if kind == "neuron":
        if net.kind == "recurrent":
            h = net.cell.hidden_width
            p = net.cell.input_weights.shape[1]
            return ([WeightAddress("cw_in", 0, b, c) for c in range(p)]
                    + [WeightAddress("cw_h", 0, b, c) for c in range(h)]
                    + [WeightAddress("cb", 0, b)])
        width = net.input_width if a == 0 else net.layers[a - 1].out_width
        return ([WeightAddress("w", a, b, c) for c in range(width)]
                + [WeightAddress("b", a, b)])
    # whole-layer target: every row of the layer
    rows = net.layers[a].out_width if net.kind != "recurrent" else net.cell.hidden_width
    out = []
    for r in range(rows):
        out.extend(addresses_for_target(net, f"neuron:{a}:{r}"))
    return out


def build_search_vector(net: Network, targets) -> SearchVector:
    seen = []
    for t in targets:
        for addr in addresses_for_target(net, t):
            if addr not in seen:
                seen.append(addr)
    originals = np.asarray([read_weight(net, a) for a in seen])
    bounds = np.asarray([weight_bounds(w) for w in originals])
    return SearchVector(coordinates=tuple(seen), originals=originals,
                        lo=bounds[:, 0], hi=bounds[:, 1])


# --------------------------------------------------------------------------
# particle swarm
# --------------------------------------------------------------------------


@dataclass
class Particle:
    x: np.ndarray
    v: np.ndarray
    p_best: np.ndarray
    p_best_fitness: float


@dataclass
class Swarm:
    particles: list[Particle]
    g_best: np.ndarray
    g_best_fitness: float
    omega: float = 0.729
    c1: float = 1.49445
    c2: float = 1.49445
    iteration: int = 0
    stall_count: int = 0


@dataclass(frozen=True)
class RepairSettings:
    n_eval: int = 5000
    swarm_size: int = 20
    max_iterations: int = 100
    stall_limit: int = 10
    omega: float = 0.729
    c1: float = 1.49445
    c2: float = 1.49445
    init_jitter: float = 0.1  # fraction of each bound interval
    seed: int = 0


def init_swarm(search: SearchVector, fitness_fn, rng: np.random.Generator,
               settings: RepairSettings) -> Swarm:
    """First particle sits at the original weights with zero velocity; the
    rest start jittered around them so the swarm is not degenerate."""
    k = len(search)
    particles = []
    for i in range(settings.swarm_size):
        if i == 0:
            x = search.originals.copy()
        else:
            jitter = rng.uniform(-settings.init_jitter, settings.init_jitter, size=k)
            x = np.clip(search.originals + jitter * (search.hi - search.lo),
                        search.lo, search.hi)
        f = fitness_fn(x)
        particles.append(Particle(x=x, v=np.zeros(k), p_best=x.copy(),
                                  p_best_fitness=f))
    best = min(particles, key=lambda p: p.p_best_fitness)
    return Swarm(particles=particles, g_best=best.p_best.copy(),
                 g_best_fitness=best.p_best_fitness, omega=settings.omega,
                 c1=settings.c1, c2=settings.c2)


def pso_step(swarm: Swarm, bounds: tuple[np.ndarray, np.ndarray], fitness_fn,
             rng) -> Swarm:
    """One velocity/location update for every particle, then best tracking."""
    lo, hi = bounds
    improved = False
    for p in swarm.particles:
        k = len(p.x)
        r1 = rng.uniform(0.0, swarm.c1, size=k)
        r2 = rng.uniform(0.0, swarm.c2, size=k)
        p.v = swarm.omega * p.v + r1 * (p.p_best - p.x) + r2 * (swarm.g_best - p.x)
        p.x = np.clip(p.x + p.v, lo, hi)
        f = fitness_fn(p.x)
        if f < p.p_best_fitness:
            p.p_best = p.x.copy()
            p.p_best_fitness = f
        if f < swarm.g_best_fitness:
            swarm.g_best = p.x.copy()
            swarm.g_best_fitness = f
            improved = True
    swarm.iteration += 1
    swarm.stall_count = 0 if improved else swarm.stall_count + 1
    return swarm


@dataclass
class RepairResult:
    before_prob_diff: float
    after_prob_diff: float
    before_accuracy: float
    after_accuracy: float
    iterations: int
    fairness_achieved: bool
    g_best_history: tuple[float, ...] = ()
    search: SearchVector | None = None
    g_best: np.ndarray | None = None


def repair_network(net: Network, ranking, k: int, xi: float, alpha: float,
                   dataset, dist: _sampler.InputDistribution,
                   label: int, settings: RepairSettings = RepairSettings(),
                   on_iteration=None) -> tuple[Network, RepairResult]:
    """Search the top-k ranked targets' weights for a fair configuration.

    Candidate fitness uses a fixed sampled evaluation set for the group gap
    and the given dataset for accuracy; the final verdict on the returned
    network is the caller's responsibility (a fresh learner run).
    """
    entries = list(ranking.entries) if hasattr(ranking, "entries") else list(ranking)
    if not entries:
        raise ConfigError("repair needs a non-empty sensitivity ranking")
    if k < 1:
        raise ConfigError("k must be >= 1")
    targets = [t for t, _ in entries[:k]]

    spec = list(net.input_spec)
    prot = [f for f in spec if f.protected]
    if not prot:
        raise ConfigError("no protected feature in the spec")
    pfeat = prot[0]
    eval_dist = replace(dist, seed=settings.seed)
    X_eval = _sampler.sample_batch(eval_dist, spec, settings.n_eval)
    first = X_eval if X_eval.ndim == 2 else X_eval[:, 0, :]
    groups = first[:, pfeat.index].astype(np.int64)

    def measure(candidate: Network) -> tuple[float, float]:
        diff = prob_diff_on(candidate, X_eval, groups, pfeat.cardinality, label)
        acc = eval_accuracy(candidate, dataset)
        return diff, acc

    before_diff, before_acc = measure(net)
    if before_diff <= xi:
        return net, RepairResult(
            before_prob_diff=before_diff, after_prob_diff=before_diff,
            before_accuracy=before_acc, after_accuracy=before_acc,
            iterations=0, fairness_achieved=True)

    search = build_search_vector(net, targets)
    rng = np.random.default_rng(settings.seed)

    cache: dict[bytes, tuple[float, float, float]] = {}

    def evaluate(x: np.ndarray) -> tuple[float, float, float]:
        key = x.tobytes()
        if key not in cache:
            diff, acc = measure(search.install(net, x))
            cache[key] = (fitness(diff, acc, alpha), diff, acc)
        return cache[key]

    swarm = init_swarm(search, lambda x: evaluate(x)[0], rng, settings)
    history = [swarm.g_best_fitness]
    while swarm.iteration < settings.max_iterations:
        pso_step(swarm, (search.lo, search.hi), lambda x: evaluate(x)[0], rng)
        history.append(swarm.g_best_fitness)
        if on_iteration is not None:
            on_iteration(swarm, search)
        g_diff = evaluate(swarm.g_best)[1]
        if g_diff <= xi:
            break
        if swarm.stall_count >= settings.stall_limit:
            break

    repaired = search.install(net, swarm.g_best)
    after_diff, after_acc = measure(repaired)
    return repaired, RepairResult(
        before_prob_diff=before_diff, after_prob_diff=after_diff,
        before_accuracy=before_acc, after_accuracy=after_acc,
        iterations=swarm.iteration, fairness_achieved=after_diff <= xi,
        g_best_history=tuple(history), search=search, g_best=swarm.g_best.copy())
