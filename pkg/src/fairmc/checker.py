"""Probabilistic reachability on a learned chain and the fairness verdict.

Reaching a target state reduces to a linear system over the states that can
still reach it: x_p = sum_q A(p, q) x_q with x_target = 1 and x = 0 on
states with no path. The system is solved by Gaussian elimination with
partial pivoting; a damped fixed-point iteration is the fallback when the
elimination result is unusable (near-singular system).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SolverError

ITER_TOL = 1e-12
ITER_MAX_SWEEPS = 10**6
ITER_DAMPING = 0.9


@dataclass(frozen=True)
class ReachQuery:
    source: int
    target: int


def _states_reaching(A: np.ndarray, target: int) -> np.ndarray:
    """Mask of states with any path to the target (reverse BFS over edges)."""
    m = A.shape[0]
    can = np.zeros(m, dtype=bool)
    can[target] = True
    queue = deque([target])
    incoming = A.T > 0.0
    while queue:
        q = queue.popleft()
        for p in np.nonzero(incoming[q])[0]:
            if not can[p]:
                can[p] = True
                queue.append(p)
    return can


def _solve_iterative(Auu: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.zeros_like(b)
    for _ in range(ITER_MAX_SWEEPS):
        y_new = ITER_DAMPING * (Auu @ y + b) + (1.0 - ITER_DAMPING) * y
        if np.max(np.abs(y_new - y)) <= ITER_TOL:
            return y_new
        y = y_new
    residual = float(np.max(np.abs((np.eye(len(b)) - Auu) @ y - b)))
    raise SolverError(
        f"reachability iteration did not converge in {ITER_MAX_SWEEPS} sweeps "
        f"(residual {residual:.3e})"
    )


def reach_vector(A: np.ndarray, target: int) -> np.ndarray:
    """Probability of eventually reaching the target, from every state."""
    m = A.shape[0]
    if not 0 <= target < m:
        raise ConfigError(f"target state {target} outside the chain")
    x = np.zeros(m)
    x[target] = 1.0
    can = _states_reaching(A, target)
    unknown = np.nonzero(can & (np.arange(m) != target))[0]
    if len(unknown) == 0:
        return x
    Auu = A[np.ix_(unknown, unknown)]
    b = A[unknown, target]
    system = np.eye(len(unknown)) - Auu
    try:
        y = np.linalg.solve(system, b)
        residual = float(np.max(np.abs(system @ y - b)))
        if not np.all(np.isfinite(y)) or residual > 1e-9:
            y = _solve_iterative(Auu, b)
    except np.linalg.LinAlgError:
        y = _solve_iterative(Auu, b)
    x[unknown] = np.clip(y, 0.0, 1.0)
    return x


def reach_prob(dtmc, query: ReachQuery) -> float:
    """Probability of eventually reaching query.target from query.source."""
    m = dtmc.A.shape[0]
    if not 0 <= query.source < m or not 0 <= query.target < m:
        raise ConfigError(f"query {query} outside the {m}-state chain")
    return float(reach_vector(dtmc.A, query.target)[query.source])


def group_outcome_probs(dtmc, label_state: int) -> dict[str, float]:
    """Reach probability of one outcome state from each protected-value state."""
    space = dtmc.space
    if label_state not in space.outcome_states:
        raise ConfigError(f"state {label_state} is not an outcome state")
    vec = reach_vector(dtmc.A, label_state)
    return {space.ids[s]: float(vec[s]) for s in space.protected_states}


@dataclass
class VerificationReport:
    """Group-conditional probabilities and the fairness verdict."""

    group_probs: dict[str, float]
    max_diff: float
    xi: float
    verdict: str  # "PASS" | "FAIL"
    pac: dict | None = None  # mu_eps, mu_delta, eps, delta
    traces_used: int = 0
    states: int = 0
    non_pac: bool = False
    starved_states: list[str] = field(default_factory=list)
    dtmc_ref: object = None


def fairness_verdict(group_probs: dict[str, float], xi: float) -> VerificationReport:
    """Compare the largest pairwise probability difference against xi."""
    if not 0 < xi < 1:
        raise ConfigError("xi must lie in (0, 1)")
    if len(group_probs) < 2:
        raise ConfigError("fairness needs at least 2 protected groups")
    values = list(group_probs.values())
    max_diff = float(max(values) - min(values))
    return VerificationReport(
        group_probs=dict(group_probs),
        max_diff=max_diff,
        xi=xi,
        verdict="PASS" if max_diff <= xi else "FAIL",
    )
