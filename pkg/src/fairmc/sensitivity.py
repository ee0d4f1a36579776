"""Ranking of features and neurons by their contribution to unfairness.

Each abstract state of a target scores the product of three reachabilities:
how likely it is visited at all, how strongly it leads to the outcome of
interest, and how differently the protected groups reach it (the range of
the group-to-state probabilities, which keeps the score non-negative). A
target's sensitivity is the sum over its states.
"""

from __future__ import annotations

from dataclasses import dataclass

from .checker import reach_vector
from .errors import ConfigError


@dataclass(frozen=True)
class SensitivityRanking:
    """Targets sorted by descending sensitivity; ties break on the id."""

    entries: tuple[tuple[str, float], ...]
    label_state: int

    def as_rows(self) -> list[dict]:
        top = max((s for _, s in self.entries), default=0.0)
        return [
            {"target": t, "sensitivity": s,
             "normalized": (s / top) if top > 0 else 0.0}
            for t, s in self.entries
        ]


def state_sensitivity(dtmc, target: str, label_state: int) -> float:
    """Sensitivity of one target with respect to one outcome state."""
    space = dtmc.space
    states = space.target_states(target)
    if len(space.protected_states) < 2:
        return 0.0
    to_label = reach_vector(dtmc.A, label_state)
    total = 0.0
    for s in states:
        to_state = reach_vector(dtmc.A, s)
        group = [to_state[f] for f in space.protected_states]
        spread = max(group) - min(group)
        total += to_state[space.start] * to_label[s] * spread
    return total


def rank_targets(dtmc, targets, label_state: int) -> SensitivityRanking:
    """Score every target and sort descending, target id breaking ties."""
    targets = list(targets)
    if not targets:
        raise ConfigError("no targets to rank")
    scored = [(t, state_sensitivity(dtmc, t, label_state)) for t in targets]
    scored.sort(key=lambda e: (-e[1], e[0]))
    return SensitivityRanking(entries=tuple(scored), label_state=label_state)
