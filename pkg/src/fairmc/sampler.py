"""IID input generation for trace sampling.

Sampling is uniform per feature by default; explicit categorical weights can
override individual features. Samples are pure functions of (seed, index):
each fixed-size block of indices is generated from its own derived seed, so a
batch partitioned across workers by block produces exactly the same multiset
as a serial run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import FeatureSpec

BLOCK = 256  # samples per derived-seed block


@dataclass(frozen=True)
class InputDistribution:
    """Per-feature sampling distribution with a master seed.

    ``weights`` maps a categorical feature name to explicit value
    probabilities; features without an entry are sampled uniformly.
    ``seq_len`` switches to sequence sampling (for recurrent networks):
    each sample is then a (seq_len, width) array of step vectors.
    """

    seed: int = 0
    weights: dict[str, tuple[float, ...]] = field(default_factory=dict)
    seq_len: int | None = None

    def validate(self, spec: list[FeatureSpec]) -> None:
        by_name = {f.name: f for f in spec}
        for name, w in self.weights.items():
            if name not in by_name:
                raise ConfigError(f"weights given for unknown feature {name!r}")
            feat = by_name[name]
            if feat.kind != "categorical":
                raise ConfigError(f"weights only apply to categorical features ({name!r})")
            w = np.asarray(w, dtype=np.float64)
            if len(w) != feat.cardinality:
                raise ConfigError(
                    f"feature {name!r}: {len(w)} weights for cardinality {feat.cardinality}"
                )
            if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
                raise ConfigError(f"feature {name!r}: weights must be >= 0 and sum to 1")
        if self.seq_len is not None and self.seq_len < 1:
            raise ConfigError("seq_len must be >= 1")


def zero_weight_values(dist: InputDistribution, feat: FeatureSpec) -> set[int]:
    """Categorical values this distribution can never produce."""
    w = dist.weights.get(feat.name)
    if w is None or feat.kind != "categorical":
        return set()
    return {v for v, p in enumerate(w) if p == 0.0}


def _block_rng(seed: int, block_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block_index,)))


def _generate_block(dist: InputDistribution, spec: list[FeatureSpec],
                    block_index: int) -> np.ndarray:
    rng = _block_rng(dist.seed, block_index)
    steps = 1 if dist.seq_len is None else dist.seq_len
    out = np.empty((BLOCK, steps, len(spec)), dtype=np.float64)
    # fixed feature order keeps the stream independent of caller batching
    for j, feat in enumerate(sorted(spec, key=lambda f: f.index)):
        if feat.kind == "categorical":
            w = dist.weights.get(feat.name)
            if w is None:
                col = rng.integers(0, feat.cardinality, size=(BLOCK, steps))
            else:
                col = rng.choice(feat.cardinality, p=np.asarray(w), size=(BLOCK, steps))
            out[:, :, j] = col.astype(np.float64)
        else:
            out[:, :, j] = rng.uniform(feat.lo, feat.hi, size=(BLOCK, steps))
    if dist.seq_len is None:
        return out[:, 0, :]
    return out


def sample_batch(dist: InputDistribution, spec: list[FeatureSpec], n: int,
                 start: int = 0) -> np.ndarray:
    """Samples at indices [start, start + n): (n, p) or (n, seq_len, p)."""
    if n < 1:
        raise ConfigError("batch size must be >= 1")
    dist.validate(spec)
    first, last = start // BLOCK, (start + n - 1) // BLOCK
    parts = [_generate_block(dist, spec, b) for b in range(first, last + 1)]
    chunk = np.concatenate(parts, axis=0)
    offset = start - first * BLOCK
    return chunk[offset:offset + n]


def sample_input(dist: InputDistribution, spec: list[FeatureSpec],
                 index: int = 0) -> np.ndarray:
    """The sample at one stream index (deterministic given the seed)."""
    return sample_batch(dist, spec, 1, start=index)[0]
