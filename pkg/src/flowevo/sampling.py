"""Parent selection over the history buffer.

Selection mixes a uniform term with a temperature-scaled softmax over
scores: P(i) = lambda * 1/t + (1 - lambda) * softmax(alpha * score)_i.
The softmax is computed with max-score subtraction, which leaves the
distribution unchanged but keeps the exponentials finite.
"""

from __future__ import annotations

import numpy as np


def mixed_probabilities(scores, lam: float, alpha: float) -> np.ndarray:
    """Exact mixed distribution over history indexes."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("empty history")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    shifted = alpha * scores
    shifted = shifted - shifted.max()
    soft = np.exp(shifted)
    soft /= soft.sum()
    probs = lam / scores.size + (1.0 - lam) * soft
    return probs / probs.sum()


def sample_parent(history, cfg, rng) -> int:
    """Draw one history index from the mixed distribution."""
    probs = mixed_probabilities([entry.score for entry in history], cfg.lambda_, cfg.alpha)
    return int(rng.choice(len(probs), p=probs))


def sample_parent_indices(history, cfg, rng, size: int) -> np.ndarray:
    """Vectorized draws from the same distribution ``sample_parent`` uses."""
    probs = mixed_probabilities([entry.score for entry in history], cfg.lambda_, cfg.alpha)
    return rng.choice(len(probs), size=size, p=probs)


def sample_parent_pair(history, cfg, rng) -> tuple[int, int]:
    """Two distinct indexes; the second comes from the duplicate-rejection
    conditional P(j | j != first) = p_j / (1 - p_first), computed exactly
    rather than by resampling so an underflowed softmax cannot stall the
    draw. Falls back to uniform over the others if every other probability
    underflowed to zero."""
    if len(history) < 2:
        raise ValueError("parent pair sampling needs at least two history entries")
    probs = mixed_probabilities([entry.score for entry in history], cfg.lambda_, cfg.alpha)
    first = int(rng.choice(len(probs), p=probs))
    conditional = probs.copy()
    conditional[first] = 0.0
    total = conditional.sum()
    if total <= 0.0:
        conditional = np.ones(len(probs))
        conditional[first] = 0.0
        total = conditional.sum()
    second = int(rng.choice(len(probs), p=conditional / total))
    return first, second
