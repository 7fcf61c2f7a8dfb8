"""Content-keyed pseudo-randomness.

Every stochastic choice is derived by hashing the values that are allowed to
influence it (structured input, seed, model version, a domain tag) and reading
the digest as a uniform integer. A draw therefore never depends on call order
or on how many draws happened before it, which is what makes whole-trace
replay possible. The builtin ``hash`` is never used: it is salted per process.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any

_SEP = b"\x1f"
_FULL = float(1 << 64)


def canonical(value: Any) -> str:
    """Stable string form of a structured value, safe to hash."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), default=str)


def digest(*parts: Any) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part if isinstance(part, bytes) else canonical(part).encode("utf-8"))
        h.update(_SEP)
    return h.digest()


def u64(*parts: Any) -> int:
    return int.from_bytes(digest(*parts)[:8], "big")


def uniform(*parts: Any) -> float:
    """Uniform float in [0, 1) keyed by the given parts."""
    return u64(*parts) / _FULL


def weighted_choice(weights: dict[str, float], *parts: Any) -> str:
    """Pick a key from a weight table, deterministically for the given parts."""
    if not weights:
        raise ValueError("empty weight table")
    total = float(sum(weights.values()))
    point = uniform("choice", *parts) * total
    acc = 0.0
    keys = sorted(weights)
    for key in keys:
        acc += weights[key]
        if point < acc:
            return key
    return keys[-1]


def version_rank(tag: str) -> int:
    """Rank a model-version tag on a total order.

    The last embedded integer wins ("v2" -> 2, "2026-q2" -> 2). Tags with no
    digits get a small stable rank derived from their hash, so any tag is
    usable, but ladder distances between such tags are arbitrary.
    """
    groups = re.findall(r"\d+", tag)
    if groups:
        return int(groups[-1])
    return (u64("version-rank", tag) % 97) + 1


def interp_step(input_key: str, rank: int, divergence_rate: float) -> int:
    """Version-ladder step that governs an input's interpretation.

    Walking up from version rank 1 to ``rank``, each step independently
    re-randomizes the interpretation of this input with probability
    ``divergence_rate``. The latest step that fired wins; 0 means the base
    interpretation. Adjacent ranks therefore diverge on exactly ~rate of the
    input space, and the ladder is consistent across any set of versions.
    """
    if not 0.0 <= divergence_rate <= 1.0:
        raise ValueError(f"divergence rate out of range: {divergence_rate}")
    # Bounded walk: ranks are tiny in practice ("v1", "v2", ...).
    for step in range(min(rank, 10_000), 0, -1):
        if uniform("vstep", input_key, step) < divergence_rate:
            return step
    return 0
