"""Deterministic random-number streams keyed by a seed and a structured path.

Every stochastic routine in the toolkit draws from its own stream derived
from ``(master_seed, *path)``, where path components are small integers or
descriptive strings. Streams with different paths are statistically
independent, and the same path always reproduces the same stream, so
replications can run in any order (or in parallel) without changing
results.
"""

import hashlib

import numpy as np

__all__ = ["seed_sequence", "stream"]


def _component_to_int(component):
    if isinstance(component, (bool, np.bool_)):
        return int(component)
    if isinstance(component, (int, np.integer)):
        value = int(component)
        if value < 0:
            raise ValueError(f"seed path components must be nonnegative, got {value}")
        return value
    if isinstance(component, str):
        digest = hashlib.sha256(component.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"unsupported seed path component type: {type(component).__name__}")


def seed_sequence(seed, *path) -> np.random.SeedSequence:
    """Build the SeedSequence for ``(seed, *path)``."""
    entropy = [_component_to_int(seed)] + [_component_to_int(c) for c in path]
    return np.random.SeedSequence(entropy)


def stream(seed, *path) -> np.random.Generator:
    """Return the Generator for ``(seed, *path)``."""
    return np.random.default_rng(seed_sequence(seed, *path))
