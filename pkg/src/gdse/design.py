"""Design-matrix sampling: i.i.d. entries with mean 0 and variance 1.

Built-in entry laws are standard Gaussian, Rademacher (+-1 with equal
probability, third moment 0) and the centered standard exponential
Exp(1) - 1 (third moment 2).  Custom laws can be registered as long as
they declare mean 0 and variance 1; the declared third moment is carried
as metadata for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError

# Odd 64-bit multiplier used to derive independent replication seeds from a
# base seed without sharing generator state across replications.
SEED_SPLIT_MULTIPLIER = 0x9E3779B97F4A7C15
_U64 = 1 << 64

# Dense-storage cap on m*n: fail fast on accidentally huge runs.
MAX_ENTRIES = 100_000_000


def replication_seed(base_seed: int, replication: int) -> int:
    """Seed for replication r: base_seed XOR (r * SEED_SPLIT_MULTIPLIER) mod 2^64."""
    return (int(base_seed) ^ ((int(replication) * SEED_SPLIT_MULTIPLIER) % _U64)) % _U64


@dataclass(frozen=True)
class DesignKind:
    """An i.i.d. scalar entry law with population mean 0 and variance 1.

    ``sampler(rng, shape)`` must return a float array of the given shape.
    ``third_moment`` is the declared E X^3 (exact for built-ins, declared
    for custom kinds; it is reported, not enforced numerically).
    """

    name: str
    sampler: Callable[[np.random.Generator, tuple], np.ndarray]
    third_moment: float

    def __repr__(self) -> str:  # keep reprs short in logs/manifests
        return f"DesignKind({self.name!r})"


def _sample_gaussian(rng, shape):
    return rng.standard_normal(shape)


def _sample_rademacher(rng, shape):
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


def _sample_std_exponential(rng, shape):
    return rng.standard_exponential(shape) - 1.0


GAUSSIAN = DesignKind("gaussian", _sample_gaussian, 0.0)
RADEMACHER = DesignKind("rademacher", _sample_rademacher, 0.0)
STD_EXPONENTIAL = DesignKind("std_exponential", _sample_std_exponential, 2.0)

BUILTIN_KINDS = {k.name: k for k in (GAUSSIAN, RADEMACHER, STD_EXPONENTIAL)}

_custom_registry: dict[str, DesignKind] = {}


def custom_kind(name, sampler, third_moment, mean=0.0, variance=1.0,
                register=True) -> DesignKind:
    """Create (and by default register) a custom entry law.

    The declared (mean, variance) must be exactly (0, 1); anything else is
    rejected because downstream theory assumes standardized entries.
    """
    if (mean, variance) != (0.0, 1.0):
        raise ConfigError(
            f"custom design kind {name!r} must declare mean 0 and variance 1, "
            f"got ({mean}, {variance})"
        )
    kind = DesignKind(str(name), sampler, float(third_moment))
    if register:
        _custom_registry[kind.name] = kind
    return kind


def kind_from_name(name: str) -> DesignKind:
    """Resolve a config-file kind name: built-ins or ``custom:<name>``."""
    name = name.strip()
    if name in BUILTIN_KINDS:
        return BUILTIN_KINDS[name]
    if name.startswith("custom:"):
        key = name.split(":", 1)[1]
        if key in _custom_registry:
            return _custom_registry[key]
        raise ConfigError(f"custom design kind {key!r} is not registered")
    raise ConfigError(
        f"unknown design kind {name!r}; expected one of "
        f"{sorted(BUILTIN_KINDS)} or custom:<name>"
    )


@dataclass(frozen=True)
class DesignMatrix:
    """A realized m x n design with its generating metadata.

    The entry array is frozen (non-writeable) so instances can be shared
    across threads.  ``phi`` is the aspect ratio m/n.
    """

    entries: np.ndarray
    kind: DesignKind
    seed: int

    def __post_init__(self):
        if not isinstance(self.entries, np.ndarray) or self.entries.ndim != 2:
            raise ConfigError("design entries must be a 2-D array")

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def phi(self) -> float:
        return self.m / self.n


def sample_design(kind: DesignKind, m: int, n: int, seed: int) -> DesignMatrix:
    """Draw an m x n matrix of i.i.d. entries from ``kind``; deterministic in seed."""
    m, n = int(m), int(n)
    if m < 1 or n < 1:
        raise ConfigError(f"design dimensions must be >= 1, got m={m}, n={n}")
    if m * n > MAX_ENTRIES:
        raise ConfigError(
            f"design with {m}*{n} = {m * n} entries exceeds the dense-storage "
            f"cap {MAX_ENTRIES}"
        )
    rng = np.random.default_rng(int(seed) % _U64)
    entries = np.ascontiguousarray(kind.sampler(rng, (m, n)), dtype=float)
    entries.setflags(write=False)
    return DesignMatrix(entries=entries, kind=kind, seed=int(seed) % _U64)


def empirical_moments(X, order: int) -> float:
    """Pooled empirical moment of all entries about the population mean 0.

    Entries are standardized by construction (mean 0), so the pooled moment
    of order q is mean(X**q) over all m*n entries; order 2 is exactly 1 for
    Rademacher entries, order 1 is the plain sample mean.
    """
    if order not in (1, 2, 3, 4):
        raise ConfigError(f"moment order must be in {{1,2,3,4}}, got {order}")
    entries = X.entries if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    if order == 1:
        return float(entries.mean())
    return float(np.mean(entries ** order))
