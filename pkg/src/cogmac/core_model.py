"""Primary-network environment: channel availability, blocks and random streams.

Channels are indexed from 0 inside the library. The CLI and the result files
use 1-based channel numbers.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

GRID_WEIGHT_TOL = 1e-9


class ModelError(ValueError):
    """Invalid model input (theta, block configuration or prior)."""


class NoOpportunityError(ModelError):
    """Every channel has zero availability probability."""


def _as_probabilities(values: Sequence[float], what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ModelError(f"{what} must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ModelError(f"{what} entries must lie in [0, 1], got {arr.tolist()}")
    return arr


@dataclass(frozen=True)
class ThetaVector:
    """Per-channel probabilities that a channel is free in a slot."""

    values: tuple[float, ...]

    def __init__(self, values: Sequence[float]):
        arr = _as_probabilities(values, "theta")
        object.__setattr__(self, "values", tuple(float(v) for v in arr))

    @property
    def n_channels(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    @property
    def best(self) -> float:
        return max(self.values)

    @property
    def best_channel(self) -> int:
        # lowest index among ties
        return int(np.argmax(self.as_array()))

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i):
        return self.values[i]


@dataclass(frozen=True)
class BlockConfig:
    n_channels: int
    n_slots: int
    bits_per_slot: float = 1.0
    n_users: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_channels < 1:
            raise ModelError("n_channels must be >= 1")
        if self.n_slots < 1:
            raise ModelError("n_slots must be >= 1")
        if self.n_users < 1:
            raise ModelError("n_users must be >= 1")
        if not self.bits_per_slot >= 0:
            raise ModelError("bits_per_slot must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ModelError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ChannelRealization:
    """N x T matrix of availability outcomes (1 = free)."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.ndim != 2:
            raise ModelError("realization must be an N x T matrix")
        if not np.all((z == 0) | (z == 1)):
            raise ModelError("realization entries must be 0 or 1")
        z = z.astype(np.int8)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def n_channels(self) -> int:
        return self.z.shape[0]

    @property
    def n_slots(self) -> int:
        return self.z.shape[1]


# -- priors -------------------------------------------------------------------


@dataclass(frozen=True)
class BetaPrior:
    """Independent Beta(alpha_i, beta_i) prior per channel."""

    alpha: tuple[float, ...]
    beta: tuple[float, ...]

    def __init__(self, alpha: Sequence[float], beta: Sequence[float]):
        a = np.asarray(alpha, dtype=float)
        b = np.asarray(beta, dtype=float)
        if a.ndim != 1 or a.shape != b.shape or a.size == 0:
            raise ModelError("Beta prior needs matching non-empty alpha/beta lists")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ModelError("Beta parameters must be finite")
        if np.any(a <= 0) or np.any(b <= 0):
            raise ModelError("Beta parameters must be positive")
        object.__setattr__(self, "alpha", tuple(float(x) for x in a))
        object.__setattr__(self, "beta", tuple(float(x) for x in b))

    @classmethod
    def uniform(cls, n_channels: int) -> "BetaPrior":
        return cls([1.0] * n_channels, [1.0] * n_channels)

    @property
    def n_channels(self) -> int:
        return len(self.alpha)


@dataclass(frozen=True)
class GridPrior:
    """Joint prior on a finite set of theta vectors."""

    support: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...]

    def __init__(self, support, weights: Sequence[float]):
        pts = np.asarray(support, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(weights, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0 or w.shape != (pts.shape[0],):
            raise ModelError("grid prior needs one weight per support point")
        if np.any(pts < 0) or np.any(pts > 1) or not np.all(np.isfinite(pts)):
            raise ModelError("grid support points must lie in [0, 1]^N")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ModelError("grid weights must be nonnegative")
        if abs(w.sum() - 1.0) > GRID_WEIGHT_TOL:
            raise ModelError(f"grid weights must sum to 1 (got {w.sum()!r})")
        object.__setattr__(self, "support", tuple(tuple(float(x) for x in p) for p in pts))
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def point_mass(cls, theta: Sequence[float]) -> "GridPrior":
        return cls([list(theta)], [1.0])

    @property
    def n_channels(self) -> int:
        return len(self.support[0])


PriorSpec = Union[BetaPrior, GridPrior]


def sample_theta(prior: PriorSpec, rng: np.random.Generator) -> ThetaVector:
    """Draw the block parameter from the prior."""
    if isinstance(prior, BetaPrior):
        return ThetaVector(rng.beta(prior.alpha, prior.beta))
    if isinstance(prior, GridPrior):
        if len(prior.weights) == 1:
            return ThetaVector(prior.support[0])
        w = np.asarray(prior.weights)
        idx = rng.choice(len(w), p=w / w.sum())
        return ThetaVector(prior.support[idx])
    raise ModelError(f"unsupported prior {type(prior).__name__}")


def generate_block(theta: ThetaVector, n_slots: int, rng: np.random.Generator) -> ChannelRealization:
    """Independent Bernoulli(theta_i) availability for every channel and slot."""
    if n_slots < 1:
        raise ModelError("n_slots must be >= 1")
    th = theta.as_array() if isinstance(theta, ThetaVector) else ThetaVector(theta).as_array()
    u = rng.random((th.size, n_slots))
    return ChannelRealization(u < th[:, None])


# -- random streams -----------------------------------------------------------

# Fixed stream identifiers; never renumber, results depend on them.
ENVIRONMENT = 0
CONTENTION = 1
USER = 2
STRATEGY = 3


def _name_code(name: str | int) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(name.encode("utf-8"))


@dataclass(frozen=True)
class StreamFactory:
    """Named, independent random sub-streams derived from one master seed.

    A stream is addressed by (kind, replication, index); for instance the
    environment stream of replication 3 is ``stream(ENVIRONMENT, 3)`` and the
    choice stream of user 7 is ``stream(USER, 3, 7)``. Adding users never
    changes the environment draw.
    """

    seed: int
    namespace: tuple[int, ...] = field(default=())

    def sequence(self, kind: str | int, replication: int = 0, index: int = 0) -> np.random.SeedSequence:
        key = (*self.namespace, _name_code(kind), replication, index)
        return np.random.SeedSequence(entropy=self.seed, spawn_key=key)

    def stream(self, kind: str | int, replication: int = 0, index: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence(kind, replication, index)))
