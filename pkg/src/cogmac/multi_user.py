"""Several cognitive users competing for free channels.

Users pick channels, then every free channel goes to one of the users that
sensed it (CSMA-CA: the smallest i.i.d. continuous back-off wins, i.e. a
uniformly random contender). Users that pick a busy channel, or lose the
contention, send nothing in that slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_model import ModelError, NoOpportunityError, ThetaVector
from .strategy import sample_rows



def _theta_array(theta) -> np.ndarray:
    if isinstance(theta, ThetaVector):
        return theta.as_array()
    return ThetaVector(theta).as_array()


# -- contention -------------------------------------------------------------------


def contention_resolve(contenders: Sequence[int], channel_free: bool, rng: np.random.Generator):
    """Winner among ``contenders`` of a free channel, or None."""
    contenders = list(contenders)
    if not channel_free or not contenders:
        return None
    return contenders[int(rng.integers(len(contenders)))]


def resolve_slot(choices: np.ndarray, free: np.ndarray, backoff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Contention on every channel of one slot.

    ``choices[k]`` is user k's channel, ``free[i]`` the channel state and
    ``backoff[k]`` user k's waiting time. Returns (winner per channel, -1 if
    none; bool per user that transmitted).
    """
    n_channels = free.shape[0]
    order = np.lexsort((backoff, choices))
    ch_sorted = choices[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = ch_sorted[1:] != ch_sorted[:-1]
    winners = np.full(n_channels, -1, dtype=np.intp)
    heads = order[first]
    winners[choices[heads]] = heads
    winners[~free.astype(bool)] = -1
    won = np.zeros(len(choices), dtype=bool)
    won[winners[winners >= 0]] = True
    return winners, won


# -- mixed strategies -------------------------------------------------------------


@dataclass(frozen=True)
class MixedStrategy:
    p: tuple[float, ...]
    lam: float | None = None  # normalization constant of the symmetric optimum
    log_lam: float | None = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or np.any(p > 1 + 1e-15):
            raise ModelError("mixed strategy entries must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ModelError(f"mixed strategy must sum to 1 (got {p.sum()!r})")
        object.__setattr__(self, "p", tuple(float(x) for x in p))

    def as_array(self) -> np.ndarray:
        return np.array(self.p)


def symmetric_solve(theta: np.ndarray, n_users: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise p_i = {1 - (lam / (K theta_i))^(1/(K-1))}^+ with sum p = 1.

    Works on ``theta`` of shape (M, N). Bisection runs on
    c = (lam / K)^(1/(K-1)), which keeps large K well conditioned;
    returns (p, log lam).
    """
    K = n_users
    if K < 2:
        raise ModelError("the symmetric optimum needs K >= 2 users")
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    pos = th > 0
    q = pos.sum(axis=1)
    if np.any(q == 0):
        raise NoOpportunityError("no channel has positive availability")
    e = 1.0 / (K - 1)
    # weight_i = theta_i^(-1/(K-1)); p_i = 1 - c * weight_i on active channels
    with np.errstate(divide="ignore"):
        weight = np.where(pos, np.exp(-e * np.log(np.where(pos, th, 1.0))), 0.0)

    def probs(c):
        return np.where(pos, np.clip(1.0 - c[:, None] * weight, 0.0, None), 0.0)

    lo = np.zeros(len(th))
    hi = 1.0 / np.where(pos, weight, np.inf).min(axis=1)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = probs(mid).sum(axis=1)
        if np.all(hi - lo <= 4 * np.spacing(hi)):
            break
        above = s > 1.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    c = mid
    single = q == 1
    c[single] = 0.0
    p = probs(c)
    p /= p.sum(axis=1, keepdims=True)  # remove the residual bisection error
    with np.errstate(divide="ignore"):
        log_lam = math.log(K) + (K - 1) * np.log(c)
    return p, log_lam


def optimal_symmetric_strategy(theta, n_users: int) -> MixedStrategy:
    """Symmetric mixed strategy maximizing the expected total throughput of K users."""
    th = _theta_array(theta)
    p, log_lam = symmetric_solve(th[None, :], n_users)
    ll = float(log_lam[0])
    return MixedStrategy(tuple(p[0]), lam=math.exp(ll) if ll > -math.inf else 0.0, log_lam=ll)


def nash_strategy(theta) -> MixedStrategy:
    """Sense channel i with probability theta_i / sum(theta)."""
    th = _theta_array(theta)
    total = th.sum()
    if total <= 0:
        raise NoOpportunityError("no channel has positive availability")
    return MixedStrategy(tuple(th / total))


def _p_array(p) -> np.ndarray:
    return p.as_array() if isinstance(p, MixedStrategy) else np.asarray(p, dtype=float)


def expected_total_throughput(theta, p, n_users: int, n_slots: int = 1, bits_per_slot: float = 1.0) -> float:
    """B T sum_i theta_i (1 - (1 - p_i)^K)."""
    th, pp = _theta_array(theta), _p_array(p)
    return float(bits_per_slot * n_slots * np.sum(th * (1.0 - (1.0 - pp) ** n_users)))


def centralized_loss(theta, p, n_users: int, n_slots: int = 1, bits_per_slot: float = 1.0) -> float:
    """Gap to a centralized allocation: B T sum_i theta_i (1 - p_i)^K."""
    th, pp = _theta_array(theta), _p_array(p)
    return float(bits_per_slot * n_slots * np.sum(th * (1.0 - pp) ** n_users))


@dataclass(frozen=True)
class DecayConstants:
    """Exponential loss-decay rates in K; ``None`` rates mean there is no loss (Q = 1)."""

    c1: float | None
    c2: float | None
    theta_lstar: float
    Q: int

    @property
    def no_loss(self) -> bool:
        return self.Q == 1


def decay_constants(theta) -> DecayConstants:
    th = _theta_array(theta)
    positive = th[th > 0]
    Q = int(positive.size)
    if Q == 0:
        raise NoOpportunityError("no channel has positive availability")
    lstar = float(positive.min())
    if Q == 1:
        return DecayConstants(None, None, lstar, 1)
    total = float(positive.sum())
    return DecayConstants(math.log(Q / (Q - 1)), math.log(total / (total - lstar)), lstar, Q)


# -- user populations -------------------------------------------------------------


class UserPopulation:
    """K users sharing one rule; row k of the state belongs to user k.

    ``start`` receives a (K, T) matrix of uniforms, row k drawn from user k's
    own stream; ``select(j)`` returns each user's channel for 1-based slot j.
    """

    name = "population"
    static = False

    def __init__(self, n_channels: int, n_users: int):
        if n_channels < 1 or n_users < 1:
            raise ModelError("need at least one channel and one user")
        self.n_channels = n_channels
        self.n_users = n_users

    def start(self, uniforms: np.ndarray) -> "UserPopulation":
        self._uniforms = uniforms
        self._reset()
        return self

    def _reset(self):
        pass

    def probabilities(self, j: int) -> np.ndarray:
        raise NotImplementedError

    def select(self, j: int) -> np.ndarray:
        return sample_rows(self.probabilities(j), self._uniforms[:, j - 1])

    def observe(self, j: int, channels: np.ndarray, outcomes: np.ndarray) -> None:
        pass


class FixedMixedUsers(UserPopulation):
    """Every user samples i.i.d. from the same mixed strategy each slot."""

    static = True

    def __init__(self, p, n_users: int, name: str = "mixed"):
        pp = _p_array(p)
        super().__init__(len(pp), n_users)
        self.p = pp
        self.name = name

    def probabilities(self, j):
        return np.tile(self.p, (self.n_users, 1))

    def choices(self) -> np.ndarray:
        """All choices at once, shape (T, K)."""
        u = self._uniforms
        k, t = u.shape
        flat = sample_rows(np.tile(self.p, (k * t, 1)), u.T.ravel())
        return flat.reshape(t, k)


class Rule2Users(UserPopulation):
    """Sense each channel once (counting it free regardless), then sample
    channels in proportion to the empirical availabilities X / Y."""

    name = "rule2"

    def _reset(self):
        self.X = np.zeros((self.n_users, self.n_channels))
        self.Y = np.zeros((self.n_users, self.n_channels))

    def estimates(self) -> np.ndarray:
        return self.X / self.Y

    def probabilities(self, j):
        if j <= self.n_channels:
            p = np.zeros((self.n_users, self.n_channels))
            p[:, j - 1] = 1.0
            return p
        est = self.estimates()
        return est / est.sum(axis=1, keepdims=True)

    def select(self, j):
        if j <= self.n_channels:
            return np.full(self.n_users, j - 1, dtype=np.intp)
        return super().select(j)

    def observe(self, j, channels, outcomes):
        rows = np.arange(self.n_users)
        self.Y[rows, channels] += 1
        if j <= self.n_channels:
            self.X[rows, channels] = 1
        else:
            self.X[rows, channels] += outcomes


def phase_switch_slot(n_slots: int) -> int:
    """First slot of the exploitation phase of Rule 3: ceil(ln T)."""
    return max(1, math.ceil(math.log(n_slots)))


class Rule3Users(Rule2Users):
    """Rule 2 until slot ceil(ln T), then the symmetric optimum computed on X / Y."""

    name = "rule3"

    def __init__(self, n_channels: int, n_users: int, n_slots: int):
        if n_users < 2:
            raise ModelError("rule3 needs K >= 2")
        if n_slots < 2:
            raise ModelError("rule3 needs T >= 2")
        super().__init__(n_channels, n_users)
        self.n_slots = n_slots
        self.switch_slot = phase_switch_slot(n_slots)

    def probabilities(self, j):
        if j <= self.n_channels or j < self.switch_slot:
            return super().probabilities(j)
        p, _ = symmetric_solve(self.estimates(), self.n_users)
        return p


def rule2_strategy(n_channels: int, n_users: int = 1) -> Rule2Users:
    return Rule2Users(n_channels, n_users)


def rule3_strategy(n_channels: int, n_users: int, n_slots: int) -> Rule3Users:
    return Rule3Users(n_channels, n_users, n_slots)
