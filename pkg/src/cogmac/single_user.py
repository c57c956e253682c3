"""Online single-user sensing strategies and loss accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belief import BetaBelief, Belief, GridBelief, update_posterior
from .core_model import ModelError, ThetaVector
from .strategy import SingleUserStrategy, lowest_argmax, one_hot


def ucb_index(x, y, j):
    """Empirical availability plus the exploration bonus sqrt(2 ln j / y)."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 1):
        raise ValueError("ucb_index needs y >= 1 (every channel sensed at least once)")
    if np.any(np.asarray(j) < 1):
        raise ValueError("slot index j must be >= 1")
    out = np.asarray(x, dtype=float) / y + np.sqrt(2.0 * np.log(j) / y)
    return float(out) if out.ndim == 0 else out


class Rule1(SingleUserStrategy):
    """Sense every channel once, then the largest upper-confidence index.

    ``j`` inside the logarithm is the global slot counter, initialization
    slots included.
    """

    name = "ucb-rule1"

    def _reset(self):
        self.X = np.zeros((self.replications, self.n_channels))
        self.Y = np.zeros((self.replications, self.n_channels))

    def select(self):
        if self.slot <= self.n_channels:
            return np.full(self.replications, self.slot - 1, dtype=np.intp)
        idx = self.X / self.Y + np.sqrt(2.0 * math.log(self.slot) / self.Y)
        return np.argmax(idx, axis=1)

    def probabilities(self):
        return one_hot(self.select(), self.n_channels)

    def _update(self, channels, outcomes):
        rows = np.arange(len(channels))
        self.Y[rows, channels] += 1
        self.X[rows, channels] += outcomes


class RandomStrategy(SingleUserStrategy):
    name = "random"
    randomized = True

    def probabilities(self):
        return np.full((self.replications, self.n_channels), 1.0 / self.n_channels)

    def select(self):
        u = self._uniforms[:, self.slot - 1]
        return np.minimum((u * self.n_channels).astype(np.intp), self.n_channels - 1)


class MyopicStrategy(SingleUserStrategy):
    """Greedy on the posterior mean; Beta(1, 1) per channel by default."""

    name = "myopic"

    def __init__(self, n_channels: int | None = None, prior: Belief | None = None):
        if prior is None:
            if n_channels is None:
                raise ValueError("need n_channels or a prior")
            prior = BetaBelief.uniform(n_channels)
        super().__init__(prior.n_channels)
        self.prior = prior

    def _reset(self):
        r = self.replications
        if isinstance(self.prior, BetaBelief):
            self.a = np.tile(np.array(self.prior.a), (r, 1))
            self.b = np.tile(np.array(self.prior.b), (r, 1))
        else:
            self.beliefs = [self.prior] * r

    def means(self) -> np.ndarray:
        if isinstance(self.prior, BetaBelief):
            return self.a / (self.a + self.b)
        return np.array([[f.mean(i) for i in range(self.n_channels)] for f in self.beliefs])

    def probabilities(self):
        return one_hot(lowest_argmax(self.means(), atol=1e-15), self.n_channels)

    def _update(self, channels, outcomes):
        if isinstance(self.prior, BetaBelief):
            rows = np.arange(len(channels))
            self.a[rows, channels] += outcomes == 1
            self.b[rows, channels] += outcomes == 0
        else:
            self.beliefs = [
                update_posterior(f, int(c), int(z)) for f, c, z in zip(self.beliefs, channels, outcomes)
            ]


class StayWithWinner(SingleUserStrategy):
    """Random first channel; stay after a free slot, switch after a busy one.

    ``switch_rule`` is ``"round-robin"`` (next channel index, cyclically) or
    ``"uniform-random"`` (uniform over the other channels).
    """

    randomized = True

    def __init__(self, n_channels: int, switch_rule: str = "round-robin"):
        super().__init__(n_channels)
        if switch_rule not in ("round-robin", "uniform-random"):
            raise ValueError(f"unknown switch rule {switch_rule!r}")
        self.switch_rule = switch_rule
        self.name = "stay-winner-rr" if switch_rule == "round-robin" else "stay-winner-rand"

    def _reset(self):
        self.current = np.full(self.replications, -1, dtype=np.intp)
        self.last_free = np.zeros(self.replications, dtype=bool)

    def probabilities(self):
        n, r = self.n_channels, self.replications
        if self.slot == 1:
            return np.full((r, n), 1.0 / n)
        p = one_hot(self.current, n)
        busy = ~self.last_free
        if n == 1:
            return p
        if self.switch_rule == "round-robin":
            p[busy] = one_hot((self.current[busy] + 1) % n, n)
        else:
            others = np.full((int(busy.sum()), n), 1.0 / (n - 1))
            others[np.arange(len(others)), self.current[busy]] = 0.0
            p[busy] = others
        return p

    def select(self):
        n = self.n_channels
        u = self._uniforms[:, self.slot - 1]
        if self.slot == 1:
            return np.minimum((u * n).astype(np.intp), n - 1)
        choice = self.current.copy()
        busy = ~self.last_free
        if n > 1 and np.any(busy):
            if self.switch_rule == "round-robin":
                choice[busy] = (self.current[busy] + 1) % n
            else:
                step = 1 + np.minimum((u[busy] * (n - 1)).astype(np.intp), n - 2)
                choice[busy] = (self.current[busy] + step) % n
        return choice

    def _update(self, channels, outcomes):
        self.current = channels.copy()
        self.last_free = outcomes == 1


def rule1_strategy(n_channels: int) -> Rule1:
    return Rule1(n_channels)


def random_strategy(n_channels: int) -> RandomStrategy:
    return RandomStrategy(n_channels)


def myopic_strategy(prior: Belief) -> MyopicStrategy:
    return MyopicStrategy(prior=prior)


def stay_with_winner_strategy(n_channels: int, switch_rule: str = "round-robin") -> StayWithWinner:
    return StayWithWinner(n_channels, switch_rule)


# -- loss accounting --------------------------------------------------------------


def kl_bernoulli(p: float, q: float) -> float:
    """D(p || q) between Bernoulli laws, with 0 ln 0 = 0; ``math.inf`` when unbounded."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError("kl_bernoulli arguments must be probabilities")
    total = 0.0
    for x, y in ((p, q), (1.0 - p, 1.0 - q)):
        if x == 0.0:
            continue
        if y == 0.0:
            return math.inf
        total += x * math.log(x / y)
    return max(total, 0.0)


def regret_lower_bound_coefficient(theta, bits_per_slot: float = 1.0) -> float:
    """Asymptotic lower bound on loss / ln T for consistent strategies.

    Channels tied with the best contribute nothing; an infinite divergence
    (best channel always free) makes a channel's term vanish.
    """
    th = ThetaVector(theta).as_array() if not isinstance(theta, ThetaVector) else theta.as_array()
    best = th.max()
    total = 0.0
    for t in th:
        if t == best:
            continue
        d = kl_bernoulli(float(t), float(best))
        if math.isinf(d):
            continue
        if d == 0.0:
            # gap below float resolution: the term diverges
            return math.inf
        total += (best - t) / d
    return bits_per_slot * total


@dataclass
class LossReport:
    realized_loss: float
    expected_loss: float
    lower_bound_coefficient: float
    per_channel_pulls: tuple[int, ...]


def compute_loss(theta, pull_counts, n_slots: int, bits_per_slot: float = 1.0,
                 free_slots_won: float | None = None) -> LossReport:
    """Expected loss B * sum_i (theta* - theta_i) * pulls_i and, given the number of
    free slots actually used, realized loss B * (T theta* - wins)."""
    th = ThetaVector(theta).as_array() if not isinstance(theta, ThetaVector) else theta.as_array()
    pulls = np.asarray(pull_counts, dtype=np.int64)
    if pulls.shape != th.shape:
        raise ModelError("one pull count per channel required")
    if int(pulls.sum()) != n_slots:
        raise ModelError(f"pull counts sum to {int(pulls.sum())}, expected T={n_slots}")
    B = float(bits_per_slot)
    best = th.max()
    expected = B * float((best - th) @ pulls)
    realized = math.nan if free_slots_won is None else B * (n_slots * best - free_slots_won)
    return LossReport(realized, expected, regret_lower_bound_coefficient(th, B),
                      tuple(int(x) for x in pulls))
