"""Posterior beliefs over theta and their Bayesian updates.

Two backends share one functional interface:

* ``BetaBelief``: independent Beta posteriors, closed-form conjugate updates.
* ``GridBelief``: a discretised joint prior; updates reweight the support
  points by the Bernoulli likelihood and renormalise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core_model import GRID_WEIGHT_TOL, BetaPrior, GridPrior, ModelError, PriorSpec


class DegenerateEvidenceError(ModelError):
    """An observation has zero probability under the current belief."""


@dataclass(frozen=True)
class BetaBelief:
    a: tuple[float, ...]
    b: tuple[float, ...]

    def __init__(self, a: Sequence[float], b: Sequence[float]):
        a = tuple(float(x) for x in a)
        b = tuple(float(x) for x in b)
        if len(a) != len(b) or not a:
            raise ModelError("BetaBelief needs matching non-empty a/b")
        if min(a) <= 0 or min(b) <= 0:
            raise ModelError("Beta pseudo-counts must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def uniform(cls, n_channels: int) -> "BetaBelief":
        return cls([1.0] * n_channels, [1.0] * n_channels)

    @property
    def n_channels(self) -> int:
        return len(self.a)

    def mean(self, channel: int) -> float:
        return self.a[channel] / (self.a[channel] + self.b[channel])

    def predictive(self, channel: int, successes: int, failures: int) -> float:
        a = self.a[channel] + successes
        return a / (a + self.b[channel] + failures)

    def update(self, channel: int, observation: int) -> "BetaBelief":
        a, b = list(self.a), list(self.b)
        if observation:
            a[channel] += 1
        else:
            b[channel] += 1
        return BetaBelief(a, b)

    def marginal(self, channel: int) -> "BetaBelief":
        return BetaBelief([self.a[channel]], [self.b[channel]])


class GridBelief:
    """Weighted finite support in [0, 1]^N."""

    __slots__ = ("grid", "weights")

    def __init__(self, grid, weights):
        pts = np.array(grid, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(weights, dtype=float)
        if pts.ndim != 2 or w.shape != (pts.shape[0],) or pts.shape[0] == 0:
            raise ModelError("GridBelief needs one weight per support point")
        if np.any(pts < 0) or np.any(pts > 1):
            raise ModelError("grid support points must lie in [0, 1]^N")
        if np.any(w < 0) or abs(w.sum() - 1.0) > GRID_WEIGHT_TOL:
            raise ModelError("grid weights must be a probability vector")
        pts.setflags(write=False)
        w.setflags(write=False)
        self.grid = pts
        self.weights = w

    @classmethod
    def point_mass(cls, theta: Sequence[float]) -> "GridBelief":
        return cls([list(theta)], [1.0])

    @classmethod
    def discretized_beta(cls, a: float, b: float, n_points: int = 2001) -> "GridBelief":
        """Single-channel grid on the midpoints of ``n_points`` equal cells of [0, 1],
        weighted by the Beta density (midpoints keep moments second-order accurate)."""
        from scipy.stats import beta as beta_dist

        x = (np.arange(n_points) + 0.5) / n_points
        w = beta_dist.pdf(x, a, b)
        return cls(x[:, None], w / w.sum())

    @property
    def n_channels(self) -> int:
        return self.grid.shape[1]

    def mean(self, channel: int) -> float:
        return float(self.weights @ self.grid[:, channel])

    def _reweighted(self, channel: int, successes: int, failures: int) -> np.ndarray:
        th = self.grid[:, channel]
        with np.errstate(divide="ignore"):
            loglik = successes * np.log(th) if successes else np.zeros_like(th)
            if failures:
                loglik = loglik + failures * np.log1p(-th)
        live = self.weights > 0
        logw = np.full_like(th, -np.inf)
        logw[live] = np.log(self.weights[live]) + loglik[live]
        top = logw.max()
        if not np.isfinite(top):
            raise DegenerateEvidenceError(
                f"observations on channel {channel} have zero probability under the grid belief"
            )
        w = np.exp(logw - top)
        return w / w.sum()

    def predictive(self, channel: int, successes: int, failures: int) -> float:
        w = self._reweighted(channel, successes, failures)
        return float(w @ self.grid[:, channel])

    def update(self, channel: int, observation: int) -> "GridBelief":
        th = self.grid[:, channel]
        w = self.weights * (th if observation else 1.0 - th)
        total = w.sum()
        if total <= 0.0:
            raise DegenerateEvidenceError(
                f"observation {observation} on channel {channel} has zero probability"
            )
        new = object.__new__(GridBelief)
        w = w / total
        w.setflags(write=False)
        new.grid = self.grid
        new.weights = w
        return new

    def marginal(self, channel: int) -> "GridBelief":
        return GridBelief(self.grid[:, [channel]], self.weights)

    def __repr__(self) -> str:
        return f"GridBelief(points={self.grid.shape[0]}, channels={self.n_channels})"


Belief = Union[BetaBelief, GridBelief]


def belief_from_prior(prior: PriorSpec) -> Belief:
    if isinstance(prior, BetaPrior):
        return BetaBelief(prior.alpha, prior.beta)
    if isinstance(prior, GridPrior):
        return GridBelief(prior.support, prior.weights)
    raise ModelError(f"unsupported prior {type(prior).__name__}")


def _check_channel(belief: Belief, channel: int) -> None:
    if not 0 <= channel < belief.n_channels:
        raise ModelError(f"channel {channel} out of range for {belief.n_channels} channels")


def update_posterior(belief: Belief, channel: int, observation: int) -> Belief:
    """Posterior after sensing ``channel`` and observing free (1) or busy (0)."""
    _check_channel(belief, channel)
    if observation not in (0, 1):
        raise ModelError("observation must be 0 or 1")
    return belief.update(channel, int(observation))


def posterior_mean(belief: Belief, channel: int) -> float:
    _check_channel(belief, channel)
    return belief.mean(channel)
