"""Base class for online single-user sensing strategies.

Strategies are batched: one instance drives ``R`` independent replications
at once, each row of its state belonging to one replication. Per slot the
harness calls ``select()`` once, then ``observe()`` once with the sensed
channels and their outcomes.
"""
from __future__ import annotations

import numpy as np


class SingleUserStrategy:
    """Common slot bookkeeping.

    Subclasses implement ``probabilities`` (the distribution of the next
    choice, shape ``(R, N)``) and ``_update``. Deterministic strategies return
    one-hot rows; randomized ones set ``randomized = True`` and receive one
    uniform per replication and slot through ``start``.
    """

    name = "strategy"
    randomized = False

    def __init__(self, n_channels: int):
        if n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        self.n_channels = n_channels
        self.replications = 0
        self.slot = 1
        self._uniforms = None

    def start(self, replications: int = 1, uniforms: np.ndarray | None = None) -> "SingleUserStrategy":
        if self.randomized and uniforms is None:
            raise ValueError(f"{self.name} is randomized and needs a uniform stream")
        self.replications = replications
        self.slot = 1
        self._uniforms = uniforms
        self._reset()
        return self

    def _reset(self) -> None:
        pass

    def probabilities(self) -> np.ndarray:
        raise NotImplementedError

    def select(self) -> np.ndarray:
        p = self.probabilities()
        if not self.randomized:
            return np.argmax(p, axis=1)
        return sample_rows(p, self._uniforms[:, self.slot - 1])

    def observe(self, channels: np.ndarray, outcomes: np.ndarray) -> None:
        self._update(np.asarray(channels, dtype=np.intp), np.asarray(outcomes, dtype=np.int8))
        self.slot += 1

    def _update(self, channels: np.ndarray, outcomes: np.ndarray) -> None:
        pass


def one_hot(index: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(index), n))
    out[np.arange(len(index)), index] = 1.0
    return out


def sample_rows(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one category per row of ``p`` using uniforms ``u``."""
    cdf = np.cumsum(p, axis=1)
    n = p.shape[1]
    # the last positive bin absorbs rounding so zero-probability bins are never drawn
    last = n - 1 - np.argmax(p[:, ::-1] > 0, axis=1)
    cdf[np.arange(n)[None, :] >= last[:, None]] = np.inf
    return (cdf <= u[:, None]).sum(axis=1).astype(np.intp)


def lowest_argmax(values: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """Row-wise argmax, ties (within ``atol``) broken toward the lowest index."""
    values = np.atleast_2d(values)
    if atol == 0.0:
        return np.argmax(values, axis=1)
    top = values.max(axis=1, keepdims=True)
    return np.argmax(values >= top - atol, axis=1)
