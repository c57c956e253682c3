"""Exact planners: the Bayesian DP optimum, the stopping index for one
unknown channel against a known one, and discounted Gittins indices.

The DP state is the vector of per-channel (successes, failures) counts plus
the remaining horizon. The posterior depends on the sensing history only
through these counts, so the history tree collapses to a count lattice.
"""
from __future__ import annotations

import copy
import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .belief import BetaBelief, Belief, GridBelief, update_posterior
from .core_model import ModelError
from .strategy import SingleUserStrategy, one_hot

DEFAULT_STATE_BUDGET = 10**7
TIE_ATOL = 1e-12


class PlanningBudgetError(RuntimeError):
    """The requested plan would exceed the memo-table budget."""


class GittinsTruncationWarning(UserWarning):
    """The truncation horizon is too short for the requested tolerance."""


# -- Bayesian dynamic programme --------------------------------------------------


@dataclass
class PlanResult:
    value: float
    first_action: int
    horizon: int
    bits_per_slot: float
    # (counts, remaining) -> action / value; counts = (s_0, f_0, s_1, f_1, ...)
    policy: dict = field(repr=False)
    values: dict = field(repr=False)

    def action(self, counts: tuple, remaining: int) -> int:
        return self.policy[(tuple(counts), remaining)]

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "first_action": self.first_action + 1,
            "horizon": self.horizon,
            "bits_per_slot": self.bits_per_slot,
            "policy": [
                {"counts": list(k[0]), "remaining": k[1], "channel": a + 1}
                for k, a in sorted(self.policy.items())
            ],
        }


def count_states(n_channels: int, horizon: int) -> int:
    """Number of (counts, remaining) pairs the DP can visit."""
    # sum over t observations of C(t + 2N - 1, 2N - 1)
    return sum(math.comb(t + 2 * n_channels - 1, 2 * n_channels - 1) for t in range(horizon))


def optimal_value(
    belief: Belief,
    horizon: int,
    bits_per_slot: float = 1.0,
    budget: int = DEFAULT_STATE_BUDGET,
) -> PlanResult:
    """Maximal expected bits over all causal sensing strategies.

    Backward induction with V(f, 1) = max_i B E_f[Z_i] and
    V(f, t) = max_i E_f[B Z_i + V(f after Z_i, t - 1)].
    Ties go to the lowest channel index.
    """
    if horizon < 1:
        raise ModelError("horizon must be >= 1")
    n = belief.n_channels
    needed = count_states(n, horizon)
    if needed > budget:
        raise PlanningBudgetError(
            f"DP over N={n}, T={horizon} needs {needed} states, budget is {budget}"
        )
    B = float(bits_per_slot)
    policy: dict = {}
    values: dict = {}

    def solve(f: Belief, counts: tuple, remaining: int) -> float:
        key = (counts, remaining)
        if key in values:
            return values[key]
        q = np.empty(n)
        for i in range(n):
            q[i] = f.mean(i)
        if remaining == 1:
            scores = B * q
        else:
            scores = np.empty(n)
            for i in range(n):
                cont = 0.0
                if q[i] > 0.0:
                    c1 = list(counts)
                    c1[2 * i] += 1
                    cont += q[i] * solve(update_posterior(f, i, 1), tuple(c1), remaining - 1)
                if q[i] < 1.0:
                    c0 = list(counts)
                    c0[2 * i + 1] += 1
                    cont += (1.0 - q[i]) * solve(update_posterior(f, i, 0), tuple(c0), remaining - 1)
                scores[i] = B * q[i] + cont
        best = scores.max()
        action = int(np.argmax(scores >= best - TIE_ATOL * max(1.0, abs(best))))
        policy[key] = action
        values[key] = float(scores[action])
        return values[key]

    root = (0,) * (2 * n)
    value = solve(belief, root, horizon)
    return PlanResult(value, policy[(root, horizon)], horizon, B, policy, values)


class OptimalPolicy(SingleUserStrategy):
    """Follows a precomputed DP plan."""

    name = "optimal-dp"

    def __init__(self, belief: Belief, horizon: int, bits_per_slot: float = 1.0,
                 budget: int = DEFAULT_STATE_BUDGET, plan: PlanResult | None = None):
        super().__init__(belief.n_channels)
        self.plan = plan if plan is not None else optimal_value(belief, horizon, bits_per_slot, budget)
        self.horizon = horizon

    def _reset(self):
        self.counts = np.zeros((self.replications, 2 * self.n_channels), dtype=np.int64)

    def probabilities(self):
        remaining = self.horizon - self.slot + 1
        if remaining < 1:
            raise ModelError("optimal-dp policy used past its planning horizon")
        acts = np.array([self.plan.action(tuple(c), remaining) for c in self.counts.tolist()])
        return one_hot(acts, self.n_channels)

    def _update(self, channels, outcomes):
        rows = np.arange(len(channels))
        self.counts[rows, 2 * channels + (1 - outcomes)] += 1


def evaluate_strategy(strategy: SingleUserStrategy, belief: Belief, horizon: int,
                      bits_per_slot: float = 1.0) -> float:
    """Exact expected bits of ``strategy`` under ``belief`` by enumerating every history.

    The strategy is driven with a single replication and deep-copied at each
    branch; randomized strategies are averaged through ``probabilities()``.
    Cost grows as (2N)^T.
    """
    strategy.start(1, uniforms=np.zeros((1, horizon)) if strategy.randomized else None)
    B = float(bits_per_slot)

    def walk(strat: SingleUserStrategy, f: Belief, remaining: int) -> float:
        p = strat.probabilities()[0]
        total = 0.0
        for i in np.flatnonzero(p > 0):
            q = f.mean(int(i))
            branch = B * q
            if remaining > 1:
                for z, pz in ((1, q), (0, 1.0 - q)):
                    if pz <= 0.0:
                        continue
                    child = copy.deepcopy(strat)
                    child.observe(np.array([i]), np.array([z]))
                    branch += pz * walk(child, update_posterior(f, int(i), z), remaining - 1)
            total += p[i] * branch
        return total

    return walk(strategy, belief, horizon)


# -- stopping index ---------------------------------------------------------------


def _single_channel(belief: Belief, channel: int | None) -> tuple[Belief, int]:
    if channel is None:
        if belief.n_channels != 1:
            raise ModelError("pass channel= for a multi-channel belief")
        return belief, 0
    return belief, channel


def predictive_table(belief: Belief, depth: int, channel: int | None = None) -> list[np.ndarray]:
    """``q[n][s]`` = P(free | s successes among n observations of the channel), n < depth."""
    belief, ch = _single_channel(belief, channel)
    if isinstance(belief, BetaBelief):
        a, b = belief.a[ch], belief.b[ch]
        return [(a + np.arange(n + 1)) / (a + b + n) for n in range(depth)]
    table = []
    for n in range(depth):
        row = np.empty(n + 1)
        for s in range(n + 1):
            try:
                row[s] = belief.predictive(ch, s, n - s)
            except ModelError:
                row[s] = 0.0  # unreachable count state
        table.append(row)
    return table


def _stopping_advantage(q: list[np.ndarray], lam: float) -> tuple[float, list[np.ndarray]]:
    """Optimal E[sum (Z_j - lam)] over stopping rules with M >= 1, and the continue sets."""
    horizon = len(q)
    cont_value = np.zeros(horizon + 1)
    keep = [None] * horizon
    for n in range(horizon - 1, 0, -1):
        qn = q[n]
        gain = qn - lam + qn * cont_value[1 : n + 2] + (1.0 - qn) * cont_value[: n + 1]
        keep[n] = gain > 0.0
        cont_value = np.where(keep[n], gain, 0.0)
    q0 = q[0][0]
    if horizon == 1:
        return q0 - lam, keep
    return q0 - lam + q0 * cont_value[1] + (1.0 - q0) * cont_value[0], keep


def _rule_ratio(q: list[np.ndarray], keep: list) -> float:
    """E[sum_{j<=M} Z_j] / E[M] for the rule that continues on ``keep``."""
    q0 = q[0][0]
    num, den = q0, 1.0
    reach = np.array([1.0 - q0, q0])  # after one observation, indexed by successes
    for n in range(1, len(q)):
        go = reach * keep[n]
        num += float(go @ q[n])
        den += float(go.sum())
        nxt = np.zeros(n + 2)
        nxt[: n + 1] += go * (1.0 - q[n])
        nxt[1:] += go * q[n]
        reach = nxt
    return num / den


def stopping_index(belief1: Belief, horizon: int, channel: int | None = None,
                   tol: float = 1e-10) -> float:
    """Largest ratio E[free slots sensed on channel 1] / E[M] over stopping rules.

    M >= 1 is a stopping time adapted to the channel-1 observations.
    The index is the root of lam -> max_M E[sum_{j<=M} (Z_j - lam)], found by
    bisection; the ratio of the rule optimal at the lower bracket end is
    returned, which is exact once that rule is optimal at the root.
    """
    if horizon < 1:
        raise ModelError("horizon must be >= 1")
    q = predictive_table(belief1, horizon, channel)
    lo, hi = 0.0, 1.0
    if _stopping_advantage(q, hi)[0] >= 0.0:
        return 1.0
    best_keep = _stopping_advantage(q, lo)[1]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        adv, keep = _stopping_advantage(q, mid)
        if adv > 0.0:
            lo, best_keep = mid, keep
        else:
            hi = mid
    return _rule_ratio(q, best_keep)


class OneKnownChannelPolicy(SingleUserStrategy):
    """Channel 0 has unknown availability, channel 1 is known to be free w.p. theta2.

    While on channel 0 the stopping index of the current posterior over the
    remaining horizon is compared with theta2; once channel 1 is chosen the
    policy stays there.
    """

    name = "one-known"

    def __init__(self, belief1: Belief, theta2: float, horizon: int):
        super().__init__(2)
        if not 0.0 <= theta2 <= 1.0:
            raise ModelError("theta2 must be a probability")
        self.belief1 = belief1
        self.theta2 = float(theta2)
        self.horizon = horizon
        self._index_cache: dict = {}
        self._switch: list | None = None

    def index(self, successes: int, failures: int, remaining: int) -> float:
        key = (successes, failures, remaining)
        if key not in self._index_cache:
            f = self.belief1
            for _ in range(successes):
                f = update_posterior(f, 0, 1)
            for _ in range(failures):
                f = update_posterior(f, 0, 0)
            self._index_cache[key] = stopping_index(f, remaining, channel=0)
        return self._index_cache[key]

    def switch_table(self) -> list[np.ndarray]:
        """``table[n][s]`` is True when the index after n observations with s
        successes (remaining horizon - n slots) is at most theta2."""
        if self._switch is None:
            self._switch = _switch_table(predictive_table(self.belief1, self.horizon, 0),
                                         self.theta2, self.horizon)
        return self._switch

    def _reset(self):
        r = self.replications
        self.on_known = np.zeros(r, dtype=bool)
        self.successes = np.zeros(r, dtype=np.int64)
        self.failures = np.zeros(r, dtype=np.int64)

    def probabilities(self):
        remaining = max(self.horizon - self.slot + 1, 1)
        n = self.horizon - remaining
        table = self.switch_table()
        for r in np.flatnonzero(~self.on_known):
            s, f = int(self.successes[r]), int(self.failures[r])
            if s + f == n:
                switch = bool(table[n][s])
            else:
                switch = self.index(s, f, remaining) <= self.theta2
            if switch:
                self.on_known[r] = True
        return one_hot(self.on_known.astype(np.intp), 2)

    def _update(self, channels, outcomes):
        on_unknown = channels == 0
        self.successes += on_unknown & (outcomes == 1)
        self.failures += on_unknown & (outcomes == 0)


def _switch_table(q: list[np.ndarray], lam: float, horizon: int) -> list[np.ndarray]:
    """Sign of the stopping advantage at ``lam`` on every on-path state.

    The advantage falls strictly in lam, so it is <= 0 exactly when the
    stopping index is <= lam. One backward pass over (n, s, remaining) with
    n + remaining = horizon on the diagonal replaces a bisection per state.
    """
    T = horizon
    qm = np.zeros((T + 1, T + 1))
    for n in range(T):
        qm[n, : n + 1] = q[n]
    value = np.zeros((T + 1, T + 2))  # value with r - 1 slots left, indexed [n, s]
    table: list = [None] * T
    for r in range(1, T + 1):
        m = T - r + 1  # rows n = 0..T-r
        qq = qm[:m, :m]
        up = np.maximum(value[1 : m + 1, 1 : m + 1], 0.0)
        down = np.maximum(value[1 : m + 1, :m], 0.0)
        new = qq - lam + qq * up + (1.0 - qq) * down
        value[:m, :m] = new
        value[:m, m:] = 0.0
        table[m - 1] = new[m - 1, :m] <= 0.0
    return table


def one_known_channel_policy(belief1: Belief, theta2: float, horizon: int) -> OneKnownChannelPolicy:
    return OneKnownChannelPolicy(belief1, theta2, horizon)


# -- Gittins index -----------------------------------------------------------------


@dataclass(frozen=True)
class GittinsParams:
    discount: float = 0.9
    state_truncation: int = 400
    tolerance: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ModelError("discount must lie in (0, 1)")
        if self.state_truncation < 2:
            raise ModelError("state_truncation must be >= 2")
        if not self.tolerance > 0:
            raise ModelError("tolerance must be positive")


def _truncation_bound(a: float, b: float, params: GittinsParams) -> float:
    depth = max(params.state_truncation - (a + b), 0.0)
    return params.discount ** depth


def _check_truncation(a: float, b: float, params: GittinsParams) -> None:
    bound = _truncation_bound(a, b, params)
    if bound > params.tolerance:
        warnings.warn(
            f"Gittins index at ({a:g}, {b:g}) with H={params.state_truncation}: "
            f"truncation error bound {bound:.3g} exceeds tolerance {params.tolerance:g}",
            GittinsTruncationWarning,
            stacklevel=3,
        )


def _calibration_advantage(a: float, b: float, lams: np.ndarray, params: GittinsParams) -> np.ndarray:
    """Continue-minus-retire value at the root state for each calibration level."""
    alpha, H = params.discount, params.state_truncation
    retire = lams / (1.0 - alpha)
    depth = int(math.ceil(H - (a + b) - 1e-12))
    lam_col = lams[:, None]
    # boundary: known arm with success probability equal to its posterior mean
    k = depth
    i = np.arange(k + 1)
    mu = (a + i) / (a + b + k)
    value = np.maximum(lam_col, mu[None, :]) / (1.0 - alpha)
    for k in range(depth - 1, -1, -1):
        i = np.arange(k + 1)
        mu = (a + i) / (a + b + k)
        cont = mu + alpha * (mu * value[:, 1 : k + 2] + (1.0 - mu) * value[:, : k + 1])
        if k == 0:
            return cont[:, 0] - retire
        value = np.maximum(retire[:, None], cont)
    raise AssertionError("unreachable")


def gittins_index(a: float, b: float, params: GittinsParams = GittinsParams(),
                  resolution: float = 1e-10, probes: int = 32) -> float:
    """Discounted Gittins index of a Bernoulli arm with a Beta(a, b) posterior.

    Calibration against a known arm paying ``lam`` per slot: the index is the
    ``lam`` at which continuing and retiring are equally good at (a, b).
    States with a + b >= H are treated as known arms (index = a / (a + b)).
    """
    if a <= 0 or b <= 0:
        raise ModelError("Beta pseudo-counts must be positive")
    mean = a / (a + b)
    if a + b >= params.state_truncation:
        return mean
    _check_truncation(a, b, params)
    lo, hi = mean, 1.0
    while hi - lo > resolution:
        lams = np.linspace(lo, hi, probes + 2)[1:-1]
        adv = _calibration_advantage(a, b, lams, params)
        k = int(np.count_nonzero(adv > 0.0))
        new_lo = lams[k - 1] if k > 0 else lo
        new_hi = lams[k] if k < len(lams) else hi
        lo, hi = new_lo, new_hi
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GittinsTable:
    """Indices on the integer lattice a, b >= 1, a + b <= H (NaN elsewhere)."""

    params: GittinsParams
    index: np.ndarray  # index[a, b]

    def lookup(self, a, b) -> np.ndarray:
        a = np.asarray(a)
        b = np.asarray(b)
        out = a / (a + b)
        inside = (a + b) < self.params.state_truncation
        if np.any(inside):
            ai = a[inside].astype(np.intp)
            bi = b[inside].astype(np.intp)
            out = np.array(out, dtype=float)
            out[inside] = self.index[ai, bi]
        return out

    def to_dict(self, max_sum: int | None = None) -> dict:
        """Lattice entries with a + b <= ``max_sum`` (default: the whole table)."""
        H = self.params.state_truncation
        top = H if max_sum is None else min(max_sum, H)
        entries = [
            {"a": a, "b": n - a, "index": float(self.index[a, n - a])}
            for n in range(2, top + 1)
            for a in range(1, n)
        ]
        return {
            "discount": self.params.discount,
            "state_truncation": H,
            "tolerance": self.params.tolerance,
            "entries": entries,
        }


@functools.lru_cache(maxsize=8)
def gittins_table(params: GittinsParams = GittinsParams(), chunk: int = 512) -> GittinsTable:
    """All lattice indices at once by sweeping a calibration grid.

    For every level on a grid of spacing <= tolerance the retirement DP is
    solved on the whole lattice; each state's index is located between the
    two grid levels where its advantage changes sign and refined by linear
    interpolation, so the error is below the grid spacing.
    """
    alpha, H = params.discount, params.state_truncation
    n_grid = int(math.ceil(1.0 / params.tolerance)) + 1
    grid = np.linspace(0.0, 1.0, n_grid)
    index = np.full((H + 1, H + 1), np.nan)
    for c0 in range(0, n_grid - 1, chunk):
        lams = grid[c0 : min(c0 + chunk + 1, n_grid)]
        retire = lams[:, None] / (1.0 - alpha)
        a = np.arange(1, H)
        mu = a / H
        value = np.maximum(lams[:, None], mu[None, :]) / (1.0 - alpha)  # diagonal a + b = H
        for n in range(H - 1, 1, -1):
            a = np.arange(1, n)
            mu = a / n
            # children: (a + 1, b) sits at position a, (a, b + 1) at position a - 1
            cont = mu + alpha * (mu * value[:, 1:n] + (1.0 - mu) * value[:, : n - 1])
            adv = cont - retire
            k = np.count_nonzero(adv > 0.0, axis=0)
            hit = (k > 0) & (k < len(lams))
            if np.any(hit):
                cols = np.flatnonzero(hit)
                kk = k[cols]
                a_lo, a_hi = adv[kk - 1, cols], adv[kk, cols]
                l_lo, l_hi = lams[kk - 1], lams[kk]
                root = l_lo + a_lo / (a_lo - a_hi) * (l_hi - l_lo)
                index[a[cols], n - a[cols]] = root
            value = np.maximum(retire, cont)
    for a in range(1, H):
        index[a, H - a] = a / H
    return GittinsTable(params, index)


class GittinsPolicy(SingleUserStrategy):
    """Senses the channel with the largest Gittins index of its Beta posterior.

    ``known`` maps channel -> availability for channels with no uncertainty;
    their index is the availability itself.
    """

    name = "gittins"

    def __init__(self, prior: BetaBelief, params: GittinsParams = GittinsParams(),
                 known: dict | None = None, use_table: bool | None = None):
        super().__init__(prior.n_channels)
        self.prior = prior
        self.params = params
        self.known = dict(known or {})
        integral = all(float(x).is_integer() for x in (*prior.a, *prior.b))
        self.use_table = integral if use_table is None else use_table
        self._cache: dict = {}

    def _index(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.use_table:
            return gittins_table(self.params).lookup(a, b)
        out = np.empty(a.shape)
        for pos, (x, y) in enumerate(zip(a.ravel().tolist(), b.ravel().tolist())):
            if (x, y) not in self._cache:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", GittinsTruncationWarning)
                    self._cache[(x, y)] = gittins_index(x, y, self.params)
            out.flat[pos] = self._cache[(x, y)]
        return out

    def _reset(self):
        r = self.replications
        self.a = np.tile(np.array(self.prior.a), (r, 1))
        self.b = np.tile(np.array(self.prior.b), (r, 1))
        self.idx = self._index(self.a, self.b)
        for ch, th in self.known.items():
            self.idx[:, ch] = th

    def probabilities(self):
        return one_hot(np.argmax(self.idx, axis=1), self.n_channels)

    def _update(self, channels, outcomes):
        rows = np.arange(len(channels))
        self.a[rows, channels] += outcomes == 1
        self.b[rows, channels] += outcomes == 0
        self.idx[rows, channels] = self._index(self.a[rows, channels], self.b[rows, channels])
        for ch, th in self.known.items():
            self.idx[:, ch] = th


def gittins_policy(beliefs: BetaBelief, params: GittinsParams = GittinsParams(), **kw) -> GittinsPolicy:
    return GittinsPolicy(beliefs, params, **kw)
