import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogmac.belief import BetaBelief, GridBelief
from cogmac.core_model import ModelError
from cogmac.planning import (
    GittinsParams,
    GittinsPolicy,
    GittinsTruncationWarning,
    OneKnownChannelPolicy,
    OptimalPolicy,
    PlanningBudgetError,
    count_states,
    evaluate_strategy,
    gittins_index,
    gittins_table,
    optimal_value,
    stopping_index,
)
from cogmac.single_user import MyopicStrategy, RandomStrategy, Rule1, StayWithWinner
from cogmac.verify import expectimax_value, stopping_rule_pairs

# Gittins index of Beta(1, 1) at discount 0.9, pinned from a truncation-2000 run
GITTINS_11 = 0.7028891937679764


class TestOptimalValue:
    def test_known_theta(self):
        res = optimal_value(GridBelief.point_mass([0.9, 0.5]), 3)
        assert res.value == pytest.approx(2.7, abs=1e-12)
        assert res.first_action == 0

    def test_one_slot(self):
        assert optimal_value(BetaBelief.uniform(2), 1).value == pytest.approx(0.5)

    def test_two_slots(self):
        assert optimal_value(BetaBelief.uniform(2), 2).value == pytest.approx(13 / 12, abs=1e-12)

    def test_bits_scale(self):
        v1 = optimal_value(BetaBelief([2, 1], [1, 3]), 4).value
        assert optimal_value(BetaBelief([2, 1], [1, 3]), 4, bits_per_slot=8.0).value == pytest.approx(8 * v1)

    def test_tie_goes_to_lowest_channel(self):
        assert optimal_value(BetaBelief.uniform(3), 4).first_action == 0

    def test_budget_guard(self):
        with pytest.raises(PlanningBudgetError):
            optimal_value(BetaBelief.uniform(3), 40, budget=1000)
        assert count_states(3, 40) > 10**6

    def test_visited_states_within_count(self):
        res = optimal_value(BetaBelief.uniform(2), 6)
        assert len(res.values) <= count_states(2, 6)

    def test_bad_horizon(self):
        with pytest.raises(ModelError):
            optimal_value(BetaBelief.uniform(2), 0)

    @pytest.mark.parametrize("priors,T", [([(1, 1), (2, 1)], 5), ([(3, 2), (1, 1), (2, 3)], 4),
                                          ([(1, 2)], 6)])
    def test_matches_expectimax(self, priors, T):
        belief = BetaBelief([p[0] for p in priors], [p[1] for p in priors])
        assert optimal_value(belief, T).value == pytest.approx(expectimax_value(priors, T), abs=1e-12)

    def test_grid_prior_matches_beta(self):
        g = GridBelief.discretized_beta(2, 1)
        b = BetaBelief([2], [1])
        assert optimal_value(g, 4).value == pytest.approx(optimal_value(b, 4).value, abs=1e-5)

    def test_bellman_consistency(self):
        belief = BetaBelief([1, 2], [2, 1])
        res = optimal_value(belief, 6)
        for (counts, remaining), v in res.values.items():
            q = [(belief.a[i] + counts[2 * i]) / (belief.a[i] + belief.b[i] + counts[2 * i] + counts[2 * i + 1])
                 for i in range(2)]
            scores = []
            for i in range(2):
                if remaining == 1:
                    scores.append(q[i])
                    continue
                up = list(counts)
                up[2 * i] += 1
                down = list(counts)
                down[2 * i + 1] += 1
                cont = q[i] * res.values[(tuple(up), remaining - 1)]
                cont += (1 - q[i]) * res.values[(tuple(down), remaining - 1)]
                scores.append(q[i] + cont)
            assert v == max(scores)
            assert res.policy[(counts, remaining)] == int(np.argmax(scores))

    def test_to_dict_is_json(self):
        d = json.loads(json.dumps(optimal_value(BetaBelief.uniform(2), 2).to_dict()))
        assert d["first_action"] == 1 and d["value"] == pytest.approx(13 / 12)
        assert {"counts", "remaining", "channel"} <= set(d["policy"][0])

    @given(st.lists(st.tuples(st.integers(1, 3), st.integers(1, 3)), min_size=1, max_size=3),
           st.integers(1, 5))
    @settings(max_examples=25, deadline=None)
    def test_value_bounds(self, priors, T):
        res = optimal_value(BetaBelief([p[0] for p in priors], [p[1] for p in priors]), T)
        assert 0 <= res.value <= T
        assert res.first_action == res.action((0,) * (2 * len(priors)), T)


class TestDominance:
    PRIORS = [BetaBelief([1, 1], [1, 1]), BetaBelief([2, 1], [1, 2]), BetaBelief([1, 3], [3, 1])]

    @pytest.mark.parametrize("prior", PRIORS)
    @pytest.mark.parametrize("make", [Rule1, MyopicStrategy,
                                      lambda n: StayWithWinner(n, "round-robin")])
    def test_deterministic_strategies(self, prior, make):
        v_opt = optimal_value(prior, 8).value
        assert evaluate_strategy(make(2), prior, 8) <= v_opt + 1e-9

    @pytest.mark.parametrize("prior", PRIORS)
    @pytest.mark.parametrize("make", [RandomStrategy, lambda n: StayWithWinner(n, "uniform-random")])
    def test_randomized_strategies(self, prior, make):
        v_opt = optimal_value(prior, 6).value
        assert evaluate_strategy(make(2), prior, 6) <= v_opt + 1e-9

    @pytest.mark.parametrize("make", [Rule1, MyopicStrategy, RandomStrategy,
                                      lambda n: StayWithWinner(n, "uniform-random")])
    def test_three_channels(self, make):
        prior = BetaBelief([1, 2, 3], [2, 1, 3])
        assert evaluate_strategy(make(3), prior, 4) <= optimal_value(prior, 4).value + 1e-9

    def test_random_value_is_mean_of_means(self):
        prior = BetaBelief([2, 1], [1, 2])
        assert evaluate_strategy(RandomStrategy(2), prior, 5) == pytest.approx(2.5)

    def test_optimal_policy_attains_value(self):
        prior = BetaBelief([1, 2], [1, 1])
        assert evaluate_strategy(OptimalPolicy(prior, 6), prior, 6) == pytest.approx(
            optimal_value(prior, 6).value, abs=1e-12)

    def test_myopic_not_optimal(self):
        # sensing the uncertain channel first is worth more than the greedy choice
        prior = BetaBelief([1, 60], [1, 40])
        assert evaluate_strategy(MyopicStrategy(prior=prior), prior, 8) < optimal_value(prior, 8).value - 1e-6


class TestStoppingIndex:
    def test_examples(self):
        f = BetaBelief([1], [1])
        assert stopping_index(f, 1) == pytest.approx(0.5, abs=1e-10)
        assert stopping_index(f, 2) == pytest.approx(5 / 9, abs=1e-10)

    @pytest.mark.parametrize("theta", [0.0, 0.3, 0.9, 1.0])
    @pytest.mark.parametrize("T", [1, 3, 6])
    def test_point_mass(self, theta, T):
        assert stopping_index(GridBelief.point_mass([theta]), T) == pytest.approx(theta, abs=1e-9)

    @pytest.mark.parametrize("a,b", [(2, 1), (1, 3), (2, 2)])
    def test_against_rule_enumeration(self, a, b):
        for T in range(1, 6):
            exact = max(n / d for n, d in stopping_rule_pairs(a, b, T))
            assert stopping_index(BetaBelief([a], [b]), T) == pytest.approx(float(exact), abs=1e-9)

    def test_pruning_keeps_maximum(self):
        full = stopping_rule_pairs(1, 1, 4, prune=False)
        pruned = stopping_rule_pairs(1, 1, 4, prune=True)
        assert max(n / d for n, d in full) == max(n / d for n, d in pruned)
        assert len(pruned) < len(full)

    def test_channel_of_multichannel_belief(self):
        f = BetaBelief([5, 1], [5, 1])
        assert stopping_index(f, 2, channel=1) == pytest.approx(5 / 9, abs=1e-10)
        with pytest.raises(ModelError):
            stopping_index(f, 2)

    @given(st.integers(1, 4), st.integers(1, 4))
    @settings(max_examples=20, deadline=None)
    def test_nondecreasing_in_horizon(self, a, b):
        vals = [stopping_index(BetaBelief([a], [b]), T) for T in range(1, 9)]
        assert all(y >= x - 1e-9 for x, y in zip(vals, vals[1:]))
        assert vals[0] == pytest.approx(a / (a + b), abs=1e-9)


class TestOneKnownChannel:
    def _first(self, theta2, T=2):
        p = OneKnownChannelPolicy(BetaBelief([1], [1]), theta2, T).start(1)
        return int(p.select()[0])

    def test_examples(self):
        assert self._first(0.6) == 1
        assert self._first(0.5) == 0
        assert self._first(1.0, T=7) == 1

    def test_never_returns(self):
        pol = OneKnownChannelPolicy(BetaBelief([1], [1]), 0.55, 30).start(200)
        rng = np.random.default_rng(4)
        on_known = np.zeros(200, dtype=bool)
        theta = rng.uniform(size=200)
        for _ in range(30):
            ch = pol.select()
            assert np.all(ch[on_known] == 1)
            on_known |= ch == 1
            z = np.where(ch == 0, rng.uniform(size=200) < theta, rng.uniform(size=200) < 0.55).astype(int)
            pol.observe(ch, z)
        assert on_known.any() and not on_known.all()

    def test_bad_theta2(self):
        with pytest.raises(ModelError):
            OneKnownChannelPolicy(BetaBelief([1], [1]), 1.5, 3)

    @given(st.integers(1, 3), st.integers(1, 3), st.floats(0.01, 0.99), st.integers(1, 9), st.booleans())
    @settings(max_examples=40, deadline=None)
    def test_switch_table_matches_index(self, a, b, theta2, T, grid):
        belief = GridBelief.discretized_beta(a, b, 200) if grid else BetaBelief([a], [b])
        pol = OneKnownChannelPolicy(belief, theta2, T)
        table = pol.switch_table()
        for n in range(T):
            for s in range(n + 1):
                idx = pol.index(s, n - s, T - n)
                if abs(idx - theta2) > 1e-7:
                    assert bool(table[n][s]) == (idx <= theta2)


class TestGittinsIndex:
    def test_pinned_value(self):
        assert gittins_index(1, 1) == pytest.approx(GITTINS_11, abs=1e-9)

    def test_pinned_value_oracle(self):
        # fine-truncation calibration agrees with the default truncation
        assert gittins_index(1, 1, GittinsParams(0.9, 2000, 1e-4)) == pytest.approx(GITTINS_11, abs=1e-9)

    @pytest.mark.parametrize("theta", [0.2, 0.5, 0.75])
    def test_degenerate_arm(self, theta):
        assert gittins_index(theta * 400, (1 - theta) * 400) == theta

    def test_ordering(self):
        assert gittins_index(2, 1) > gittins_index(1, 2)

    def test_small_discount_tends_to_mean(self):
        p = GittinsParams(discount=1e-3, state_truncation=50, tolerance=1e-4)
        assert gittins_index(2, 1, p) == pytest.approx(2 / 3, abs=1e-3)

    def test_truncation_warning(self):
        with pytest.warns(GittinsTruncationWarning):
            gittins_index(1, 1, GittinsParams(0.99, 50, 1e-4))

    def test_params_validation(self):
        for kw in (dict(discount=1.0), dict(state_truncation=1), dict(tolerance=0.0)):
            with pytest.raises(ModelError):
                GittinsParams(**kw)

    @given(st.integers(1, 30), st.integers(1, 30))
    @settings(max_examples=15, deadline=None)
    def test_monotone_and_bounded(self, a, b):
        p = GittinsParams(0.9, 120, 1e-3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GittinsTruncationWarning)
            g = gittins_index(a, b, p)
            assert a / (a + b) <= g < 1
            assert gittins_index(a + 1, b, p) >= g
            assert gittins_index(a, b + 1, p) <= g

    def test_table_matches_per_state(self):
        # calibration grid spacing is the tolerance
        p = GittinsParams(0.9, 60, 1e-4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GittinsTruncationWarning)
            tab = gittins_table(p)
            for a, b in [(1, 1), (3, 7), (20, 5), (30, 29)]:
                assert tab.lookup(np.array([a]), np.array([b]))[0] == pytest.approx(gittins_index(a, b, p), abs=1e-8)
        d = tab.to_dict(max_sum=4)
        assert [(e["a"], e["b"]) for e in d["entries"]] == [(1, 1), (1, 2), (2, 1), (1, 3), (2, 2), (3, 1)]


class TestGittinsPolicy:
    def test_identical_beliefs_pick_first(self):
        pol = GittinsPolicy(BetaBelief.uniform(3), use_table=False).start(1)
        assert pol.select()[0] == 0

    def test_certain_channel(self):
        pol = GittinsPolicy(BetaBelief.uniform(2), known={1: 1.0}, use_table=False).start(1)
        for _ in range(5):
            ch = pol.select()
            assert ch[0] == 1
            pol.observe(ch, np.array([1]))

    def test_switch_after_busy(self):
        pol = GittinsPolicy(BetaBelief.uniform(2), use_table=False).start(1)
        assert pol.select()[0] == 0
        pol.observe(np.array([0]), np.array([0]))
        assert gittins_index(1, 2) < gittins_index(1, 1)
        assert pol.select()[0] == 1

    def test_table_and_direct_agree(self):
        prior = BetaBelief([1, 1], [1, 1])
        p = GittinsParams(0.9, 60, 1e-2)
        rng = np.random.default_rng(0)
        u = rng.uniform(size=(20, 2, 15))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GittinsTruncationWarning)
            a = GittinsPolicy(prior, p, use_table=True).start(20)
            b = GittinsPolicy(prior, p, use_table=False).start(20)
            for j in range(15):
                ca, cb = a.select(), b.select()
                assert np.array_equal(ca, cb)
                z = (u[np.arange(20), ca, j] < 0.6).astype(int)
                a.observe(ca, z)
                b.observe(cb, z)
