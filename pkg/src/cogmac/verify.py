"""Desk-scale verification experiments with pass/fail verdicts.

Each check compares a library result with an independent route: exact
rational enumeration, closed forms, or Monte Carlo at a stated tolerance.
``run_checks`` drives them all (used by ``cogmac verify`` and the
acceptance tests).
"""
from __future__ import annotations

import filecmp
import itertools
import math
import tempfile
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from .belief import BetaBelief
from .core_model import BlockConfig, ThetaVector
from .harness import ExperimentConfig, run_and_emit, run_experiment, simulate_multi_user
from .multi_user import (
    centralized_loss,
    decay_constants,
    expected_total_throughput,
    nash_strategy,
    optimal_symmetric_strategy,
    phase_switch_slot,
    symmetric_solve,
)
from .planning import GittinsParams, gittins_index, gittins_table, optimal_value, stopping_index
from .single_user import regret_lower_bound_coefficient

THETA_SINGLE = (0.9, 0.5)
THETA_PAIR = (0.8, 0.4)
THETA_FOUR = (0.9, 0.7, 0.5, 0.3)


@dataclass
class Check:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:>2} {self.title}: {self.detail} ({self.seconds:.1f}s)"


# -- independent oracles ----------------------------------------------------------


def expectimax_value(priors: list[tuple[int, int]], horizon: int) -> float:
    """Optimal expected free slots by expectimax over raw histories.

    The predictive probability of channel i is recomputed from the history
    list every time; no state merging or memoization.
    """

    def predictive(history, i):
        a, b = priors[i]
        s = sum(1 for ch, z in history if ch == i and z == 1)
        f = sum(1 for ch, z in history if ch == i and z == 0)
        return (a + s) / (a + b + s + f)

    n = len(priors)

    def value(history, remaining):
        if remaining == 1:
            return max(predictive(history, i) for i in range(n))
        best = -1.0
        for i in range(n):
            q = predictive(history, i)
            v = q * (1.0 + value(history + ((i, 1),), remaining - 1)) + (1.0 - q) * value(
                history + ((i, 0),), remaining - 1
            )
            best = max(best, v)
        return best

    return value((), horizon)


def strategy_tree_value(priors: list[tuple[int, int]], horizon: int) -> Fraction:
    """Best expected free slots over every deterministic strategy tree, in exact arithmetic.

    A strategy assigns a channel to every history; all assignments are
    enumerated (feasible only for tiny N and T).
    """
    n = len(priors)
    nodes = [()]
    frontier = [()]
    for _ in range(horizon - 1):
        frontier = [h + ((i, z),) for h in frontier for i in range(n) for z in (0, 1)]
        nodes += frontier

    def predictive(history, i):
        a, b = priors[i]
        s = sum(1 for ch, z in history if ch == i and z == 1)
        f = sum(1 for ch, z in history if ch == i and z == 0)
        return Fraction(a + s, a + b + s + f)

    def payoff(rule, history, remaining):
        i = rule[history]
        q = predictive(history, i)
        total = q
        if remaining > 1:
            total += q * payoff(rule, history + ((i, 1),), remaining - 1)
            total += (1 - q) * payoff(rule, history + ((i, 0),), remaining - 1)
        return total

    best = Fraction(-1)
    for assignment in itertools.product(range(n), repeat=len(nodes)):
        rule = dict(zip(nodes, assignment))
        best = max(best, payoff(rule, (), horizon))
    return best


def stopping_rule_pairs(a: int, b: int, horizon: int, prune: bool = True) -> list[tuple[Fraction, Fraction]]:
    """(E[sum Z], E[M]) for every stopping rule on one Beta(a, b) channel, exactly.

    Rules sense at slot 1 and may stop after any later observation. With
    ``prune`` only pairs not dominated (more reward and fewer slots) are
    kept, which leaves the maximal ratio unchanged.
    """

    def options(s, n):
        # rules for the remaining slots after n observations with s successes
        if n == horizon:
            return [(Fraction(0), Fraction(0))]
        q = Fraction(a + s, a + b + n)
        cont = []
        for up in options(s + 1, n + 1):
            for down in options(s, n + 1):
                cont.append((q + q * up[0] + (1 - q) * down[0], 1 + q * up[1] + (1 - q) * down[1]))
        pairs = [(Fraction(0), Fraction(0))] + cont
        return _pareto(pairs) if prune else pairs

    q0 = Fraction(a, a + b)
    out = []
    for up in options(1, 1):
        for down in options(0, 1):
            out.append((q0 + q0 * up[0] + (1 - q0) * down[0], 1 + q0 * up[1] + (1 - q0) * down[1]))
    return out


def _pareto(pairs):
    pairs = sorted(set(pairs), key=lambda p: (p[1], -p[0]))
    kept, best_num = [], None
    for num, den in pairs:
        if best_num is None or num > best_num:
            kept.append((num, den))
            best_num = num
    return kept


def symmetric_active_set(theta, K: int) -> np.ndarray:
    """Symmetric optimum from the closed form on each candidate active set (top-m channels)."""
    th = np.asarray(theta, dtype=float)
    order = np.argsort(-th, kind="stable")
    e = 1.0 / (K - 1)
    for m in range(int((th > 0).sum()), 0, -1):
        act = order[:m]
        w = th[act] ** (-e)
        c = (m - 1) / w.sum()
        p_act = 1.0 - c * w
        rest = order[m:]
        rest = rest[th[rest] > 0]
        if np.all(p_act >= 0) and np.all(1.0 - c * th[rest] ** (-e) <= 0):
            p = np.zeros_like(th)
            p[act] = p_act
            return p
    raise AssertionError("no consistent active set")


# -- checks -----------------------------------------------------------------------


def check_dp_oracle() -> Check:
    worst = 0.0
    cases = 0
    per_channel = [(a, b) for a in (1, 2, 3) for b in (1, 2, 3)]
    for n in (1, 2, 3):
        oracle = {}
        for combo in itertools.combinations_with_replacement(per_channel, n):
            for T in range(1, 7):
                oracle[(combo, T)] = expectimax_value(list(combo), T)
        for combo in itertools.product(per_channel, repeat=n):
            belief = BetaBelief([c[0] for c in combo], [c[1] for c in combo])
            key = tuple(sorted(combo))
            for T in range(1, 7):
                v = optimal_value(belief, T).value
                worst = max(worst, abs(v - oracle[(key, T)]))
                cases += 1
    tree_worst = 0.0
    for priors, T in ([[(1, 1), (1, 1)], 2], [[(2, 1), (1, 2)], 2], [[(1, 1), (2, 3), (3, 1)], 2]):
        exact = strategy_tree_value(priors, T)
        belief = BetaBelief([p[0] for p in priors], [p[1] for p in priors])
        tree_worst = max(tree_worst, abs(optimal_value(belief, T).value - float(exact)))
    pinned = optimal_value(BetaBelief.uniform(2), 2).value
    ok = worst <= 1e-9 and tree_worst <= 1e-9 and abs(pinned - 13 / 12) <= 1e-9
    return Check(1, "DP equals brute-force enumeration", ok,
                 f"{cases} cases, max |diff| {worst:.2e}, strategy-tree max |diff| {tree_worst:.2e}, "
                 f"V(Beta(1,1)^2, T=2) = {pinned:.12f}")


def check_stopping_oracle() -> Check:
    worst = 0.0
    for T in range(1, 6):
        pairs = stopping_rule_pairs(1, 1, T, prune=True)
        exact = max(num / den for num, den in pairs)
        if T <= 4:
            full = stopping_rule_pairs(1, 1, T, prune=False)
            assert max(num / den for num, den in full) == exact
        worst = max(worst, abs(stopping_index(BetaBelief([1], [1]), T) - float(exact)))
    pinned = stopping_index(BetaBelief([1], [1]), 2)
    ok = worst <= 1e-9 and abs(pinned - 5 / 9) <= 1e-9
    return Check(2, "stopping index equals enumeration of stopping rules", ok,
                 f"T<=5 max |diff| {worst:.2e}, index(Beta(1,1), 2) = {pinned:.12f}")


def check_gittins() -> Check:
    small = GittinsParams(0.9, 400, 1e-4)
    large = GittinsParams(0.9, 800, 1e-4)
    degenerate_ok = all(
        gittins_index(th * small.state_truncation, (1 - th) * small.state_truncation, small) == th
        for th in (0.1, 0.25, 0.5, 0.75, 0.9)
    )
    tab = gittins_table(small).index
    H = small.state_truncation
    a, b = np.meshgrid(np.arange(H + 1), np.arange(H + 1), indexing="ij")
    lattice = (a >= 1) & (b >= 1) & (a + b <= H)
    inc_a = lattice[:-1, :] & lattice[1:, :]
    inc_b = lattice[:, :-1] & lattice[:, 1:]
    d_a = (tab[1:, :] - tab[:-1, :])[inc_a]
    d_b = (tab[:, 1:] - tab[:, :-1])[inc_b]
    inside = np.isfinite(tab[lattice]).all() and (tab[lattice] > 0).all() and (tab[lattice] < 1).all()
    mono_ok = bool((d_a >= 0).all() and (d_b <= 0).all())
    tab2 = gittins_table(large).index
    common = lattice & (a + b <= H - 100)
    consistency = float(np.max(np.abs(tab[common] - tab2[: H + 1, : H + 1][common])))
    ok = degenerate_ok and mono_ok and inside and consistency <= 1e-3
    return Check(3, "Gittins index sanity", ok,
                 f"degenerate exact={degenerate_ok}, monotone={mono_ok} (min step a {d_a.min():.2e}, "
                 f"max step b {d_b.max():.2e}), in (0,1)={inside}, |H400-H800| max {consistency:.2e} "
                 f"on a+b<={H - 100}")


def check_lower_bound() -> Check:
    hand = 0.4 / (0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1))
    got = regret_lower_bound_coefficient(THETA_SINGLE, 1.0)
    ok = abs(got - 0.783045) <= 1e-5 and abs(got - hand) <= 1e-12
    return Check(4, "lower-bound coefficient", ok, f"{got:.6f} (hand {hand:.6f}, target 0.783045)")


def _single(strategy, theta, T, R, seed) -> ExperimentConfig:
    return ExperimentConfig(BlockConfig(len(theta), T, 1.0, 1, seed), strategy,
                            theta=ThetaVector(theta), replications=R)


def check_rule1(seed: int = 20240501, out: Path | None = None) -> Check:
    coef = regret_lower_bound_coefficient(THETA_SINGLE)
    long = run_and_emit(_with_out(_single("ucb-rule1", THETA_SINGLE, 10**4, 2000, seed), out, "rule1_T10000"))[0]
    short = run_and_emit(_with_out(_single("ucb-rule1", THETA_SINGLE, 10**2, 2000, seed), out, "rule1_T100"))[0]
    l4 = long.summary["mean_expected_loss"]
    l2 = short.summary["mean_expected_loss"]
    per_log = l4 / math.log(10**4)
    ok = 0.39 <= per_log <= 15.7 and l4 / l2 < 10
    return Check(5, "Rule 1 logarithmic loss", ok,
                 f"loss(1e4)/ln(1e4) = {per_log:.3f} in [0.39, 15.7] (bound coef {coef:.3f}); "
                 f"loss(1e4)/loss(1e2) = {l4 / l2:.2f} < 10")


def check_linear_baselines(seed: int = 20240502, out: Path | None = None) -> Check:
    rnd = run_and_emit(_with_out(_single("random", THETA_SINGLE, 10**5, 100, seed), out, "random_T100000"))[0]
    rate = rnd.summary["mean_expected_loss"] / 10**5
    ok = abs(rate - 0.2) <= 0.02 * 0.2
    parts = [f"random rate {rate:.5f} (target 0.2 +-2%)"]
    for name in ("stay-winner-rr", "stay-winner-rand"):
        r4 = run_and_emit(_with_out(_single(name, THETA_SINGLE, 10**4, 400, seed), out, f"{name}_T10000"))[0]
        r5 = run_and_emit(_with_out(_single(name, THETA_SINGLE, 10**5, 100, seed), out, f"{name}_T100000"))[0]
        a = r4.summary["mean_expected_loss"] / 10**4
        b = r5.summary["mean_expected_loss"] / 10**5
        rel = abs(b - a) / a
        ok &= rel <= 0.02
        parts.append(f"{name} rate {a:.5f} -> {b:.5f} ({100 * rel:.2f}%)")
    return Check(6, "linear-loss baselines", ok, "; ".join(parts))


def check_symmetric_solver() -> Check:
    rng = np.random.default_rng(7)
    thetas = [np.array(THETA_PAIR), np.array(THETA_FOUR), np.array([0.8, 0.05, 0.0]),
              np.array([0.3, 0.3, 0.3])] + [rng.uniform(0, 1, size=n) for n in (2, 3, 5, 8) for _ in range(5)]
    worst_sum = worst_kkt = worst_oracle = 0.0
    kkt_ok = True
    for th in thetas:
        for K in (2, 3, 5, 10, 50):
            p = np.array(optimal_symmetric_strategy(th, K).p)
            worst_sum = max(worst_sum, abs(p.sum() - 1.0))
            act = p > 0
            g = K * th * (1.0 - p) ** (K - 1)
            level = g[act].max()
            worst_kkt = max(worst_kkt, float((g[act].max() - g[act].min()) / level))
            kkt_ok &= bool(np.all(g[~act] <= level * (1 + 1e-8)))
            worst_oracle = max(worst_oracle, float(np.abs(p - symmetric_active_set(th, K)).max()))
    pinned = np.array(optimal_symmetric_strategy(THETA_PAIR, 2).p)
    pin_err = float(np.abs(pinned - [2 / 3, 1 / 3]).max())
    flat = np.array(optimal_symmetric_strategy(THETA_FOUR, 10**4).p)
    flat_err = float(np.abs(flat - 0.25).max())
    ok = worst_sum <= 1e-12 and worst_kkt <= 1e-8 and kkt_ok and pin_err <= 1e-9 and flat_err <= 0.01 \
        and worst_oracle <= 1e-9
    return Check(7, "symmetric optimum solver", ok,
                 f"|sum p - 1| max {worst_sum:.1e}, KKT spread {worst_kkt:.1e}, vs active-set closed form "
                 f"{worst_oracle:.1e}, pinned err {pin_err:.1e}, |p - 1/Q| at K=1e4 {flat_err:.4f}")


def check_closed_forms(seed: int = 20240503, out: Path | None = None) -> Check:
    cfg = ExperimentConfig(BlockConfig(2, 10**4, 1.0, 2, seed), "symmetric-opt",
                           theta=ThetaVector(THETA_PAIR), replications=200)
    st = run_and_emit(_with_out(cfg, out, "symmetric_opt_K2"))[0]
    s = st.summary
    p = optimal_symmetric_strategy(THETA_PAIR, 2)
    thr = expected_total_throughput(THETA_PAIR, p, 2, 10**4)
    loss = centralized_loss(THETA_PAIR, p, 2, 10**4)
    z_thr = abs(s["mean_throughput"] - thr) / s["stderr_throughput"]
    z_loss = abs(s["mean_realized_loss"] - loss) / s["stderr_realized_loss"]
    ok = z_thr <= 3 and z_loss <= 3
    return Check(8, "throughput and loss closed forms", ok,
                 f"throughput {s['mean_throughput']:.2f} vs {thr:.2f} ({z_thr:.2f} s.e.); "
                 f"loss {s['mean_realized_loss']:.2f} vs {loss:.2f} ({z_loss:.2f} s.e.)")


def check_decay() -> Check:
    Ks = np.arange(5, 41)
    tau = nash_strategy(THETA_PAIR)
    logs = np.log([centralized_loss(THETA_PAIR, tau, int(K)) for K in Ks])
    slope = float(np.polyfit(Ks, logs, 1)[0])
    dc = decay_constants(THETA_PAIR)
    rel = abs(-slope - dc.c2) / dc.c2
    ok = rel <= 0.05 and abs(dc.c2 - 0.405465) <= 1e-6 and dc.c1 == math.log(2)
    return Check(9, "exponential loss decay", ok,
                 f"fitted slope {slope:.6f} vs -c2 = {-dc.c2:.6f} ({100 * rel:.3f}%), c1 = {dc.c1!r}")


def rule2_tagged_frequencies(seed: int = 20240504, K: int = 200, T: int = 10**4, tagged: int = 0):
    cfg = ExperimentConfig(BlockConfig(4, T, 1.0, K, seed), "rule2", theta=ThetaVector(THETA_FOUR))
    rec = simulate_multi_user(cfg)
    tail = rec.choices[T - T // 10 :, tagged]
    return np.bincount(tail, minlength=4) / len(tail), np.array(nash_strategy(THETA_FOUR).p)


def rule3_phase2_frequencies(seed: int = 20240505, K: int = 10, T: int = 10**4):
    cfg = ExperimentConfig(BlockConfig(4, T, 1.0, K, seed), "rule3", theta=ThetaVector(THETA_FOUR))
    rec = simulate_multi_user(cfg)
    start = max(phase_switch_slot(T), 4 + 1)
    phase2 = rec.choices[start - 1 :].ravel()
    return np.bincount(phase2, minlength=4) / len(phase2), np.array(optimal_symmetric_strategy(THETA_FOUR, K).p)


def check_rules_convergence() -> Check:
    f2, tau = rule2_tagged_frequencies()
    f3, pstar = rule3_phase2_frequencies()
    e2 = float(np.abs(f2 - tau).max())
    e3 = float(np.abs(f3 - pstar).max())
    ok = e2 <= 0.05 and e3 <= 0.05
    return Check(10, "Rules 2-3 convergence", ok,
                 f"rule2 tagged user max |freq - tau| {e2:.4f}; rule3 phase-2 max |freq - p*| {e3:.4f}")


def _with_out(cfg: ExperimentConfig, out: Path | None, name: str, figures: bool = True) -> ExperimentConfig:
    from dataclasses import replace

    if out is None:
        return cfg
    return replace(cfg, output_path=str(Path(out) / name), figures=figures)


def determinism_configs(seed: int = 20240506) -> dict[str, ExperimentConfig]:
    return {
        "symmetric_opt": ExperimentConfig(BlockConfig(2, 2000, 1.0, 2, seed), "symmetric-opt",
                                          theta=ThetaVector(THETA_PAIR), replications=20),
        "rule1": _single("ucb-rule1", THETA_SINGLE, 2000, 50, seed),
        "stay_winner": _single("stay-winner-rand", (0.9, 0.6, 0.5), 2000, 20, seed),
        "rule3": ExperimentConfig(BlockConfig(4, 500, 1.0, 10, seed), "rule3",
                                  theta=ThetaVector(THETA_FOUR), replications=2),
    }


def check_determinism() -> Check:
    mismatched = []
    n_files = 0
    with tempfile.TemporaryDirectory() as tmp:
        for name, cfg in determinism_configs().items():
            dirs = []
            for run in ("a", "b"):
                d = Path(tmp) / run / name
                run_and_emit(_with_out(cfg, d.parent, name))
                dirs.append(d)
            files = sorted(p.name for p in dirs[0].iterdir())
            n_files += len(files)
            for fname in files:
                if not filecmp.cmp(dirs[0] / fname, dirs[1] / fname, shallow=False):
                    mismatched.append(f"{name}/{fname}")
    ok = not mismatched and n_files > 0
    return Check(11, "byte-identical reruns", ok,
                 f"{n_files} files compared" + (f", mismatched: {mismatched}" if mismatched else ""))


CHECKS: dict[int, Callable[..., Check]] = {
    1: check_dp_oracle,
    2: check_stopping_oracle,
    3: check_gittins,
    4: check_lower_bound,
    5: check_rule1,
    6: check_linear_baselines,
    7: check_symmetric_solver,
    8: check_closed_forms,
    9: check_decay,
    10: check_rules_convergence,
    11: check_determinism,
}
_WRITES_OUTPUT = {5, 6, 8}


def run_check(number: int, out: Path | None = None) -> Check:
    start = time.perf_counter()
    fn = CHECKS[number]
    result = fn(out=out) if number in _WRITES_OUTPUT else fn()
    result.seconds = time.perf_counter() - start
    return result


def run_checks(numbers=None, out: Path | None = None, report=print) -> list[Check]:
    results = []
    for number in numbers or sorted(CHECKS):
        result = run_check(number, out)
        report(result.line())
        results.append(result)
    return results
