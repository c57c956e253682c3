"""Experiment orchestration: configuration, Monte Carlo runs, aggregation, output files.

Every replication owns its random streams (environment, one per user,
contention), so results do not depend on how replications are batched or
distributed over workers, and two strategies run with the same seed see the
same channel realizations.
"""
from __future__ import annotations

import configparser
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .belief import BetaBelief, belief_from_prior
from .core_model import (
    CONTENTION,
    ENVIRONMENT,
    USER,
    BetaPrior,
    BlockConfig,
    ChannelRealization,
    GridPrior,
    ModelError,
    PriorSpec,
    StreamFactory,
    ThetaVector,
    generate_block,
    sample_theta,
)
from .multi_user import (
    FixedMixedUsers,
    Rule2Users,
    Rule3Users,
    UserPopulation,
    centralized_loss,
    decay_constants,
    expected_total_throughput,
    nash_strategy,
    optimal_symmetric_strategy,
    resolve_slot,
)
from .planning import GittinsParams, GittinsPolicy, OneKnownChannelPolicy, OptimalPolicy
from .single_user import (
    LossReport,
    MyopicStrategy,
    RandomStrategy,
    Rule1,
    StayWithWinner,
    compute_loss,
    regret_lower_bound_coefficient,
)
from .strategy import SingleUserStrategy

log = logging.getLogger(__name__)

SINGLE_USER_STRATEGIES = (
    "optimal-dp", "gittins", "one-known", "ucb-rule1", "random", "myopic",
    "stay-winner-rr", "stay-winner-rand",
)
MULTI_USER_STRATEGIES = ("symmetric-opt", "nash-tau", "rule2", "rule3")
OUTPUT_KINDS = ("loss-curve", "occupancy", "summary")

# replications * slots held in memory per batch
_BATCH_CELLS = 2_500_000


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# -- configuration ----------------------------------------------------------------


def parse_floats(text: str) -> list[float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from exc


def parse_prior(section) -> PriorSpec:
    kind = section.get("prior", "beta").strip().lower()
    try:
        if kind == "beta":
            return BetaPrior(parse_floats(section["alpha"]), parse_floats(section["beta"]))
        if kind == "grid":
            points = [parse_floats(p) for p in section["support"].split(";") if p.strip()]
            return GridPrior(points, parse_floats(section["weights"]))
        if kind in ("point", "point-mass"):
            return GridPrior.point_mass(parse_floats(section["values"]))
    except KeyError as exc:
        raise ConfigError(f"prior {kind!r} is missing key {exc.args[0]!r}") from exc
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown prior kind {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    block: BlockConfig
    strategy: str
    theta: ThetaVector | None = None
    prior: PriorSpec | None = None
    strategy_params: dict = field(default_factory=dict)
    replications: int = 1
    outputs: tuple[str, ...] = OUTPUT_KINDS
    output_path: str | None = None
    format: str = "csv"
    figures: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if (self.theta is None) == (self.prior is None):
            raise ConfigError("give exactly one of an explicit theta or a prior")
        n = (self.theta or self.prior).n_channels
        if n != self.block.n_channels:
            raise ConfigError(f"theta/prior has {n} channels, block has {self.block.n_channels}")
        if self.strategy in SINGLE_USER_STRATEGIES:
            if self.block.n_users != 1:
                raise ConfigError(f"{self.strategy} is a single-user strategy; set users = 1")
        elif self.strategy in MULTI_USER_STRATEGIES:
            if self.block.n_users < 2:
                raise ConfigError(f"{self.strategy} is a multi-user rule and needs users >= 2")
        else:
            known = ", ".join(SINGLE_USER_STRATEGIES + MULTI_USER_STRATEGIES)
            raise ConfigError(f"unknown strategy {self.strategy!r} (known: {known})")
        if self.strategy == "one-known" and self.block.n_channels != 2:
            raise ConfigError("one-known needs exactly 2 channels")
        bad = set(self.outputs) - set(OUTPUT_KINDS)
        if bad:
            raise ConfigError(f"unknown outputs {sorted(bad)}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def multi_user(self) -> bool:
        return self.strategy in MULTI_USER_STRATEGIES


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read an INI-style experiment file; ``overrides`` (CLI flags) win over file values.

    Sections and keys::

        [block]     channels, slots, users, bits, seed
        [theta]     values = 0.9, 0.5
                    or prior = beta, alpha = ..., beta = ...
                    or prior = grid, support = 0.2 0.8; 0.8 0.2, weights = 0.5, 0.5
        [strategy]  name = ucb-rule1, plus strategy parameters
        [run]       replications, outputs, out, format, figures, workers
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"))
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    for sec in ("block", "theta", "strategy", "run"):
        if not cp.has_section(sec):
            cp.add_section(sec)
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}

    theta = prior = None
    if "theta" in ov:
        theta_text = str(ov["theta"])
    elif "values" in cp["theta"] and "prior" not in cp["theta"]:
        theta_text = cp["theta"]["values"]
    else:
        theta_text = None
    if theta_text is not None:
        try:
            theta = ThetaVector(parse_floats(theta_text))
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc
    elif "prior" in cp["theta"]:
        prior = parse_prior(cp["theta"])
    else:
        raise ConfigError("no theta given (use [theta] values/prior or --theta)")
    n_channels = (theta or prior).n_channels

    blk = cp["block"]
    try:
        block = BlockConfig(
            n_channels=int(blk.get("channels", n_channels)),
            n_slots=int(ov.get("slots", blk.get("slots", 1000))),
            bits_per_slot=float(blk.get("bits", 1.0)),
            n_users=int(ov.get("users", blk.get("users", 1))),
            seed=int(ov.get("seed", blk.get("seed", 0))),
        )
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(f"bad [block] value: {exc}") from exc

    params = {k: v for k, v in cp["strategy"].items() if k != "name"}
    strategy = ov.get("strategy", cp["strategy"].get("name"))
    if not strategy:
        raise ConfigError("no strategy given (use [strategy] name or --strategy)")
    run = cp["run"]
    outputs = ov.get("outputs", run.get("outputs", ",".join(OUTPUT_KINDS)))
    if isinstance(outputs, str):
        outputs = tuple(o.strip() for o in outputs.split(",") if o.strip())
    figures = ov.get("figures", run.getboolean("figures", fallback=False))
    return ExperimentConfig(
        block=block,
        strategy=strategy,
        theta=theta,
        prior=prior,
        strategy_params=params,
        replications=int(ov.get("replications", run.get("replications", 1))),
        outputs=tuple(outputs),
        output_path=ov.get("out", run.get("out")),
        format=ov.get("format", run.get("format", "csv")),
        figures=bool(figures),
        workers=int(ov.get("workers", run.get("workers", 1))),
    )


# -- per-replication environment --------------------------------------------------


def replication_environment(config: ExperimentConfig, rep: int) -> tuple[ThetaVector, ChannelRealization]:
    """Theta and channel realization of replication ``rep`` (environment stream only)."""
    rng = StreamFactory(config.block.seed).stream(ENVIRONMENT, rep)
    theta = config.theta if config.theta is not None else sample_theta(config.prior, rng)
    return theta, generate_block(theta, config.block.n_slots, rng)


def _user_uniforms(config: ExperimentConfig, rep: int, n_users: int) -> np.ndarray:
    streams = StreamFactory(config.block.seed)
    T = config.block.n_slots
    return np.stack([streams.stream(USER, rep, k).random(T) for k in range(n_users)])


# -- single user ------------------------------------------------------------------


def _strategy_belief(config: ExperimentConfig):
    p = config.strategy_params
    if "alpha" in p or "beta" in p or "prior" in p:
        return belief_from_prior(parse_prior(p))
    if config.prior is not None:
        return belief_from_prior(config.prior)
    return BetaBelief.uniform(config.block.n_channels)


def _gittins_params(config: ExperimentConfig) -> GittinsParams:
    p = config.strategy_params
    return GittinsParams(
        discount=float(p.get("discount", 0.9)),
        state_truncation=int(p.get("truncation", 400)),
        tolerance=float(p.get("tolerance", 1e-4)),
    )


def make_single_user_strategy(config: ExperimentConfig, theta: ThetaVector | None = None) -> SingleUserStrategy:
    name, n, T = config.strategy, config.block.n_channels, config.block.n_slots
    if name == "ucb-rule1":
        return Rule1(n)
    if name == "random":
        return RandomStrategy(n)
    if name == "stay-winner-rr":
        return StayWithWinner(n, "round-robin")
    if name == "stay-winner-rand":
        return StayWithWinner(n, "uniform-random")
    if name == "myopic":
        return MyopicStrategy(prior=_strategy_belief(config))
    if name == "optimal-dp":
        budget = int(config.strategy_params.get("budget", 10**7))
        return OptimalPolicy(_strategy_belief(config), T, config.block.bits_per_slot, budget)
    if name == "gittins":
        belief = _strategy_belief(config)
        if not isinstance(belief, BetaBelief):
            raise ConfigError("gittins needs an independent Beta belief")
        return GittinsPolicy(belief, _gittins_params(config))
    if name == "one-known":
        belief = _strategy_belief(config)
        if "theta2" in config.strategy_params:
            theta2 = float(config.strategy_params["theta2"])
        elif theta is not None:
            theta2 = theta[1]
        else:
            raise ConfigError("one-known needs theta2 or a fixed theta")
        return OneKnownChannelPolicy(belief.marginal(0), theta2, T)
    raise ConfigError(f"{name} is not a single-user strategy")


def _theta_dependent(config: ExperimentConfig) -> bool:
    return config.strategy == "one-known" and "theta2" not in config.strategy_params


@dataclass
class RunRecord:
    """Per-slot trace of one replication.

    Single user: ``choices``/``outcomes``/``cumulative_w`` have shape (T,).
    Multi-user: ``choices``/``outcomes`` are (T, K), ``winners`` is (T, N)
    with -1 for no winner and ``cumulative_w`` is (T, K) per user.
    """

    theta: ThetaVector
    choices: np.ndarray
    outcomes: np.ndarray
    cumulative_w: np.ndarray
    winners: np.ndarray | None = None
    loss: LossReport | None = None


def _run_single_batch(config: ExperimentConfig, reps: Sequence[int], trace: bool = False) -> dict:
    T, n, B = config.block.n_slots, config.block.n_channels, config.block.bits_per_slot
    envs = [replication_environment(config, r) for r in reps]
    thetas = np.array([e[0].values for e in envs])
    Z = np.stack([e[1].z for e in envs])  # (R, N, T)
    R = len(reps)
    strategy = make_single_user_strategy(config, envs[0][0])
    uniforms = None
    if strategy.randomized:
        uniforms = np.concatenate([_user_uniforms(config, r, 1) for r in reps])
    strategy.start(R, uniforms)
    rows = np.arange(R)
    gap = thetas.max(axis=1, keepdims=True) - thetas  # (R, N)
    cum_loss = np.zeros(R)
    wins = np.zeros(R)
    pulls = np.zeros((R, n), dtype=np.int64)
    curve_sum = np.empty(T)
    curve_sq = np.empty(T)
    occupancy = np.empty((T, n))
    if trace:
        ch_trace = np.empty((R, T), dtype=np.intp)
        z_trace = np.empty((R, T), dtype=np.int8)
        w_trace = np.empty((R, T))
    for j in range(T):
        ch = strategy.select()
        z = Z[rows, ch, j]
        strategy.observe(ch, z)
        cum_loss += B * gap[rows, ch]
        wins += z
        pulls[rows, ch] += 1
        curve_sum[j] = cum_loss.sum()
        curve_sq[j] = (cum_loss**2).sum()
        occupancy[j] = np.bincount(ch, minlength=n)
        if trace:
            ch_trace[:, j], z_trace[:, j], w_trace[:, j] = ch, z, B * wins
    best = thetas.max(axis=1)
    out = {
        "expected_loss": cum_loss,
        "realized_loss": B * (T * best - wins),
        "throughput": B * wins,
        "clairvoyant_realized": B * Z[rows, thetas.argmax(axis=1)].sum(axis=1),
        "pulls": pulls,
        "curve_sum": curve_sum,
        "curve_sq": curve_sq,
        "occupancy": occupancy,
        "count": R,
    }
    if trace:
        out["trace"] = [
            RunRecord(
                envs[i][0], ch_trace[i], z_trace[i], w_trace[i],
                loss=compute_loss(envs[i][0], pulls[i], T, B, free_slots_won=wins[i]),
            )
            for i in range(R)
        ]
    return out


def simulate_single_user(config: ExperimentConfig, replication: int = 0) -> RunRecord:
    """Trace of one single-user replication."""
    return _run_single_batch(config, [replication], trace=True)["trace"][0]


def _batches(config: ExperimentConfig) -> list[list[int]]:
    if config.multi_user or _theta_dependent(config):
        size = 1
    else:
        size = max(1, _BATCH_CELLS // max(config.block.n_slots, 1))
    reps = list(range(config.replications))
    return [reps[i : i + size] for i in range(0, len(reps), size)]


# -- multi-user -------------------------------------------------------------------


def make_population(config: ExperimentConfig, theta: ThetaVector) -> UserPopulation:
    n, K, T = config.block.n_channels, config.block.n_users, config.block.n_slots
    name = config.strategy
    if name == "symmetric-opt":
        return FixedMixedUsers(optimal_symmetric_strategy(theta, K), K, name)
    if name == "nash-tau":
        return FixedMixedUsers(nash_strategy(theta), K, name)
    if name == "rule2":
        return Rule2Users(n, K)
    if name == "rule3":
        return Rule3Users(n, K, T)
    raise ConfigError(f"{name} is not a multi-user strategy")


def simulate_multi_block(population: UserPopulation, theta: ThetaVector, realization: ChannelRealization,
                         uniforms: np.ndarray, backoff: np.ndarray, bits_per_slot: float = 1.0) -> RunRecord:
    """Run K users over one block.

    ``uniforms`` (K, T) drive the users' choices, ``backoff`` (T, K) are the
    contention waiting times. Users observe the sensed channel state whether
    or not they win the contention.
    """
    z = realization.z
    n, T = z.shape
    K = population.n_users
    population.start(uniforms)
    if population.static:
        choices = population.choices()
        key = choices + backoff  # backoff in [0, 1) orders users within a channel
        order = np.argsort(key, axis=1, kind="stable")
        ch_sorted = np.take_along_axis(choices, order, axis=1)
        first = np.ones_like(ch_sorted, dtype=bool)
        first[:, 1:] = ch_sorted[:, 1:] != ch_sorted[:, :-1]
        winners = np.full((T, n), -1, dtype=np.intp)
        t_idx, pos = np.nonzero(first)
        winners[t_idx, ch_sorted[t_idx, pos]] = order[t_idx, pos]
        winners[~z.T.astype(bool)] = -1
        outcomes = z.T[np.arange(T)[:, None], choices]
    else:
        choices = np.empty((T, K), dtype=np.intp)
        outcomes = np.empty((T, K), dtype=np.int8)
        winners = np.empty((T, n), dtype=np.intp)
        for j in range(T):
            ch = population.select(j + 1)
            zz = z[:, j]
            win, _ = resolve_slot(ch, zz, backoff[j])
            obs = zz[ch]
            population.observe(j + 1, ch, obs)
            choices[j], outcomes[j], winners[j] = ch, obs, win
    won = np.zeros((T, K))
    t_idx, c_idx = np.nonzero(winners >= 0)
    won[t_idx, winners[t_idx, c_idx]] = 1.0
    return RunRecord(theta, choices, outcomes, bits_per_slot * np.cumsum(won, axis=0), winners=winners)


def _run_multi_rep(config: ExperimentConfig, rep: int, trace: bool = False) -> dict:
    theta, real = replication_environment(config, rep)
    K, T, n, B = config.block.n_users, config.block.n_slots, config.block.n_channels, config.block.bits_per_slot
    uniforms = _user_uniforms(config, rep, K)
    backoff = StreamFactory(config.block.seed).stream(CONTENTION, rep).random((T, K))
    rec = simulate_multi_block(make_population(config, theta), theta, real, uniforms, backoff, B)
    z = real.z.T  # (T, N)
    th = theta.as_array()
    counts = np.zeros((T, n))
    np.add.at(counts, (np.repeat(np.arange(T), K), rec.choices.ravel()), 1.0)
    idle = counts == 0
    slot_loss = B * (z * idle).sum(axis=1)
    slot_expected = B * (th[None, :] * idle).sum(axis=1)
    cum = np.cumsum(slot_expected)
    out = {
        "throughput": np.array([rec.cumulative_w[-1].sum()]),
        "realized_loss": np.array([slot_loss.sum()]),
        "expected_loss": np.array([cum[-1]]),
        "available": np.array([B * z.sum()]),
        "curve_sum": cum,
        "curve_sq": cum**2,
        "occupancy": counts / K,
        "count": 1,
    }
    if trace:
        out["trace"] = [rec]
    return out


def simulate_multi_user(config: ExperimentConfig, replication: int = 0) -> RunRecord:
    """Trace of one multi-user replication."""
    return _run_multi_rep(config, replication, trace=True)["trace"][0]


# -- aggregation ------------------------------------------------------------------


@dataclass
class AggregateStats:
    config: ExperimentConfig
    summary: dict
    curve_mean: np.ndarray
    curve_stderr: np.ndarray | None
    occupancy: np.ndarray  # (T, N) mean fraction of users (or replications) per channel
    per_replication: dict


def _mean_se(x: np.ndarray) -> tuple[float, float | None]:
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    if len(x) < 2:
        return m, None
    return m, float(x.std(ddof=1) / math.sqrt(len(x)))


def _run_batch(args):
    config, reps = args
    if config.multi_user:
        return _run_multi_rep(config, reps[0])
    return _run_single_batch(config, reps)


def _execute(config: ExperimentConfig) -> list[dict]:
    jobs = [(config, b) for b in _batches(config)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_run_batch, jobs))
    results = []
    for i, job in enumerate(jobs):
        log.debug("batch %d/%d", i + 1, len(jobs))
        results.append(_run_batch(job))
    return results


def _aggregate(config: ExperimentConfig, parts: list[dict]) -> AggregateStats:
    R = config.replications
    T = config.block.n_slots
    curve_sum = np.zeros(T)
    curve_sq = np.zeros(T)
    occ = np.zeros_like(parts[0]["occupancy"])
    for part in parts:  # fixed order: deterministic reduction
        curve_sum += part["curve_sum"]
        curve_sq += part["curve_sq"]
        occ += part["occupancy"]
    mean = curve_sum / R
    stderr = None
    if R >= 2:
        var = np.maximum(curve_sq - R * mean**2, 0.0) / (R - 1)
        stderr = np.sqrt(var / R)
    scalar_keys = [k for k, v in parts[0].items() if isinstance(v, np.ndarray) and v.ndim == 1
                   and not k.startswith("curve")]
    per_rep = {k: np.concatenate([p[k] for p in parts]) for k in scalar_keys}
    if not config.multi_user:
        per_rep["pulls"] = np.concatenate([p["pulls"] for p in parts])
    summary = _summary(config, per_rep)
    return AggregateStats(config, summary, mean, stderr, occ / R, per_rep)


def _summary(config: ExperimentConfig, per_rep: dict) -> dict:
    b = config.block
    s = {
        "strategy": config.strategy,
        "channels": b.n_channels,
        "slots": b.n_slots,
        "users": b.n_users,
        "bits_per_slot": b.bits_per_slot,
        "seed": b.seed,
        "replications": config.replications,
    }
    for key in ("expected_loss", "realized_loss", "throughput"):
        m, se = _mean_se(per_rep[key])
        s[f"mean_{key}"] = m
        s[f"stderr_{key}"] = se
    if config.theta is not None:
        th = config.theta
        s["theta"] = list(th.values)
        if config.multi_user:
            K, T, B = b.n_users, b.n_slots, b.bits_per_slot
            if any(v > 0 for v in th.values):
                opt = optimal_symmetric_strategy(th, K)
                tau = nash_strategy(th)
                dc = decay_constants(th)
                s["lambda_star"] = opt.lam
                s["p_star"] = list(opt.p)
                s["tau"] = list(tau.p)
                s["c1"] = dc.c1
                s["c2"] = dc.c2
                s["theta_lstar"] = dc.theta_lstar
                s["Q"] = dc.Q
                if config.strategy in ("symmetric-opt", "nash-tau"):
                    p = opt if config.strategy == "symmetric-opt" else tau
                    s["formula_total_throughput"] = expected_total_throughput(th, p, K, T, B)
                    s["formula_centralized_loss"] = centralized_loss(th, p, K, T, B)
        else:
            s["lower_bound_coefficient"] = regret_lower_bound_coefficient(th, b.bits_per_slot)
            s["random_loss_rate"] = b.bits_per_slot * float(np.mean(th.best - th.as_array()))
    if not config.multi_user:
        s["mean_pulls"] = [float(x) for x in per_rep["pulls"].mean(axis=0)]
    return s


def run_single_user(config: ExperimentConfig) -> AggregateStats:
    if config.multi_user:
        raise ConfigError(f"{config.strategy} is a multi-user rule")
    return _aggregate(config, _execute(config))


def run_multi_user(config: ExperimentConfig) -> AggregateStats:
    if not config.multi_user:
        raise ConfigError(f"{config.strategy} is a single-user strategy")
    return _aggregate(config, _execute(config))


def run_experiment(config: ExperimentConfig) -> AggregateStats:
    return run_multi_user(config) if config.multi_user else run_single_user(config)


# -- output -----------------------------------------------------------------------


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".9g")


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def emit_results(stats: AggregateStats, path: str | os.PathLike, fmt_kind: str = "csv",
                 outputs: Sequence[str] = OUTPUT_KINDS) -> list[Path]:
    """Write loss-curve, occupancy and summary files into directory ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    T, n = stats.occupancy.shape
    se = stats.curve_stderr
    if "loss-curve" in outputs:
        if fmt_kind == "csv":
            p = out / "loss_curve.csv"
            with open(p, "w", newline="") as fh:
                fh.write("slot,mean_cumulative_loss,stderr\n")
                for j in range(T):
                    fh.write(f"{j + 1},{fmt(stats.curve_mean[j])},{fmt(None if se is None else se[j])}\n")
        else:
            p = out / "loss_curve.json"
            rows = [{"slot": j + 1, "mean_cumulative_loss": float(stats.curve_mean[j]),
                     "stderr": None if se is None else float(se[j])} for j in range(T)]
            p.write_text(json.dumps(rows, indent=1) + "\n")
        written.append(p)
    if "occupancy" in outputs:
        if fmt_kind == "csv":
            p = out / "occupancy.csv"
            with open(p, "w", newline="") as fh:
                fh.write("slot,channel,fraction\n")
                for j in range(T):
                    for i in range(n):
                        fh.write(f"{j + 1},{i + 1},{fmt(stats.occupancy[j, i])}\n")
        else:
            p = out / "occupancy.json"
            rows = [{"slot": j + 1, "channel": i + 1, "fraction": float(stats.occupancy[j, i])}
                    for j in range(T) for i in range(n)]
            p.write_text(json.dumps(rows, indent=1) + "\n")
        written.append(p)
    if "summary" in outputs:
        p = out / "summary.json"
        p.write_text(json.dumps(_json_safe(stats.summary), indent=2, sort_keys=True) + "\n")
        written.append(p)
    return written


def run_and_emit(config: ExperimentConfig) -> tuple[AggregateStats, list[Path]]:
    stats = run_experiment(config)
    files: list[Path] = []
    if config.output_path:
        files = emit_results(stats, config.output_path, config.format, config.outputs)
        if config.figures:
            from .plotting import render_report

            files += render_report(stats, config.output_path)
    return stats, files


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    block_keys = {"n_slots", "n_users", "seed", "n_channels", "bits_per_slot"}
    blk = {k: v for k, v in changes.items() if k in block_keys}
    rest = {k: v for k, v in changes.items() if k not in block_keys}
    block = replace(config.block, **blk) if blk else config.block
    return replace(config, block=block, **rest)
