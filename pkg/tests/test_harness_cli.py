import csv
import json
import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from cogmac.cli import main
from cogmac.planning import GittinsTruncationWarning
from cogmac.core_model import BetaPrior, BlockConfig, GridPrior, ThetaVector
from cogmac.harness import (
    ConfigError,
    ExperimentConfig,
    emit_results,
    load_config,
    replication_environment,
    run_and_emit,
    run_experiment,
    simulate_multi_user,
    simulate_single_user,
)

THETA = ThetaVector([0.9, 0.5])


def single(strategy="ucb-rule1", T=200, R=5, seed=1, **kw):
    return ExperimentConfig(BlockConfig(2, T, seed=seed), strategy, theta=THETA, replications=R, **kw)


def write_ini(path, text):
    path.write_text(text)
    return str(path)


class TestConfig:
    def test_load_and_override(self, tmp_path):
        p = write_ini(tmp_path / "e.ini", """
[block]
slots = 500
seed = 4
[theta]
values = 0.9, 0.5
[strategy]
name = random
[run]
replications = 3
format = json
""")
        cfg = load_config(p)
        assert (cfg.block.n_slots, cfg.block.seed, cfg.strategy, cfg.replications, cfg.format) == (
            500, 4, "random", 3, "json")
        cfg = load_config(p, {"slots": 50, "seed": 9, "strategy": "myopic", "theta": "0.2,0.4"})
        assert (cfg.block.n_slots, cfg.block.seed, cfg.strategy) == (50, 9, "myopic")
        assert cfg.theta.values == (0.2, 0.4)

    def test_priors(self, tmp_path):
        beta = load_config(write_ini(tmp_path / "b.ini", """
[theta]
prior = beta
alpha = 1, 2
beta = 1, 1
[strategy]
name = gittins
"""))
        assert beta.prior == BetaPrior([1, 2], [1, 1])
        grid = load_config(write_ini(tmp_path / "g.ini", """
[theta]
prior = grid
support = 0.2 0.8; 0.8 0.2
weights = 0.5, 0.5
[strategy]
name = myopic
"""))
        assert grid.prior == GridPrior([[0.2, 0.8], [0.8, 0.2]], [0.5, 0.5])
        point = load_config(write_ini(tmp_path / "p.ini", """
[theta]
prior = point
values = 0.9, 0.5
[strategy]
name = optimal-dp
[block]
slots = 3
"""))
        assert point.prior == GridPrior.point_mass([0.9, 0.5])

    @pytest.mark.parametrize("overrides,match", [
        ({}, "no theta"),
        ({"theta": "0.5,0.4", "strategy": "bogus"}, "unknown strategy"),
        ({"theta": "0.5,0.4", "strategy": "rule2"}, "users >= 2"),
        ({"theta": "0.5,0.4", "strategy": "random", "users": 3}, "single-user"),
        ({"theta": "0.5,0.4", "strategy": "random", "replications": 0}, "replications"),
        ({"theta": "0.5,1.4", "strategy": "random"}, "theta"),
    ])
    def test_validation(self, overrides, match):
        with pytest.raises(ConfigError, match=match):
            load_config(None, overrides)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.ini")


class TestRunSingleUser:
    def test_optimal_dp_known_theta(self):
        cfg = ExperimentConfig(BlockConfig(2, 3, seed=5), "optimal-dp", prior=GridPrior.point_mass([0.9, 0.5]))
        stats = run_experiment(cfg)
        _, real = replication_environment(cfg, 0)
        assert stats.summary["mean_throughput"] == real.z[0].sum()
        assert stats.summary["stderr_throughput"] is None

    def test_random_closed_form(self):
        s = run_experiment(single("random", T=10**4, R=20)).summary
        assert abs(s["mean_expected_loss"] / 10**4 - 0.2) < 0.01
        assert s["random_loss_rate"] == pytest.approx(0.2)

    @pytest.mark.parametrize("strategy", ["ucb-rule1", "random", "myopic", "stay-winner-rr", "stay-winner-rand",
                                          "one-known"])
    def test_accounting_identity(self, strategy):
        stats = run_experiment(single(strategy, T=300, R=6, seed=3))
        pr = stats.per_replication
        assert np.allclose(pr["throughput"] + pr["realized_loss"], 300 * 0.9)
        assert np.all(pr["throughput"] <= 300)
        assert np.all(pr["pulls"].sum(axis=1) == 300)

    def test_common_random_numbers(self):
        a = simulate_single_user(single("ucb-rule1", seed=8), 2)
        b = simulate_single_user(single("random", seed=8), 2)
        _, real = replication_environment(single(seed=8), 2)
        for rec in (a, b):
            assert np.array_equal(rec.outcomes, real.z[rec.choices, np.arange(200)])

    def test_trace_invariants(self):
        rec = simulate_single_user(single("stay-winner-rand"))
        assert np.all(np.diff(rec.cumulative_w) >= 0) and rec.cumulative_w[-1] <= 200
        assert rec.loss.realized_loss == pytest.approx(200 * 0.9 - rec.cumulative_w[-1])

    def test_batching_does_not_change_results(self, monkeypatch):
        import cogmac.harness as h

        full = run_experiment(single("stay-winner-rand", T=100, R=7)).per_replication["expected_loss"]
        monkeypatch.setattr(h, "_BATCH_CELLS", 200)
        split = run_experiment(single("stay-winner-rand", T=100, R=7)).per_replication["expected_loss"]
        assert np.array_equal(full, split)

    def test_prior_strategies(self):
        for strategy, params in [("gittins", {"discount": "0.9", "truncation": "60", "tolerance": "0.01"}),
                                 ("one-known", {"theta2": "0.6"}), ("myopic", {})]:
            cfg = ExperimentConfig(BlockConfig(2, 40, seed=2), strategy, prior=BetaPrior.uniform(2),
                                   replications=4, strategy_params=params)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", GittinsTruncationWarning)
                s = run_experiment(cfg).summary
            assert 0 <= s["mean_throughput"] <= 40


class TestRunMultiUser:
    def test_symmetric_opt_rate(self):
        cfg = ExperimentConfig(BlockConfig(2, 10**4, n_users=2, seed=3), "symmetric-opt",
                               theta=ThetaVector([0.8, 0.4]), replications=20)
        s = run_experiment(cfg).summary
        assert abs(s["mean_throughput"] / 10**4 - 0.9333) < 0.01
        assert s["lambda_star"] == pytest.approx(0.533333, abs=1e-6)

    @pytest.mark.parametrize("strategy", ["nash-tau", "rule2", "rule3"])
    def test_multi_user_accounting(self, strategy):
        cfg = ExperimentConfig(BlockConfig(3, 200, n_users=4, seed=6), strategy,
                               theta=ThetaVector([0.6, 0.3, 0.8]), replications=3)
        pr = run_experiment(cfg).per_replication
        assert np.allclose(pr["throughput"] + pr["realized_loss"], pr["available"])

    def test_environment_matches_single_user(self):
        cfg = ExperimentConfig(BlockConfig(2, 100, n_users=3, seed=7), "rule2", theta=THETA)
        rec = simulate_multi_user(cfg)
        _, real = replication_environment(cfg, 0)
        assert np.array_equal(rec.outcomes, real.z.T[np.arange(100)[:, None], rec.choices])
        _, real1 = replication_environment(single(seed=7, T=100), 0)
        assert np.array_equal(real.z, real1.z)


class TestEmit:
    def test_csv_schema(self, tmp_path):
        cfg = ExperimentConfig(BlockConfig(2, 50, n_users=2, seed=1), "symmetric-opt",
                               theta=ThetaVector([0.8, 0.4]), replications=4)
        stats = run_experiment(cfg)
        emit_results(stats, tmp_path)
        rows = list(csv.DictReader(open(tmp_path / "loss_curve.csv")))
        assert list(rows[0]) == ["slot", "mean_cumulative_loss", "stderr"]
        assert rows[0]["slot"] == "1" and len(rows) == 50
        occ = list(csv.DictReader(open(tmp_path / "occupancy.csv")))
        assert list(occ[0]) == ["slot", "channel", "fraction"] and len(occ) == 100
        assert (occ[0]["channel"], occ[1]["channel"]) == ("1", "2")
        summary = json.loads((tmp_path / "summary.json").read_text())
        for key in ("c1", "c2", "lambda_star", "p_star", "tau", "mean_throughput", "stderr_throughput"):
            assert key in summary
        assert summary["lambda_star"] == pytest.approx(0.533333, abs=1e-6)

    def test_nine_significant_digits(self, tmp_path):
        stats = run_experiment(single("random", T=30, R=3))
        emit_results(stats, tmp_path)
        for row in csv.DictReader(open(tmp_path / "loss_curve.csv")):
            for v in (row["mean_cumulative_loss"], row["stderr"]):
                assert len(v.replace(".", "").replace("-", "").lstrip("0").split("e")[0]) <= 9

    def test_json_round_trip(self, tmp_path):
        stats = run_experiment(single("ucb-rule1", T=40, R=3))
        emit_results(stats, tmp_path, "json")
        back = json.loads((tmp_path / "summary.json").read_text())
        for k, v in stats.summary.items():
            if isinstance(v, float):
                assert back[k] == v
        curve = json.loads((tmp_path / "loss_curve.json").read_text())
        assert curve[0]["slot"] == 1 and curve[-1]["mean_cumulative_loss"] == stats.curve_mean[-1]

    def test_single_replication_has_no_stderr(self, tmp_path):
        stats = run_experiment(single("random", T=10, R=1))
        emit_results(stats, tmp_path)
        rows = list(csv.DictReader(open(tmp_path / "loss_curve.csv")))
        assert rows[3]["stderr"] == ""
        assert json.loads((tmp_path / "summary.json").read_text())["stderr_expected_loss"] is None

    def test_selected_outputs(self, tmp_path):
        stats = run_experiment(single("random", T=10, R=2))
        files = emit_results(stats, tmp_path, outputs=("summary",))
        assert [f.name for f in files] == ["summary.json"]

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            emit_results(run_experiment(single("random", T=5, R=2)), blocker / "sub")


class TestDeterminism:
    def _files(self, cfg, out):
        run_and_emit(replace(cfg, output_path=str(out), figures=True))
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    @pytest.mark.parametrize("cfg", [
        single("stay-winner-rand", T=300, R=10, seed=5),
        ExperimentConfig(BlockConfig(4, 300, n_users=6, seed=5), "rule3",
                         theta=ThetaVector([0.9, 0.7, 0.5, 0.3]), replications=2),
    ])
    def test_byte_identical(self, cfg, tmp_path):
        a = self._files(cfg, tmp_path / "a")
        b = self._files(cfg, tmp_path / "b")
        assert set(a) == {"loss_curve.csv", "occupancy.csv", "summary.json", "loss_curve.png", "occupancy.png"}
        assert a == b

    def test_workers_do_not_change_output(self, tmp_path):
        cfg = single("ucb-rule1", T=500, R=12, seed=2)
        a = self._files(cfg, tmp_path / "a")
        b = self._files(replace(cfg, workers=2), tmp_path / "b")
        assert a["loss_curve.csv"] == b["loss_curve.csv"] and a["summary.json"] == b["summary.json"]


class TestCli:
    def test_plan_dp(self, capsys):
        assert main(["plan", "dp", "--alpha", "1,1", "--beta", "1,1", "--horizon", "2"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["value"] == pytest.approx(13 / 12) and out["first_action"] == 1

    def test_plan_stopping(self, capsys):
        assert main(["plan", "stopping", "--horizon", "2"]) == 0
        assert json.loads(capsys.readouterr().out)["index"] == pytest.approx(5 / 9)

    def test_plan_gittins(self, capsys):
        assert main(["plan", "gittins", "--state", "1,1", "--state", "2,1"]) == 0
        entries = json.loads(capsys.readouterr().out)["entries"]
        assert entries[0]["index"] == pytest.approx(0.7028891937679764, abs=1e-9)
        assert entries[1]["index"] > entries[0]["index"]

    def test_plan_gittins_table(self, tmp_path):
        out = tmp_path / "g.json"
        assert main(["plan", "gittins", "--table", "--truncation", "40", "--tolerance", "0.01",
                     "--max-sum", "5", "--json-out", str(out)]) == 0
        assert len(json.loads(out.read_text())["entries"]) == 10

    def test_solve(self, capsys):
        assert main(["solve", "--theta", "0.8,0.4", "--users", "2"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["p_star"] == pytest.approx([2 / 3, 1 / 3], abs=1e-9)
        assert out["lambda_star"] == pytest.approx(8 / 15, abs=1e-9)
        assert out["c1"] == math.log(2) and out["c2"] == pytest.approx(0.405465, abs=1e-6)

    def test_solve_single_channel(self, capsys):
        assert main(["solve", "--theta", "0.7", "--users", "4"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["c1"] is None and out["Q"] == 1

    def test_sim_with_config_and_flags(self, tmp_path, capsys):
        ini = write_ini(tmp_path / "e.ini", "[theta]\nvalues = 0.9, 0.5\n[strategy]\nname = random\n[block]\nslots = 20\n")
        out = tmp_path / "out"
        assert main(["sim", "--config", ini, "--slots", "30", "--replications", "3", "--seed", "2",
                     "--out", str(out), "--format", "json", "--figures"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["slots"] == 30 and summary["replications"] == 3
        assert {p.name for p in out.iterdir()} == {"loss_curve.json", "occupancy.json", "summary.json",
                                                   "loss_curve.png", "occupancy.png"}

    def test_sim_csv_output(self, tmp_path):
        out = tmp_path / "o"
        assert main(["-q", "sim", "--strategy", "nash-tau", "--theta", "0.8,0.4", "--users", "5",
                     "--slots", "40", "--replications", "2", "--out", str(out)]) == 0
        assert (out / "loss_curve.csv").read_text().splitlines()[1].startswith("1,")

    @pytest.mark.parametrize("argv,code,kind", [
        (["sim", "--strategy", "bogus"], 2, "UsageError"),
        (["sim", "--strategy", "random"], 2, "ConfigError"),
        (["sim", "--strategy", "random", "--theta", "0.5,2"], 2, "ConfigError"),
        (["plan", "dp", "--alpha", "1,1,1", "--beta", "1,1,1", "--horizon", "40", "--budget", "10"], 3,
         "PlanningBudgetError"),
        (["solve", "--theta", "0,0", "--users", "3"], 2, "NoOpportunityError"),
        (["verify", "--only", "99"], 2, "UsageError"),
        ([], 2, "UsageError"),
    ])
    def test_errors(self, argv, code, kind, capsys):
        assert main(argv) == code
        err = capsys.readouterr().err.strip().splitlines()[-1]
        parsed = json.loads(err)
        assert parsed["error"] == kind and parsed["message"]

    def test_unwritable_out(self, tmp_path, capsys):
        blocker = tmp_path / "f"
        blocker.write_text("x")
        assert main(["sim", "--strategy", "random", "--theta", "0.5,0.4", "--slots", "5",
                     "--out", str(blocker / "x")]) == 4
        assert json.loads(capsys.readouterr().err.strip())["error"] == "OSError"

    def test_verify_subset(self, tmp_path, capsys):
        assert main(["verify", "--only", "4,9", "--out", str(tmp_path)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("[PASS]  4") and lines[1].startswith("[PASS]  9")
        assert lines[-1] == "2/2 checks passed"
        assert len(json.loads((tmp_path / "verify.json").read_text())) == 2
