import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import yaml
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from pydantic import ValidationError

from channel.environment import EnvConfig
from harness.exceptions import MissingCheckpointError
from harness.policies import OnlineResult
from learner.agent import GmaAgent
from learner.config import LearnerConfig
from learner.networks import child_seeds

from .exceptions import ExperimentConfigError, UnknownPresetError
from .presets import resolve_dynamic, resolve_tasks
from .records import CsvAppender, curve_rows, read_rows, run_directory, slugify
from .runner import resolve_checkpoint, run_seeds
from .serializers import ExperimentConfig


SMALL = {
    "L": 4,
    "Z": 20,
    "M": 2,
    "latentDim": 2,
    "hidden": 8,
    "N_E": 8,
    "U": 10,
    "bufferCap": 100,
    "N_c": 20,
    "episodes": 1,
    "updateCalls": 1,
    "N_c_test": 10,
    "T_ft": [40, 50],
    "testSlots": 60,
    "fewShotStart": 40,
}


def _write_config(directory: str, data: dict, name: str = "experiment.json") -> str:
    path = Path(directory) / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _run(command: str, **options) -> dict:
    call_command(command, no_progress=True, stdout=StringIO(), **options)
    matches = list(Path(options["out"]).glob(f"{command}-*"))
    assert len(matches) == 1, matches
    return json.loads((matches[0] / "run.json").read_text(encoding="utf-8"))


def _result(label: str, values: list) -> OnlineResult:
    records = [
        {"t": t + 1, "task": label, "S0": s0, "SN": sn, "sum": s0 + sn, "jain": jain}
        for t, (s0, sn, jain) in enumerate(values)
    ]
    return OnlineResult(label=label, records=records)


class ExperimentConfigTests(SimpleTestCase):
    def test_defaults(self):
        hyper = ExperimentConfig().hyperparameters
        self.assertEqual(hyper.env_config().state_dim, 100)
        learner = hyper.learner_config()
        self.assertEqual((learner.latent_dim, learner.num_experts, learner.hidden_size), (6, 3, 64))
        self.assertEqual(learner.lr, 0.003)
        self.assertEqual(learner.eta, 0.005)
        schedule = hyper.schedule()
        self.assertEqual(schedule.collect_steps, 200)
        self.assertEqual(schedule.batch_size, 64)
        self.assertEqual(schedule.context_size, 150)
        self.assertEqual(schedule.replay_capacity, 1000)
        self.assertEqual(schedule.finetune_steps, (200, 250, 300))
        self.assertEqual(schedule.warmup_steps, 150)

    def test_symbolic_names(self):
        config = ExperimentConfig.model_validate(
            {"hyperparameters": {"L": 10, "Z": 100, "M": 1, "N_E": 32, "U": 50, "beta": 0.5, "nu": 1.0}}
        )
        hyper = config.hyperparameters
        self.assertEqual(hyper.history_length, 10)
        self.assertEqual(hyper.throughput_window, 100)
        self.assertEqual(hyper.num_experts, 1)
        self.assertEqual(hyper.batch_size, 32)
        self.assertEqual(hyper.context_size, 50)
        self.assertEqual(hyper.learner_config().kl_weight, 0.5)

    def test_unknown_keys_rejected(self):
        with self.assertRaises(ValidationError):
            ExperimentConfig.model_validate({"bogus": 1})
        with self.assertRaises(ValidationError):
            ExperimentConfig.model_validate({"hyperparameters": {"K": 3}})

    def test_invalid_values_rejected(self):
        with self.assertRaises(ValidationError):
            ExperimentConfig.model_validate({"tasks": ["csma:3"]})
        with self.assertRaises(ValidationError):
            ExperimentConfig.model_validate({"hyperparameters": {"nu": 1.5}})
        with self.assertRaises(ValidationError):
            ExperimentConfig.model_validate({"policy": "sometimes"})

    def test_scenarios_are_normalised(self):
        config = ExperimentConfig.model_validate({"tasks": ["TDMA:2 + qaloha:0.10", {"scenario": "fwaloha:2", "nu": 0.5}]})
        self.assertEqual(config.tasks[0].scenario, "tdma:2+qaloha:0.1")
        self.assertEqual(config.tasks[1].nu, 0.5)

    def test_round_trip_keeps_hash(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "experiment.yaml"
            path.write_text(yaml.safe_dump({"preset": "testset-6", "seeds": 3, "hyperparameters": SMALL}))
            first = ExperimentConfig.load(path)
            dumped = _write_config(tmp, first.dump(), "dumped.json")
            second = ExperimentConfig.load(dumped)
        self.assertEqual(first.dump(), second.dump())
        self.assertEqual(first.config_hash(), second.config_hash())
        self.assertEqual(len(first.config_hash()), 64)

    def test_hash_ignores_location(self):
        base = ExperimentConfig()
        self.assertEqual(base.config_hash(), base.with_overrides(seed=7, output_dir="/tmp/x").config_hash())
        self.assertNotEqual(base.config_hash(), base.with_overrides(hyperparameters={"gamma": 0.5}).config_hash())

    def test_overrides_skip_none(self):
        config = ExperimentConfig.model_validate({"seeds": 4, "hyperparameters": {"nu": 0.3}})
        updated = config.with_overrides(seeds=None, preset="trainset-8", hyperparameters={"nu": None, "episodes": 2})
        self.assertEqual(updated.seeds, 4)
        self.assertEqual(updated.preset, "trainset-8")
        self.assertEqual(updated.hyperparameters.nu, 0.3)
        self.assertEqual(updated.hyperparameters.episodes, 2)

    def test_unreadable_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            broken = Path(tmp) / "broken.json"
            broken.write_text("{not json")
            listing = Path(tmp) / "list.yaml"
            listing.write_text("- 1\n- 2\n")
            with self.assertRaises(ExperimentConfigError):
                ExperimentConfig.load(broken)
            with self.assertRaises(ExperimentConfigError):
                ExperimentConfig.load(listing)
            with self.assertRaises(ExperimentConfigError):
                ExperimentConfig.load(Path(tmp) / "missing.json")

    def test_task_resolution(self):
        config = ExperimentConfig.model_validate({
            "tasks": ["tdma:5", {"scenario": "qaloha:0.8", "nu": 1.0}],
            "hyperparameters": {"nu": 0.5},
        })
        tasks = config.task_specs()
        self.assertEqual([t.nu for t in tasks], [0.5, 1.0])
        self.assertEqual(len(ExperimentConfig().task_specs("testset-6")), 6)
        with self.assertRaises(ExperimentConfigError):
            ExperimentConfig().task_specs()

    def test_seed_list(self):
        self.assertEqual(ExperimentConfig(seed=3, seeds=4).seed_list(), [3, 4, 5, 6])


class PresetTests(SimpleTestCase):
    def test_training_set(self):
        labels = [t.label for t in resolve_tasks("trainset-8")]
        self.assertEqual(labels, [
            "TDMA(1)", "TDMA(5)", "TDMA(9)",
            "q-ALOHA(0.1)", "q-ALOHA(0.7)",
            "FW-ALOHA(3)", "FW-ALOHA(4)",
            "EB-ALOHA(2)",
        ])

    def test_diversity_set_four(self):
        self.assertEqual(
            sorted(t.label for t in resolve_tasks("diversity-set-4")),
            sorted(t.label for t in resolve_tasks("trainset-8")),
        )
        self.assertEqual(len(resolve_tasks("diversity-set-1")), 8)
        self.assertEqual(len(resolve_tasks("diversity-set-2")), 8)
        self.assertEqual(len(resolve_tasks("diversity-set-3")), 8)

    def test_size_sweeps_follow_insertion_order(self):
        self.assertEqual([t.label for t in resolve_tasks("qaloha-size-3")], ["q-ALOHA(0.1)", "q-ALOHA(0.7)", "q-ALOHA(0.5)"])
        self.assertEqual([t.label for t in resolve_tasks("tdma-size-2")], ["TDMA(1)", "TDMA(9)"])
        self.assertEqual(len(resolve_tasks("tdma-size-5")), 5)

    def test_test_set(self):
        labels = [t.label for t in resolve_tasks("testset-6")]
        self.assertEqual(len(labels), 6)
        self.assertIn("TDMA(3)+q-ALOHA(0.6)", labels)

    def test_fairness_factor_applies_to_every_task(self):
        self.assertTrue(all(t.nu == 0.7 for t in resolve_tasks("trainset-8", nu=0.7)))

    def test_fairness_factor_defaults_to_zero(self):
        self.assertTrue(all(t.nu == 0.0 for t in resolve_tasks("testset-6")))
        self.assertTrue(all(t.nu == 0.0 for t in resolve_tasks("testset-6", nu=0.0)))
        segments, _ = resolve_dynamic("dynamic-4", nu=1.0)
        self.assertTrue(all(s.task.nu == 1.0 for s in segments))
        segments, _ = resolve_dynamic("dynamic-4")
        self.assertTrue(all(s.task.nu == 0.0 for s in segments))

    def test_change_schedule(self):
        segments, slots = resolve_dynamic("dynamic-4")
        self.assertEqual([s.start for s in segments], [0, 2000, 4000, 6000])
        self.assertEqual(segments[1].task.label, "TDMA(2)+q-ALOHA(0.1)")
        self.assertEqual(slots, 8000)

    def test_unknown_presets(self):
        with self.assertRaises(UnknownPresetError):
            resolve_tasks("trainset-9")
        with self.assertRaises(UnknownPresetError):
            resolve_dynamic("testset-6")


class RecordTests(SimpleTestCase):
    def test_slugify(self):
        self.assertEqual(slugify("TDMA(2)+q-ALOHA(0.1)"), "TDMA-2_q-ALOHA-0.1")

    def test_run_directory_name(self):
        config = ExperimentConfig(seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            directory = run_directory(tmp, "oracle", config)
            self.assertTrue(directory.is_dir())
        self.assertEqual(directory.name, f"oracle-{config.config_hash()[:12]}-seed2")

    def test_curve_statistics_skip_undefined_jain(self):
        runs = [
            _result("A", [(0.2, 0.2, 1.0), (0.0, 0.0, None)]),
            _result("A", [(0.4, 0.0, 0.5), (0.1, 0.0, 0.5)]),
        ]
        rows = curve_rows(runs)
        self.assertEqual(len(rows), 2)
        self.assertAlmostEqual(rows[0]["S0_mean"], 0.3)
        self.assertAlmostEqual(rows[0]["S0_std"], 0.1)
        self.assertAlmostEqual(rows[0]["jain_mean"], 0.75)
        self.assertAlmostEqual(rows[1]["jain_mean"], 0.5)
        self.assertAlmostEqual(rows[1]["jain_std"], 0.0)

    def test_csv_appender(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "rows.csv"
            with CsvAppender(path, ["a", "b"]) as out:
                out.write({"a": 1, "b": None})
                out.write({"a": np.float64(0.5), "b": float("nan"), "c": "ignored"})
            rows = read_rows(path)
        self.assertEqual(rows, [{"a": "1", "b": ""}, {"a": "0.5", "b": ""}])


class RunSeedsTests(SimpleTestCase):
    def test_results_follow_seed_order(self):
        seeds = [5, 1, 4, 2]
        self.assertEqual(run_seeds(lambda s: s * 10, seeds, workers=3), [50, 10, 40, 20])
        self.assertEqual(run_seeds(lambda s: s * 10, seeds, workers=1), [50, 10, 40, 20])

    def test_missing_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(MissingCheckpointError):
                resolve_checkpoint(tmp)
        with self.assertRaises(MissingCheckpointError):
            resolve_checkpoint(None)


class SimulateCommandTests(SimpleTestCase):
    def test_lone_tdma_without_agent(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = _run("simulate", scenario=["tdma:5"], policy="never", slots=10000, out=tmp)
        self.assertEqual(run["summary"]["TDMA(5)"]["sum"], 0.1)

    def test_always_transmitting_collides_once_per_frame(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = _run("simulate", scenario=["tdma:5"], policy="always", slots=1000, out=tmp)
        summary = run["summary"]["TDMA(5)"]
        self.assertAlmostEqual(summary["sum"], 0.9)
        self.assertAlmostEqual(summary["S0"], 0.9)

    def test_oracle_policy(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = _run("simulate", scenario=["tdma:3+qaloha:0.6"], policy="oracle", slots=20000, out=tmp)
        self.assertAlmostEqual(run["summary"]["TDMA(3)+q-ALOHA(0.6)"]["sum"], 0.58, delta=0.015)

    def test_trace_and_metrics_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = _run("simulate", scenario=["qaloha:0.5"], policy="random", slots=50, out=tmp)
            directory = Path(run["directory"])
            trace = [json.loads(line) for line in (directory / "trace-q-ALOHA-0.5.jsonl").read_text().splitlines()]
            metrics = read_rows(directory / "metrics-q-ALOHA-0.5.csv")
            config = json.loads((directory / "config.json").read_text())
        self.assertEqual(len(trace), 50)
        self.assertEqual(len(metrics), 50)
        self.assertEqual(set(trace[0]), {"t", "agentTx", "obs", "successNode"})
        self.assertEqual(config["policy"], "random")
        self.assertEqual(run["config_hash"], ExperimentConfig.model_validate(config).config_hash())

    def test_zero_slots(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = _run("simulate", scenario=["tdma:5"], slots=0, out=tmp)
            trace = Path(run["directory"]) / "trace-TDMA-5.jsonl"
            self.assertEqual(trace.read_text(), "")
        self.assertEqual(run["summary"]["TDMA(5)"]["slots"], 0)

    def test_reruns_are_identical(self):
        contents = []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as tmp:
                run = _run("simulate", scenario=["fwaloha:2"], policy="random", slots=300, seed=4, out=tmp)
                contents.append((Path(run["directory"]) / "metrics-FW-ALOHA-2.csv").read_bytes())
        self.assertEqual(contents[0], contents[1])

    def test_bad_input_exits_with_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CommandError):
                call_command("simulate", scenario=["bogus:1"], out=tmp, stdout=StringIO())
            with self.assertRaises(CommandError):
                call_command("simulate", preset="nope", out=tmp, stdout=StringIO())
            path = _write_config(tmp, {"bogus": 1})
            with self.assertRaises(CommandError):
                call_command("simulate", config=path, out=tmp, stdout=StringIO())


class OracleCommandTests(SimpleTestCase):
    def test_oracle_table(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = _run("oracle", scenario=["tdma:5", "qaloha:0.8", "fwaloha:2", "ebaloha:8:5+ebaloha:8:5"], out=tmp)
            rows = read_rows(Path(run["directory"]) / "oracle.csv")
        self.assertEqual([r["scenario"] for r in rows], ["TDMA(5)", "q-ALOHA(0.8)", "FW-ALOHA(2)", "EB-ALOHA(8:5)+EB-ALOHA(8:5)"])
        self.assertAlmostEqual(float(rows[0]["value"]), 1.0)
        self.assertAlmostEqual(float(rows[1]["value"]), 0.8)
        self.assertEqual(rows[0]["kind"], "analytic")
        self.assertEqual(rows[2]["kind"], "valueIteration-genie")
        self.assertEqual(rows[3]["kind"], "unsupported")
        self.assertEqual(rows[3]["value"], "")


class LearningCommandTests(SimpleTestCase):
    """meta_train, meta_test and export_latents on tiny networks."""

    def _train(self, tmp: str, **options) -> dict:
        config = _write_config(tmp, {"tasks": ["tdma:5", "qaloha:0.7"], "hyperparameters": SMALL}, "train.json")
        return _run("meta_train", config=config, out=str(Path(tmp) / "train"), **options)

    def _config(self, tmp: str, **extra) -> str:
        return _write_config(tmp, {"hyperparameters": SMALL, **extra}, "test.json")

    def test_zero_episodes_checkpoints_initialisation(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = self._train(tmp, episodes=0)
            loaded = GmaAgent.load(run["checkpoints"][0])
        env = EnvConfig(history_length=4, throughput_window=20)
        learner = LearnerConfig(latent_dim=2, num_experts=2, hidden_size=8)
        fresh = GmaAgent(env.state_dim, env.context_dim, learner, seed=child_seeds(0, 3)[0])
        for name, store in fresh.stores().items():
            self.assertEqual(loaded.stores()[name].fingerprint(), store.fingerprint(), msg=name)

    def test_training_writes_curves_and_losses(self):
        with tempfile.TemporaryDirectory() as tmp:
            run = self._train(tmp)
            directory = Path(run["directory"])
            curves = read_rows(directory / "curves-seed0.csv")
            losses = read_rows(directory / "losses-seed0.csv")
        self.assertEqual([r["task"] for r in curves], ["TDMA(5)", "q-ALOHA(0.7)"])
        self.assertEqual(len(losses), 1)
        self.assertEqual(run["seeds"], [0])
        self.assertIn("TDMA(5)", run["summary"])
        self.assertEqual(run["summary"]["TDMA(5)"]["oracle"], 1.0)

    def test_meta_test_with_baseline(self):
        with tempfile.TemporaryDirectory() as tmp:
            train = self._train(tmp)
            run = _run(
                "meta_test",
                config=self._config(tmp),
                checkpoint=train["directory"],
                scenario=["tdma:5"],
                seeds=2,
                baselines="dqn",
                out=str(Path(tmp) / "test"),
            )
            directory = Path(run["directory"])
            curve = read_rows(directory / "curve-TDMA-5.csv")
            baseline = read_rows(directory / "curve-TDMA-5-dqn.csv")
        self.assertEqual(len(curve), 60)
        self.assertEqual(len(baseline), 60)
        self.assertEqual(set(curve[0]), {"t", "task", "S0_mean", "S0_std", "SN_mean", "SN_std", "sum_mean", "sum_std", "jain_mean", "jain_std"})
        summary = run["summary"]["TDMA(5)"]
        self.assertTrue(summary["encoderFrozen"])
        self.assertEqual(summary["updateSteps"], [40, 50])
        self.assertEqual(summary["oracle"], 1.0)
        self.assertIn("dqn", summary["baselines"])
        self.assertEqual(run["seeds"], [0, 1])

    def test_meta_test_seeds_from_config_and_zero_shot(self):
        with tempfile.TemporaryDirectory() as tmp:
            train = self._train(tmp)
            config = self._config(tmp, seeds=1)
            run = _run("meta_test", config=config, checkpoint=train["checkpoints"][0], scenario=["qaloha:0.8"], zero_shot=True, out=str(Path(tmp) / "test"))
        self.assertEqual(run["seeds"], [0])
        self.assertEqual(run["summary"]["q-ALOHA(0.8)"]["updateSteps"], [])

    def test_meta_test_without_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CommandError):
                call_command("meta_test", config=self._config(tmp), checkpoint=tmp, out=tmp, stdout=StringIO())

    def test_dynamic_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            train = self._train(tmp)
            run = _run("meta_test", config=self._config(tmp), checkpoint=train["directory"], dynamic=True, slots=2100, seeds=1, out=str(Path(tmp) / "test"))
            rows = read_rows(Path(run["directory"]) / "dynamic.csv")
        self.assertEqual(len(rows), 2100)
        self.assertEqual(rows[1999]["task"], "TDMA(4)")
        self.assertEqual(rows[2000]["task"], "TDMA(2)+q-ALOHA(0.1)")
        segments = run["summary"]["segments"]
        self.assertEqual([s["start"] for s in segments], [0, 2000, 4000, 6000])
        self.assertAlmostEqual(segments[0]["oracle"], 1.0)

    def test_latent_export(self):
        exports = []
        with tempfile.TemporaryDirectory() as tmp:
            train = self._train(tmp, episodes=0, experts=1)
            for i in range(2):
                run = _run(
                    "export_latents",
                    config=self._config(tmp),
                    checkpoint=train["directory"],
                    scenario=["tdma:5", "qaloha:0.8"],
                    rollouts=3,
                    out=str(Path(tmp) / f"latents{i}"),
                )
                exports.append((Path(run["directory"]) / "latents.csv").read_bytes())
            rows = read_rows(Path(run["directory"]) / "latents.csv")
        self.assertEqual(exports[0], exports[1])
        self.assertEqual(len(rows), 6)
        self.assertEqual(set(rows[0]), {"env", "rollout", "z0", "z1", "w0"})
        self.assertTrue(all(float(r["w0"]) == 1.0 for r in rows))
