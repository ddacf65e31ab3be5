"""
Adapt a meta-trained checkpoint to unseen environments.

    python manage.py meta_test --checkpoint runs/meta_train-.../checkpoints/seed0 --baselines dqn,sac
    python manage.py meta_test --checkpoint ... --dynamic
"""

from ...runner import meta_test_experiment
from ..base import ExperimentCommand, scenario_tasks


class Command(ExperimentCommand):
    help = "Meta-test a checkpoint with few-shot fine-tuning, or run the dynamic change schedule"
    default_seeds = 10

    def add_experiment_arguments(self, parser):
        parser.add_argument("--checkpoint", help="Checkpoint directory or meta_train run directory")
        parser.add_argument("--scenario", action="append", help="Test scenario (repeatable); overrides --preset")
        parser.add_argument("--baselines", help="Comma-separated scratch baselines to compare: dqn,sac")
        parser.add_argument("--zero-shot", action="store_true", help="No fine-tuning updates")
        parser.add_argument("--dynamic", action="store_true", help="Run the scenario change schedule")
        parser.add_argument("--slots", type=int, help="Slots of a dynamic run")
        parser.add_argument("--nu", type=float, help="Fairness factor for every task")

    def overrides(self, options):
        baselines = options.get("baselines")
        return {
            "checkpoint": options.get("checkpoint"),
            "tasks": scenario_tasks(options),
            "baselines": [b.strip() for b in baselines.split(",") if b.strip()] if baselines else None,
            "zero_shot": options.get("zero_shot") or None,
            "dynamic": options.get("dynamic") or None,
            "slots": options.get("slots"),
            "hyperparameters": {"nu": options.get("nu")},
        }

    def run(self, config, progress):
        return meta_test_experiment(config, progress=progress)
